//! Convolutional variational auto-encoder used to learn an unsupervised
//! latent representation of sketch / edge-map corpora.
//!
//! Encoder: `conv_layers` stride-2 3x3 convolutions (channels 16, 32, ...)
//! with leaky ReLU, then two affine heads for the latent mean and log
//! variance. The decoder mirrors it with stride-2 transposed convolutions
//! and a sigmoid output.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model_io;
use crate::nn::{
    self, derive_seed, leaky, leaky_grad, sigmoid, softplus, Adam, Allocator, Conv2d,
    ConvTranspose2d, Dense,
};
use crate::raster::Raster;

const BASE_CHANNELS: usize = 16;
const PRED_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub conv_layers: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub kl_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            conv_layers: 5,
            latent_dim: 128,
            batch_size: 64,
            learning_rate: 0.001,
            epochs: 10,
            seed: 0,
            kl_weight: 1.0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 {
            return Err(Error::config("conv_layers must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::config("kl_weight must be >= 0"));
        }
        Ok(())
    }
}

/// Mean and log-variance of the approximate posterior for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl LatentStats {
    fn check(&self) -> Result<()> {
        if self.mean.len() != self.log_variance.len() {
            return Err(Error::LengthMismatch {
                left: self.mean.len(),
                right: self.log_variance.len(),
            });
        }
        if !self
            .mean
            .iter()
            .chain(&self.log_variance)
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("latent statistics"));
        }
        Ok(())
    }
}

/// Reparameterized draw `z = mean + exp(log_variance / 2) * eps`, with `eps`
/// standard normal from a generator seeded by `seed`.
pub fn sample_latent(stats: &LatentStats, seed: u64) -> Result<Vec<f64>> {
    stats.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stats
        .mean
        .iter()
        .zip(&stats.log_variance)
        .map(|(m, lv)| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            m + (0.5 * lv).exp() * eps
        })
        .collect())
}

/// Closed-form `KL(N(mean, var) || N(0, I))`.
pub fn kl_divergence(stats: &LatentStats) -> Result<f64> {
    stats.check()?;
    Ok(kl_terms(&stats.mean, &stats.log_variance))
}

fn kl_terms(mean: &[f64], log_variance: &[f64]) -> f64 {
    -0.5 * mean
        .iter()
        .zip(log_variance)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Mean per-pixel binary cross-entropy, predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn reconstruction_loss(original: &Raster, reconstructed: &Raster) -> Result<f64> {
    reconstructed.ensure_shape(original.shape())?;
    let n = original.data().len();
    if n == 0 {
        return Err(Error::Empty("image"));
    }
    let total: f64 = original
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(&t, &p)| {
            let p = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n as f64)
}

/// Input geometry and latent size of an encoder; everything needed to
/// rebuild its parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub resolution: (usize, usize),
    pub conv_layers: usize,
    pub latent_dim: usize,
}

impl EncoderSpec {
    fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        let f = 1usize
            .checked_shl(self.conv_layers as u32)
            .ok_or_else(|| Error::config("too many conv layers"))?;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::config(format!(
                "resolution {h}x{w} must be a positive multiple of 2^{} = {f}",
                self.conv_layers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub spec: EncoderSpec,
    convs: Vec<Conv2d>,
    mu: Dense,
    logvar: Dense,
    pub params: Range<usize>,
}

pub(crate) struct EncoderTrace {
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    feat: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Encoder {
    pub(crate) fn new(spec: EncoderSpec, alloc: &mut Allocator) -> Result<Self> {
        spec.validate()?;
        let start = alloc.end();
        let (mut c, (mut h, mut w)) = (1, spec.resolution);
        let mut convs = Vec::with_capacity(spec.conv_layers);
        for i in 0..spec.conv_layers {
            let out_c = BASE_CHANNELS << i;
            let conv = Conv2d::new(c, out_c, h, w, alloc);
            (c, h, w) = conv.out_shape();
            convs.push(conv);
        }
        let flat = c * h * w;
        let mu = Dense::new(flat, spec.latent_dim, alloc);
        let logvar = Dense::new(flat, spec.latent_dim, alloc);
        Ok(Self {
            spec,
            convs,
            mu,
            logvar,
            params: start..alloc.end(),
        })
    }

    /// `(channels, height, width)` of the last convolution's output.
    pub(crate) fn feature_shape(&self) -> (usize, usize, usize) {
        self.convs.last().expect("at least one conv").out_shape()
    }

    pub(crate) fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        for conv in &self.convs {
            conv.init(params, rng);
        }
        self.mu.init(params, rng);
        self.logvar.init(params, rng);
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64], with_logvar: bool) -> EncoderTrace {
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut act = x.to_vec();
        for conv in &self.convs {
            let (col, y) = conv.forward(params, &act);
            act = y.iter().map(|&v| leaky(v)).collect();
            cols.push(col);
            pre.push(y);
        }
        let mu = self.mu.forward(params, &act);
        let logvar = if with_logvar {
            self.logvar.forward(params, &act)
        } else {
            Vec::new()
        };
        EncoderTrace {
            cols,
            pre,
            feat: act,
            mu,
            logvar,
        }
    }

    pub(crate) fn backward(
        &self,
        params: &[f64],
        trace: &EncoderTrace,
        dmu: &[f64],
        dlogvar: Option<&[f64]>,
        grads: &mut [f64],
    ) {
        let mut d = self
            .mu
            .backward(params, &trace.feat, dmu, grads, true)
            .expect("dx requested");
        if let Some(dlv) = dlogvar {
            let dl = self
                .logvar
                .backward(params, &trace.feat, dlv, grads, true)
                .expect("dx requested");
            d.iter_mut().zip(dl).for_each(|(a, b)| *a += b);
        }
        for (i, conv) in self.convs.iter().enumerate().rev() {
            d.iter_mut()
                .zip(&trace.pre[i])
                .for_each(|(g, &p)| *g *= leaky_grad(p));
            match conv.backward(params, &trace.cols[i], &d, grads, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    dense: Dense,
    deconvs: Vec<ConvTranspose2d>,
}

struct DecoderTrace {
    z: Vec<f64>,
    dense_pre: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Decoder {
    fn new(encoder: &Encoder, alloc: &mut Allocator) -> Self {
        let (c, h, w) = encoder.feature_shape();
        let dense = Dense::new(encoder.spec.latent_dim, c * h * w, alloc);
        let layers = encoder.spec.conv_layers;
        let (mut c, mut h, mut w) = (c, h, w);
        let mut deconvs = Vec::with_capacity(layers);
        for i in (0..layers).rev() {
            let out_c = if i == 0 { 1 } else { BASE_CHANNELS << (i - 1) };
            deconvs.push(ConvTranspose2d::new(c, out_c, h, w, alloc));
            (c, h, w) = (out_c, 2 * h, 2 * w);
        }
        Self { dense, deconvs }
    }

    fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        self.dense.init(params, rng);
        for d in &self.deconvs {
            d.init(params, rng);
        }
    }

    fn forward(&self, params: &[f64], z: &[f64]) -> DecoderTrace {
        let dense_pre = self.dense.forward(params, z);
        let mut act: Vec<f64> = dense_pre.iter().map(|&v| leaky(v)).collect();
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let mut pre = Vec::with_capacity(self.deconvs.len());
        let last = self.deconvs.len() - 1;
        let mut logits = Vec::new();
        for (i, d) in self.deconvs.iter().enumerate() {
            let y = d.forward(params, &act);
            inputs.push(std::mem::take(&mut act));
            if i == last {
                logits = y;
            } else {
                act = y.iter().map(|&v| leaky(v)).collect();
                pre.push(y);
            }
        }
        DecoderTrace {
            z: z.to_vec(),
            dense_pre,
            inputs,
            pre,
            logits,
        }
    }

    /// Returns the gradient with respect to `z`.
    fn backward(&self, params: &[f64], trace: &DecoderTrace, dlogits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut d = dlogits.to_vec();
        for (i, dc) in self.deconvs.iter().enumerate().rev() {
            if i < self.deconvs.len() - 1 {
                d.iter_mut()
                    .zip(&trace.pre[i])
                    .for_each(|(g, &p)| *g *= leaky_grad(p));
            }
            d = dc
                .backward(params, &trace.inputs[i], &d, grads, true)
                .expect("dx requested");
        }
        d.iter_mut()
            .zip(&trace.dense_pre)
            .for_each(|(g, &p)| *g *= leaky_grad(p));
        self.dense
            .backward(params, &trace.z, &d, grads, true)
            .expect("dx requested")
    }
}

#[derive(Serialize, Deserialize)]
struct VaeHeader {
    config: VaeConfig,
    spec: EncoderSpec,
}

/// A trained (or freshly initialized) auto-encoder.
#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    encoder: Encoder,
    decoder: Decoder,
    params: Vec<f64>,
}

/// A model together with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub curve: Vec<f64>,
}

impl VaeModel {
    /// Randomly initialized model for images of `resolution`, seeded by
    /// `config.seed`.
    pub fn new(config: &VaeConfig, resolution: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let spec = EncoderSpec {
            resolution,
            conv_layers: config.conv_layers,
            latent_dim: config.latent_dim,
        };
        let mut model = Self::layout(config.clone(), spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        model.encoder.init(&mut model.params, &mut rng);
        model.decoder.init(&mut model.params, &mut rng);
        Ok(model)
    }

    fn layout(config: VaeConfig, spec: EncoderSpec) -> Result<Self> {
        let mut alloc = Allocator::default();
        let encoder = Encoder::new(spec, &mut alloc)?;
        let decoder = Decoder::new(&encoder, &mut alloc);
        Ok(Self {
            config,
            encoder,
            decoder,
            params: vec![0.0; alloc.end()],
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        self.encoder.spec
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.encoder.spec.resolution
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameters of the encoder (convolutions plus both latent heads).
    pub fn encoder_params(&self) -> &[f64] {
        &self.params[self.encoder.params.clone()]
    }

    pub fn encode(&self, image: &Raster) -> Result<LatentStats> {
        image.ensure_shape(self.resolution())?;
        let t = self.encoder.forward(&self.params, image.data(), true);
        let stats = LatentStats {
            mean: t.mu,
            log_variance: t.logvar,
        };
        stats.check()?;
        Ok(stats)
    }

    /// Decoder output probabilities for a latent vector.
    pub fn decode(&self, z: &[f64]) -> Result<Raster> {
        if z.len() != self.config.latent_dim {
            return Err(Error::LengthMismatch {
                left: z.len(),
                right: self.config.latent_dim,
            });
        }
        let t = self.decoder.forward(&self.params, z);
        let (h, w) = self.resolution();
        Raster::new(h, w, t.logits.into_iter().map(sigmoid).collect())
    }

    /// Decodes the posterior mean.
    pub fn reconstruct(&self, image: &Raster) -> Result<Raster> {
        self.decode(&self.encode(image)?.mean)
    }

    /// Per-image objective with fixed noise: summed per-pixel BCE (computed
    /// from logits) plus `kl_weight * KL`. Optionally accumulates gradients.
    fn sample_loss(&self, x: &[f64], eps: &[f64], grads: Option<&mut [f64]>) -> f64 {
        let enc = self.encoder.forward(&self.params, x, true);
        let std: Vec<f64> = enc.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = enc
            .mu
            .iter()
            .zip(&std)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let dec = self.decoder.forward(&self.params, &z);
        let recon: f64 = dec
            .logits
            .iter()
            .zip(x)
            .map(|(&l, &t)| softplus(l) - t * l)
            .sum();
        let beta = self.config.kl_weight;
        let loss = recon + beta * kl_terms(&enc.mu, &enc.logvar);

        if let Some(grads) = grads {
            let dlogits: Vec<f64> = dec
                .logits
                .iter()
                .zip(x)
                .map(|(&l, &t)| sigmoid(l) - t)
                .collect();
            let dz = self.decoder.backward(&self.params, &dec, &dlogits, grads);
            let dmu: Vec<f64> = dz.iter().zip(&enc.mu).map(|(g, m)| g + beta * m).collect();
            let dlogvar: Vec<f64> = dz
                .iter()
                .zip(eps)
                .zip(&std)
                .zip(&enc.logvar)
                .map(|(((g, e), s), lv)| g * e * 0.5 * s + beta * 0.5 * (lv.exp() - 1.0))
                .collect();
            self.encoder
                .backward(&self.params, &enc, &dmu, Some(&dlogvar), grads);
        }
        loss
    }

    fn check_batch(&self, images: &[&Raster], noise: &[Vec<f64>]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if images.len() != noise.len() {
            return Err(Error::LengthMismatch {
                left: images.len(),
                right: noise.len(),
            });
        }
        for (img, e) in images.iter().zip(noise) {
            img.ensure_shape(self.resolution())?;
            if e.len() != self.config.latent_dim {
                return Err(Error::LengthMismatch {
                    left: e.len(),
                    right: self.config.latent_dim,
                });
            }
        }
        Ok(())
    }

    /// Mean training objective over a batch with explicit reparameterization
    /// noise (one vector per image).
    pub fn objective(&self, images: &[&Raster], noise: &[Vec<f64>]) -> Result<f64> {
        self.check_batch(images, noise)?;
        let total: f64 = images
            .iter()
            .zip(noise)
            .map(|(img, e)| self.sample_loss(img.data(), e, None))
            .sum();
        Ok(total / images.len() as f64)
    }

    /// [`VaeModel::objective`] and its gradient with respect to
    /// [`VaeModel::params`].
    pub fn objective_and_gradient(&self, images: &[&Raster], noise: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(images, noise)?;
        let (total, mut grads) = nn::accumulate(images.len(), self.params.len(), |i, g| {
            self.sample_loss(images[i].data(), &noise[i], Some(g))
        });
        let scale = 1.0 / images.len() as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = VaeHeader {
            config: self.config.clone(),
            spec: self.encoder.spec,
        };
        model_io::save(path, "vae", &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params): (VaeHeader, _) = model_io::load(path, "vae")?;
        let mut model = Self::layout(header.config, header.spec)?;
        if params.len() != model.params.len() {
            return Err(Error::ModelFormat(format!(
                "{} parameters for a layout of {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub(crate) fn encoder_layout(&self) -> &Encoder {
        &self.encoder
    }
}

fn noise_for(seed: u64, epoch: usize, position: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5EED_0E95, epoch as u64, position as u64));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Trains a VAE on every image of `corpus` with Adam. The curve holds the
/// mean per-image objective of each epoch.
pub fn train_vae(corpus: &Corpus, config: &VaeConfig) -> Result<Trained<VaeModel>> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut model = VaeModel::new(config, corpus.resolution())?;
    let images: Vec<&Raster> = corpus.records().iter().map(|r| &r.pixels).collect();
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, epoch as u64)));
        let mut epoch_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let imgs: Vec<&Raster> = batch.iter().map(|&i| images[i]).collect();
            let noise: Vec<Vec<f64>> = (0..batch.len())
                .map(|j| noise_for(config.seed, epoch, b * config.batch_size + j, config.latent_dim))
                .collect();
            let (loss, grads) = model.objective_and_gradient(&imgs, &noise)?;
            if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let n = model.params.len();
            adam.step(&mut model.params, &grads, 0..n);
            epoch_total += loss * batch.len() as f64;
        }
        let mean = epoch_total / images.len() as f64;
        log::info!("vae epoch {}/{}: loss {mean:.4}", epoch + 1, config.epochs);
        curve.push(mean);
    }
    Ok(Trained { model, curve })
}
