//! Siamese fine-tuning of a pretrained encoder with the triplet objective,
//! producing the embedding used for retrieval.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GroundTruthMatrix, Split, SplitMode};
use crate::error::{Error, Result};
use crate::model_io;
use crate::nn::{self, checksum, derive_seed, leaky, leaky_grad, Adam, Allocator, Dense};
use crate::raster::Raster;
use crate::vae::{Encoder, EncoderSpec, EncoderTrace, Trained, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub margin: f64,
    pub positive_threshold: f64,
    pub negative_threshold: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub head_dims: Vec<usize>,
    /// Cap on mined triplets per anchor.
    pub triplets_per_anchor: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            positive_threshold: 3.0,
            negative_threshold: 0.0,
            batch_size: 64,
            learning_rate: 0.001,
            epochs: 10,
            seed: 0,
            freeze_encoder: false,
            head_dims: vec![128],
            triplets_per_anchor: 10,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::config("margin must be > 0"));
        }
        if !(self.negative_threshold < self.positive_threshold) {
            return Err(Error::config(
                "negative_threshold must be below positive_threshold",
            ));
        }
        if self.batch_size == 0 || self.triplets_per_anchor == 0 {
            return Err(Error::config(
                "batch_size and triplets_per_anchor must be >= 1",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.head_dims.is_empty() || self.head_dims.contains(&0) {
            return Err(Error::config("head_dims must be non-empty and positive"));
        }
        Ok(())
    }
}

/// A learned feature vector for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub id: String,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletSample {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean hinge `max(0, |a-p|^2 - |a-n|^2 + margin)` over aligned lists.
pub fn triplet_loss<V: AsRef<[f64]>>(
    anchors: &[V],
    positives: &[V],
    negatives: &[V],
    margin: f64,
) -> Result<f64> {
    let n = anchors.len();
    if n == 0 {
        return Err(Error::Empty("triplet batch"));
    }
    if positives.len() != n || negatives.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: if positives.len() != n {
                positives.len()
            } else {
                negatives.len()
            },
        });
    }
    let dim = anchors[0].as_ref().len();
    let mut total = 0.0;
    for ((a, p), q) in anchors.iter().zip(positives).zip(negatives) {
        let (a, p, q) = (a.as_ref(), p.as_ref(), q.as_ref());
        for v in [a, p, q] {
            if v.len() != dim {
                return Err(Error::LengthMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
        }
        total += (squared_distance(a, p) - squared_distance(a, q) + margin).max(0.0);
    }
    Ok(total / n as f64)
}

/// Mined triplets plus the number of anchors that had no qualifying
/// positive or negative partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedTriplets {
    pub triplets: Vec<TripletSample>,
    pub skipped_anchors: usize,
}

fn mine_with(
    matrix: &GroundTruthMatrix,
    ids: &[String],
    admissible: impl Fn(&str, &str) -> bool,
    config: &MetricConfig,
    seed: u64,
) -> Result<MinedTriplets> {
    config.validate()?;
    let m = matrix.matrix();
    let pos: Vec<usize> = ids
        .iter()
        .map(|id| m.position(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::new();
    let mut skipped = 0;
    for (ai, &a) in pos.iter().enumerate() {
        let anchor = ids[ai].as_str();
        let candidates = |keep: &dyn Fn(f64) -> bool| -> Vec<usize> {
            (0..ids.len())
                .filter(|&j| j != ai && keep(m.get(a, pos[j])) && admissible(anchor, &ids[j]))
                .collect()
        };
        let positives = candidates(&|s| s >= config.positive_threshold);
        let negatives = candidates(&|s| s <= config.negative_threshold);
        if positives.is_empty() || negatives.is_empty() {
            skipped += 1;
            continue;
        }
        let total = positives.len() * negatives.len();
        let picks: Vec<usize> = if total <= config.triplets_per_anchor {
            (0..total).collect()
        } else {
            let mut v = index::sample(&mut rng, total, config.triplets_per_anchor).into_vec();
            v.sort_unstable();
            v
        };
        for k in picks {
            triplets.push(TripletSample {
                anchor_id: anchor.to_owned(),
                positive_id: ids[positives[k / negatives.len()]].clone(),
                negative_id: ids[negatives[k % negatives.len()]].clone(),
            });
        }
    }
    if triplets.is_empty() {
        return Err(Error::NoTriplets { skipped });
    }
    Ok(MinedTriplets {
        triplets,
        skipped_anchors: skipped,
    })
}

/// Uniformly samples up to `triplets_per_anchor` qualifying
/// (anchor, positive, negative) combinations per anchor, drawing all three
/// ids from `train_ids`.
pub fn mine_triplets(
    matrix: &GroundTruthMatrix,
    train_ids: &[String],
    config: &MetricConfig,
    seed: u64,
) -> Result<MinedTriplets> {
    mine_with(matrix, train_ids, |_, _| true, config, seed)
}

/// Mines triplets honoring the split's isolation rule. Zero-shot draws only
/// from train ids. One-shot draws from every id but never uses a pair of two
/// query ids, which are the entries held out for evaluation.
pub fn mine_for_split(
    matrix: &GroundTruthMatrix,
    split: &Split,
    config: &MetricConfig,
    seed: u64,
) -> Result<MinedTriplets> {
    match split.mode {
        SplitMode::ZeroShot => mine_triplets(matrix, &split.train_ids, config, seed),
        SplitMode::OneShot => {
            let queries = split.query_set();
            let ids: Vec<String> = matrix.ids().to_vec();
            mine_with(
                matrix,
                &ids,
                |a, b| !(queries.contains(a) && queries.contains(b)),
                config,
                seed,
            )
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SiameseHeader {
    config: MetricConfig,
    spec: EncoderSpec,
}

struct HeadTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Encoder (mean head) followed by a fully connected head.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    config: MetricConfig,
    encoder: Encoder,
    head: Vec<Dense>,
    params: Vec<f64>,
}

impl SiameseModel {
    fn layout(config: MetricConfig, spec: EncoderSpec) -> Result<Self> {
        config.validate()?;
        let mut alloc = Allocator::default();
        let encoder = Encoder::new(spec, &mut alloc)?;
        let mut inputs = spec.latent_dim;
        let head = config
            .head_dims
            .iter()
            .map(|&d| {
                let layer = Dense::new(inputs, d, &mut alloc);
                inputs = d;
                layer
            })
            .collect();
        Ok(Self {
            config,
            encoder,
            head,
            params: vec![0.0; alloc.end()],
        })
    }

    fn init_head(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, 7, 0));
        for layer in &self.head {
            layer.init(&mut self.params, &mut rng);
        }
    }

    /// Transfers the VAE encoder; the head is freshly initialized.
    pub fn from_vae(vae: &VaeModel, config: &MetricConfig) -> Result<Self> {
        let mut model = Self::layout(config.clone(), vae.encoder_spec())?;
        let src = vae.encoder_layout().params.clone();
        debug_assert_eq!(src, model.encoder.params);
        model.params[src.clone()].copy_from_slice(vae.encoder_params());
        model.init_head();
        Ok(model)
    }

    /// Same architecture with a randomly initialized encoder.
    pub fn with_random_encoder(spec: EncoderSpec, config: &MetricConfig, seed: u64) -> Result<Self> {
        let mut model = Self::layout(config.clone(), spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.encoder.init(&mut model.params, &mut rng);
        model.init_head();
        Ok(model)
    }

    pub fn config(&self) -> &MetricConfig {
        &self.config
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.encoder.spec.resolution
    }

    pub fn embedding_dim(&self) -> usize {
        *self.config.head_dims.last().expect("validated non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn encoder_range(&self) -> Range<usize> {
        self.encoder.params.clone()
    }

    pub fn encoder_checksum(&self) -> u64 {
        checksum(&self.params[self.encoder.params.clone()])
    }

    fn head_forward(&self, x: Vec<f64>) -> HeadTrace {
        let mut inputs = Vec::with_capacity(self.head.len());
        let mut pre = Vec::with_capacity(self.head.len());
        let mut act = x;
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            let y = layer.forward(&self.params, &act);
            inputs.push(std::mem::take(&mut act));
            if i == last {
                act = y;
            } else {
                act = y.iter().map(|&v| leaky(v)).collect();
                pre.push(y);
            }
        }
        HeadTrace {
            inputs,
            pre,
            output: act,
        }
    }

    /// Returns the gradient with respect to the head input.
    fn head_backward(&self, trace: &HeadTrace, dout: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut d = dout.to_vec();
        for (i, layer) in self.head.iter().enumerate().rev() {
            if i < self.head.len() - 1 {
                d.iter_mut()
                    .zip(&trace.pre[i])
                    .for_each(|(g, &p)| *g *= leaky_grad(p));
            }
            d = layer
                .backward(&self.params, &trace.inputs[i], &d, grads, true)
                .expect("dx requested");
        }
        d
    }

    fn forward(&self, x: &[f64]) -> (EncoderTrace, HeadTrace) {
        let mut enc = self.encoder.forward(&self.params, x, false);
        let head = self.head_forward(std::mem::take(&mut enc.mu));
        (enc, head)
    }

    pub fn embed_raster(&self, image: &Raster) -> Result<Vec<f64>> {
        image.ensure_shape(self.resolution())?;
        let (_, head) = self.forward(image.data());
        if !head.output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(head.output)
    }

    pub fn embed(&self, id: &str, image: &Raster) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector {
            id: id.to_owned(),
            values: self.embed_raster(image)?,
        })
    }

    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<Vec<EmbeddingVector>> {
        use rayon::prelude::*;
        corpus
            .records()
            .par_iter()
            .map(|r| self.embed(&r.id, &r.pixels))
            .collect()
    }

    fn check_triplets(&self, images: &[&Raster], triplets: &[(usize, usize, usize)]) -> Result<()> {
        if triplets.is_empty() {
            return Err(Error::Empty("triplet batch"));
        }
        for img in images {
            img.ensure_shape(self.resolution())?;
        }
        let n = images.len();
        if let Some(&(a, p, q)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n || t.2 >= n) {
            return Err(Error::LengthMismatch {
                left: n,
                right: a.max(p).max(q) + 1,
            });
        }
        Ok(())
    }

    /// Mean triplet loss over index triples into `images`.
    pub fn triplet_objective(&self, images: &[&Raster], triplets: &[(usize, usize, usize)]) -> Result<f64> {
        self.check_triplets(images, triplets)?;
        let emb: Vec<Vec<f64>> = images.iter().map(|img| self.forward(img.data()).1.output).collect();
        let (a, p, n): (Vec<_>, Vec<_>, Vec<_>) = triplets
            .iter()
            .map(|&(a, p, n)| (emb[a].clone(), emb[p].clone(), emb[n].clone()))
            .fold((vec![], vec![], vec![]), |mut acc, (a, p, n)| {
                acc.0.push(a);
                acc.1.push(p);
                acc.2.push(n);
                acc
            });
        triplet_loss(&a, &p, &n, self.config.margin)
    }

    /// [`SiameseModel::triplet_objective`] and its gradient. Each distinct
    /// image is embedded and back-propagated once. When the encoder is
    /// frozen its gradient entries stay zero.
    pub fn triplet_objective_and_gradient(
        &self,
        images: &[&Raster],
        triplets: &[(usize, usize, usize)],
    ) -> Result<(f64, Vec<f64>)> {
        use rayon::prelude::*;
        self.check_triplets(images, triplets)?;
        let traces: Vec<(EncoderTrace, HeadTrace)> =
            images.par_iter().map(|img| self.forward(img.data())).collect();
        let dim = self.embedding_dim();
        let mut demb = vec![vec![0.0; dim]; images.len()];
        let scale = 1.0 / triplets.len() as f64;
        let margin = self.config.margin;
        let mut total = 0.0;
        for &(a, p, n) in triplets {
            let (fa, fp, fn_) = (&traces[a].1.output, &traces[p].1.output, &traces[n].1.output);
            let hinge = squared_distance(fa, fp) - squared_distance(fa, fn_) + margin;
            if hinge <= 0.0 {
                continue;
            }
            total += hinge;
            for k in 0..dim {
                demb[a][k] += 2.0 * (fn_[k] - fp[k]) * scale;
                demb[p][k] -= 2.0 * (fa[k] - fp[k]) * scale;
                demb[n][k] += 2.0 * (fa[k] - fn_[k]) * scale;
            }
        }
        let frozen = self.config.freeze_encoder;
        let (_, grads) = nn::accumulate(images.len(), self.params.len(), |i, g| {
            if demb[i].iter().all(|&v| v == 0.0) {
                return 0.0;
            }
            let (enc, head) = &traces[i];
            let dmu = self.head_backward(head, &demb[i], g);
            if !frozen {
                self.encoder.backward(&self.params, enc, &dmu, None, g);
            }
            0.0
        });
        Ok((total * scale, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SiameseHeader {
            config: self.config.clone(),
            spec: self.encoder.spec,
        };
        model_io::save(path, "siamese", &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params): (SiameseHeader, _) = model_io::load(path, "siamese")?;
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
}

/// Fine-tunes `model` on `triplets` drawn from `corpus`. The curve holds
/// the mean triplet loss of each epoch.
pub fn fit_siamese(
    mut model: SiameseModel,
    corpus: &Corpus,
    triplets: &[TripletSample],
) -> Result<Trained<SiameseModel>> {
    if triplets.is_empty() {
        return Err(Error::Empty("triplets"));
    }
    let config = model.config.clone();
    let lookup = |id: &str| {
        corpus
            .position(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))
    };
    let resolved: Vec<(usize, usize, usize)> = triplets
        .iter()
        .map(|t| Ok((lookup(&t.anchor_id)?, lookup(&t.positive_id)?, lookup(&t.negative_id)?)))
        .collect::<Result<_>>()?;
    let records = corpus.records();
    let active = if config.freeze_encoder {
        model.encoder.params.end..model.params.len()
    } else {
        0..model.params.len()
    };
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, epoch as u64)));
        let mut epoch_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            // local indices over the distinct images of this batch
            let mut local: HashMap<usize, usize> = HashMap::new();
            let mut images: Vec<&Raster> = Vec::new();
            let mut slot = |g: usize| {
                *local.entry(g).or_insert_with(|| {
                    images.push(&records[g].pixels);
                    images.len() - 1
                })
            };
            let batch_triplets: Vec<(usize, usize, usize)> = batch
                .iter()
                .map(|&t| {
                    let (a, p, n) = resolved[t];
                    (slot(a), slot(p), slot(n))
                })
                .collect();
            let (loss, grads) = model.triplet_objective_and_gradient(&images, &batch_triplets)?;
            if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            adam.step(&mut model.params, &grads, active.clone());
            epoch_total += loss * batch.len() as f64;
        }
        let mean = epoch_total / resolved.len() as f64;
        log::info!("siamese epoch {}/{}: triplet loss {mean:.4}", epoch + 1, config.epochs);
        curve.push(mean);
    }
    Ok(Trained { model, curve })
}

/// Builds a Siamese model from the pretrained `vae` encoder and fine-tunes it.
pub fn train_siamese(
    vae: &VaeModel,
    corpus: &Corpus,
    triplets: &[TripletSample],
    config: &MetricConfig,
) -> Result<Trained<SiameseModel>> {
    if triplets.is_empty() {
        return Err(Error::Empty("triplets"));
    }
    corpus.records().first().map_or(Ok(()), |r| r.pixels.ensure_shape(vae.resolution()))?;
    fit_siamese(SiameseModel::from_vae(vae, config)?, corpus, triplets)
}
