mod common;

use common::*;
use diagsearch::metric::{fit_siamese, MinedTriplets};
use diagsearch::synth::{generate, SynthConfig};
use diagsearch::vae::EncoderSpec;
use diagsearch::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny_vae() -> (VaeModel, Corpus) {
    let corpus = random_corpus(3, 8, 8, 2, 1, true);
    let cfg = VaeConfig {
        conv_layers: 2,
        latent_dim: 2,
        seed: 4,
        ..VaeConfig::default()
    };
    (VaeModel::new(&cfg, (8, 8)).unwrap(), corpus)
}

#[test]
fn vae_gradient_matches_finite_differences() {
    let (model, corpus) = tiny_vae();
    let images: Vec<&Raster> = corpus.records().iter().map(|r| &r.pixels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let (_, grads) = model.objective_and_gradient(&images, &noise).unwrap();
    let mut params = model.params().to_vec();
    let mut probe = model.clone();
    let checks = finite_difference_sample(&mut params, &grads, 20, 1e-4, 3, &mut |p| {
        probe.params_mut().copy_from_slice(p);
        probe.objective(&images, &noise).unwrap()
    });
    for (i, a, f) in checks {
        assert!(grad_close(a, f, 1e-3), "param {i}: analytic {a} numeric {f}");
    }
}

fn tiny_siamese() -> (SiameseModel, Corpus) {
    let (vae, corpus) = tiny_vae();
    let cfg = MetricConfig {
        head_dims: vec![2],
        margin: 5.0,
        ..MetricConfig::default()
    };
    (SiameseModel::from_vae(&vae, &cfg).unwrap(), corpus)
}

#[test]
fn siamese_gradient_matches_finite_differences() {
    let (model, corpus) = tiny_siamese();
    let images: Vec<&Raster> = corpus.records().iter().map(|r| &r.pixels).collect();
    let triplets = [(0, 1, 2), (1, 0, 2), (2, 0, 1)];
    let (_, grads) = model.triplet_objective_and_gradient(&images, &triplets).unwrap();
    let mut params = model.params().to_vec();
    let mut probe = model.clone();
    let checks = finite_difference_sample(&mut params, &grads, 20, 1e-4, 5, &mut |p| {
        probe.params_mut().copy_from_slice(p);
        probe.triplet_objective(&images, &triplets).unwrap()
    });
    for (i, a, f) in checks {
        assert!(grad_close(a, f, 1e-3), "param {i}: analytic {a} numeric {f}");
    }
}

#[test]
fn siamese_head_gradient_matches_finite_differences() {
    // every head parameter of the 2 -> 2 affine head
    let (model, corpus) = tiny_siamese();
    let images: Vec<&Raster> = corpus.records().iter().map(|r| &r.pixels).collect();
    let triplets = [(0, 1, 2), (2, 1, 0)];
    let (_, grads) = model.triplet_objective_and_gradient(&images, &triplets).unwrap();
    let head = model.encoder_range().end..model.params().len();
    assert_eq!(head.len(), 6);
    let mut probe = model.clone();
    for i in head {
        let orig = model.params()[i];
        probe.params_mut()[i] = orig + 1e-4;
        let up = probe.triplet_objective(&images, &triplets).unwrap();
        probe.params_mut()[i] = orig - 1e-4;
        let down = probe.triplet_objective(&images, &triplets).unwrap();
        probe.params_mut()[i] = orig;
        let f = (up - down) / 2e-4;
        assert!(grad_close(grads[i], f, 1e-3), "param {i}: analytic {} numeric {f}", grads[i]);
    }
}

fn glyphs(n: usize, res: usize, seed: u64) -> Corpus {
    generate(
        &SynthConfig {
            images: n,
            resolution: (res, res),
            seed,
            stroke_width: 1.2,
            ..SynthConfig::default()
        },
        "",
    )
    .unwrap()
}

#[test]
fn vae_loss_decreases_over_seeds() {
    let corpus = glyphs(200, 16, 0);
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..3 {
        let cfg = VaeConfig {
            conv_layers: 2,
            latent_dim: 16,
            epochs: 5,
            batch_size: 32,
            seed,
            ..VaeConfig::default()
        };
        let trained = train_vae(&corpus, &cfg).unwrap();
        assert_eq!(trained.curve.len(), 5);
        assert!(trained.curve[4] <= trained.curve[0], "seed {seed}: {:?}", trained.curve);
        first += trained.curve[0];
        last += trained.curve[4];
    }
    assert!(last < first);
}

fn mined(corpus: &Corpus, cap: usize) -> MinedTriplets {
    let truth = binary_matrix_from_labels(corpus).unwrap();
    let cfg = MetricConfig {
        triplets_per_anchor: cap,
        ..MetricConfig::default()
    };
    mine_triplets(&truth, &corpus.ids(), &cfg, 1).unwrap()
}

#[test]
fn siamese_training_contracts() {
    let corpus = glyphs(100, 16, 1);
    let vae = train_vae(
        &corpus,
        &VaeConfig {
            conv_layers: 2,
            latent_dim: 16,
            epochs: 2,
            ..VaeConfig::default()
        },
    )
    .unwrap()
    .model;
    let triplets = mined(&corpus, 2).triplets;
    assert_eq!(triplets.len(), 200);

    let cfg = MetricConfig {
        epochs: 5,
        head_dims: vec![16],
        batch_size: 32,
        ..MetricConfig::default()
    };
    let trained = train_siamese(&vae, &corpus, &triplets, &cfg).unwrap();
    assert_eq!(trained.curve.len(), 5);
    assert!(trained.curve[4] <= trained.curve[0], "{:?}", trained.curve);

    let frozen_cfg = MetricConfig {
        freeze_encoder: true,
        ..cfg.clone()
    };
    let before = SiameseModel::from_vae(&vae, &frozen_cfg).unwrap();
    let after = train_siamese(&vae, &corpus, &triplets, &frozen_cfg).unwrap().model;
    assert_eq!(before.encoder_checksum(), after.encoder_checksum());
    assert_ne!(before.params(), after.params());

    let idle_cfg = MetricConfig { epochs: 0, ..cfg };
    let idle = train_siamese(&vae, &corpus, &triplets, &idle_cfg).unwrap();
    assert!(idle.curve.is_empty());
    assert_eq!(idle.model.params(), SiameseModel::from_vae(&vae, &idle_cfg).unwrap().params());
    assert!(train_siamese(&vae, &corpus, &[], &idle_cfg).is_err());
}

#[test]
fn embedding_contracts() {
    let (model, corpus) = tiny_siamese();
    let r = &corpus.records()[0];
    let a = model.embed(&r.id, &r.pixels).unwrap();
    assert_eq!(a.values.len(), 2);
    assert_eq!(a, model.embed(&r.id, &r.pixels).unwrap());
    assert!(model.embed("x", &Raster::filled(16, 16, 0.0)).is_err());
}

#[test]
fn random_encoder_differs_from_pretrained() {
    let (vae, _) = tiny_vae();
    let cfg = MetricConfig {
        head_dims: vec![2],
        ..MetricConfig::default()
    };
    let spec = EncoderSpec {
        resolution: (8, 8),
        conv_layers: 2,
        latent_dim: 2,
    };
    let pre = SiameseModel::from_vae(&vae, &cfg).unwrap();
    let rnd = SiameseModel::with_random_encoder(spec, &cfg, 77).unwrap();
    assert_eq!(pre.params().len(), rnd.params().len());
    assert_ne!(pre.encoder_checksum(), rnd.encoder_checksum());
    assert_eq!(&pre.params()[pre.encoder_range()], vae.encoder_params());
}

#[test]
fn fit_rejects_unknown_ids() {
    let (model, corpus) = tiny_siamese();
    let t = TripletSample {
        anchor_id: "nope".into(),
        positive_id: corpus.ids()[0].clone(),
        negative_id: corpus.ids()[1].clone(),
    };
    assert!(fit_siamese(model, &corpus, &[t]).is_err());
}

#[test]
fn kl_matches_monte_carlo() {
    // E_q[log q(z) - log p(z)] for one latent dimension
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (mu, lv) in [(0.0, 0.0), (1.0, 0.0), (0.0, 4f64.ln()), (-0.7, -1.3)] {
        let sd = (0.5 * lv).exp();
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = mu + sd * e;
            let log_q = -0.5 * e * e - sd.ln();
            let log_p = -0.5 * z * z;
            let v = log_q - log_p;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        let stats = LatentStats {
            mean: vec![mu],
            log_variance: vec![lv],
        };
        let kl = kl_divergence(&stats).unwrap();
        assert!((kl - mean).abs() <= 3.0 * se + 1e-12, "mu {mu} lv {lv}: {kl} vs {mean} ± {se}");
    }
}

#[test]
fn vae_save_load_keeps_encoding() {
    let (model, corpus) = tiny_vae();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.model");
    model.save(&path).unwrap();
    let back = VaeModel::load(&path).unwrap();
    let img = &corpus.records()[0].pixels;
    assert_eq!(model.encode(img).unwrap(), back.encode(img).unwrap());
    assert_eq!(back.reconstruct(img).unwrap().shape(), (8, 8));
    assert!(SiameseModel::load(&path).is_err());
}
