//! Independent reference implementations and fixtures shared by the
//! integration suites. Nothing here calls into the code under test except
//! to build inputs.
#![allow(dead_code)]

use diagsearch::matrix::ScoreMatrix;
use diagsearch::{Corpus, GroundTruthMatrix, ImageRecord, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AP@k by literal summation over every prefix of the relevance list.
pub fn ap_oracle(relevance: &[bool], total_relevant: usize, k: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..k.min(relevance.len()) {
        if !relevance[i] {
            continue;
        }
        let mut hits = 0;
        for j in 0..=i {
            if relevance[j] {
                hits += 1;
            }
        }
        sum += hits as f64 / (i + 1) as f64;
    }
    sum / k.min(total_relevant) as f64
}

/// Mean hinge over triplets, distances accumulated one coordinate at a time.
pub fn triplet_oracle(a: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>], margin: f64) -> f64 {
    let mut total = 0.0;
    for t in 0..a.len() {
        let mut dp = 0.0;
        let mut dn = 0.0;
        for d in 0..a[t].len() {
            dp += (a[t][d] - p[t][d]).powi(2);
            dn += (a[t][d] - n[t][d]).powi(2);
        }
        let l = dp - dn + margin;
        if l > 0.0 {
            total += l;
        }
    }
    total / a.len() as f64
}

/// SSIM by explicit loops over every window, two-pass statistics.
pub fn ssim_oracle(a: &Raster, b: &Raster, win: usize, k1: f64, k2: f64, l: f64) -> f64 {
    let (h, w) = a.shape();
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..=h - win {
        for x in 0..=w - win {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..win {
                for dx in 0..win {
                    ma += a.get(y + dy, x + dx);
                    mb += b.get(y + dy, x + dx);
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..win {
                for dx in 0..win {
                    let ea = a.get(y + dy, x + dx) - ma;
                    let eb = b.get(y + dy, x + dx) - mb;
                    va += ea * ea;
                    vb += eb * eb;
                    cov += ea * eb;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Global min-max onto [0, 5]; all 5 when the range is empty.
pub fn minmax_oracle(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|&v| if hi > lo { 5.0 * (v - lo) / (hi - lo) } else { 5.0 })
        .collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("id{i:03}")).collect()
}

pub fn random_raster(h: usize, w: usize, rng: &mut ChaCha8Rng, binary: bool) -> Raster {
    Raster::from_fn(h, w, |_, _| {
        let v: f64 = rng.random();
        if binary {
            (v > 0.7) as u8 as f64
        } else {
            v
        }
    })
}

/// Random images carrying `classes` round-robin labels.
pub fn random_corpus(n: usize, h: usize, w: usize, classes: usize, seed: u64, binary: bool) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = ids(n)
        .into_iter()
        .enumerate()
        .map(|(i, id)| ImageRecord::new(id, random_raster(h, w, &mut rng, binary)).with_label(format!("c{}", i % classes)))
        .collect();
    Corpus::new(records, (h, w)).unwrap()
}

/// Symmetric integer-valued truth matrix with random scores in 0..=5.
pub fn random_truth(n: usize, seed: u64) -> GroundTruthMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![5.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = rng.random_range(0..=5) as f64;
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
    }
    GroundTruthMatrix::new(ScoreMatrix::new(ids(n), v).unwrap()).unwrap()
}

/// `|a - f| <= tol * max(|a|, |f|)`, treating two values below 1e-7 as equal.
pub fn grad_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    if analytic.abs() < 1e-7 && numeric.abs() < 1e-7 {
        return true;
    }
    (analytic - numeric).abs() <= tol * analytic.abs().max(numeric.abs())
}

/// Central differences of `f` at 20 seeded parameter positions. Returns
/// `(index, analytic, numeric)` for each sampled parameter.
pub fn finite_difference_sample(
    params: &mut [f64],
    grads: &[f64],
    samples: usize,
    h: f64,
    seed: u64,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> Vec<(usize, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, params.len(), samples).into_vec();
    picks
        .into_iter()
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            (i, grads[i], (up - down) / (2.0 * h))
        })
        .collect()
}

/// Writes 60 synthetic 16x16 glyphs under `dir/data` and returns a quick
/// pipeline configuration writing to `dir/out`.
pub fn small_pipeline(dir: &std::path::Path) -> diagsearch::pipeline::PipelineConfig {
    use diagsearch::synth::{generate, SynthConfig};
    let corpus = generate(
        &SynthConfig {
            classes: 4,
            images: 60,
            resolution: (16, 16),
            stroke_width: 1.2,
            ..SynthConfig::default()
        },
        "",
    )
    .unwrap();
    let manifest = corpus.write_to_dir(&dir.join("data")).unwrap();
    let mut cfg = diagsearch::pipeline::PipelineConfig::new(manifest, dir.join("out"));
    cfg.ingest.resolution = (16, 16);
    cfg.vae = diagsearch::VaeConfig {
        conv_layers: 2,
        latent_dim: 8,
        epochs: 2,
        batch_size: 16,
        ..Default::default()
    };
    cfg.metric = diagsearch::MetricConfig {
        epochs: 2,
        head_dims: vec![8],
        batch_size: 16,
        triplets_per_anchor: 3,
        ..Default::default()
    };
    cfg
}
