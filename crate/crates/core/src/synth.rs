//! Procedural sketch benchmark: classes of stroke glyphs, each rendered
//! in many affine-perturbed variants as binary rasters.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{binary_matrix_from_labels, Corpus, GroundTruthMatrix, ImageRecord};
use crate::error::{Error, Result};
use crate::nn::derive_seed;
use crate::raster::Raster;

type Point = (f64, f64);

/// One class prototype: strokes as polylines in the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub strokes: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub images: usize,
    pub resolution: (usize, usize),
    /// Seeds the class prototypes.
    pub glyph_seed: u64,
    /// Seeds the per-image perturbations.
    pub seed: u64,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub max_shear: f64,
    pub max_shift: f64,
    /// Per-vertex Gaussian jitter, unit-square coordinates.
    pub jitter: f64,
    /// Stroke width in pixels.
    pub stroke_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            images: 500,
            resolution: (32, 32),
            glyph_seed: 17,
            seed: 0,
            max_rotation_deg: 15.0,
            scale_range: (0.8, 1.1),
            max_shear: 0.15,
            max_shift: 0.08,
            jitter: 0.02,
            stroke_width: 1.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.images < self.classes {
            return Err(Error::config("need >= 2 classes and at least one image per class"));
        }
        if self.resolution.0 < 8 || self.resolution.1 < 8 {
            return Err(Error::config("resolution must be at least 8x8"));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return Err(Error::config("invalid scale_range"));
        }
        if !(self.stroke_width > 0.0) || self.jitter < 0.0 {
            return Err(Error::config("stroke_width must be > 0 and jitter >= 0"));
        }
        Ok(())
    }
}

fn arc(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let c = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
    let r = rng.random_range(0.12..0.3);
    let start = rng.random_range(0.0..2.0 * PI);
    let sweep = rng.random_range(0.6 * PI..1.7 * PI);
    let steps = 12;
    (0..=steps)
        .map(|i| {
            let t = start + sweep * i as f64 / steps as f64;
            (c.0 + r * t.cos(), c.1 + r * t.sin())
        })
        .collect()
}

fn polyline(rng: &mut ChaCha8Rng, points: usize) -> Vec<Point> {
    (0..points)
        .map(|_| (rng.random_range(0.12..0.88), rng.random_range(0.12..0.88)))
        .collect()
}

/// Deterministic class prototypes of 2 to 4 strokes each.
pub fn glyph_prototypes(classes: usize, seed: u64) -> Vec<Glyph> {
    (0..classes)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11, c as u64));
            let n = rng.random_range(2..=4);
            let strokes = (0..n)
                .map(|_| match rng.random_range(0..3) {
                    0 => arc(&mut rng),
                    1 => polyline(&mut rng, 2),
                    _ => polyline(&mut rng, 3),
                })
                .collect();
            Glyph { strokes }
        })
        .collect()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// Rasterizes strokes given in pixel coordinates; a pixel is ink when its
/// center lies within half the stroke width of any segment.
pub fn render(strokes: &[Vec<Point>], resolution: (usize, usize), stroke_width: f64) -> Raster {
    let (h, w) = resolution;
    let half = stroke_width / 2.0;
    let segments: Vec<(Point, Point)> = strokes
        .iter()
        .flat_map(|s| s.windows(2).map(|p| (p[0], p[1])))
        .collect();
    Raster::from_fn(h, w, |y, x| {
        let p = (x as f64 + 0.5, y as f64 + 0.5);
        let ink = segments.iter().any(|&(a, b)| segment_distance(p, a, b) <= half);
        if ink {
            1.0
        } else {
            0.0
        }
    })
}

/// Applies a random rotation, anisotropic scale, shear, shift and vertex
/// jitter about the glyph center, then maps to pixel coordinates.
pub fn perturb(glyph: &Glyph, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
    let theta = rng.random_range(-1.0..=1.0) * config.max_rotation_deg.to_radians();
    let (lo, hi) = config.scale_range;
    let (sx, sy) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let shear = rng.random_range(-1.0..=1.0) * config.max_shear;
    let (tx, ty) = (
        rng.random_range(-1.0..=1.0) * config.max_shift,
        rng.random_range(-1.0..=1.0) * config.max_shift,
    );
    let noise = Normal::new(0.0, config.jitter.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let (c, s) = (theta.cos(), theta.sin());
    let (h, w) = config.resolution;
    glyph
        .strokes
        .iter()
        .map(|stroke| {
            stroke
                .iter()
                .map(|&(x, y)| {
                    let (u, v) = (x - 0.5, y - 0.5);
                    let (u, v) = (sx * (u + shear * v), sy * v);
                    let (u, v) = (c * u - s * v, s * u + c * v);
                    let jx = if config.jitter > 0.0 { noise.sample(rng) } else { 0.0 };
                    let jy = if config.jitter > 0.0 { noise.sample(rng) } else { 0.0 };
                    ((u + 0.5 + tx + jx) * w as f64, (v + 0.5 + ty + jy) * h as f64)
                })
                .collect()
        })
        .collect()
}

/// Class label of the glyph at class index `c`.
pub fn class_label(c: usize) -> String {
    format!("g{c:02}")
}

/// Generates `config.images` labeled variants, classes assigned round-robin.
/// Ids are `<prefix><label>_<index>`.
pub fn generate(config: &SynthConfig, prefix: &str) -> Result<Corpus> {
    config.validate()?;
    let glyphs = glyph_prototypes(config.classes, config.glyph_seed);
    let records = (0..config.images)
        .map(|i| {
            let c = i % config.classes;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 12, i as u64));
            let strokes = perturb(&glyphs[c], config, &mut rng);
            let label = class_label(c);
            ImageRecord::new(format!("{prefix}{label}_{i:05}"), render(&strokes, config.resolution, config.stroke_width))
                .with_label(label)
        })
        .collect();
    Corpus::new(records, config.resolution)
}

/// Unlabeled pretraining images plus a labeled set with its binary
/// same-class similarity matrix.
#[derive(Debug, Clone)]
pub struct DeskBenchmark {
    pub pretrain: Corpus,
    pub labeled: Corpus,
    pub truth: GroundTruthMatrix,
}

/// Builds both sets from one base config; the pretraining images use a
/// different perturbation stream so the two sets share no variant.
pub fn desk_benchmark(base: &SynthConfig, pretrain_images: usize) -> Result<DeskBenchmark> {
    let labeled = generate(base, "")?;
    let pre_cfg = SynthConfig {
        images: pretrain_images,
        seed: derive_seed(base.seed, 13, 0),
        ..base.clone()
    };
    let pretrain = generate(&pre_cfg, "pre_")?;
    let pretrain = Corpus::new(
        pretrain
            .into_records()
            .into_iter()
            .map(|mut r| {
                r.class_label = None;
                r
            })
            .collect(),
        base.resolution,
    )?;
    let truth = binary_matrix_from_labels(&labeled)?;
    Ok(DeskBenchmark {
        pretrain,
        labeled,
        truth,
    })
}
