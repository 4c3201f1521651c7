//! Classical similarity baselines: windowed SSIM and Goldberg image
//! signatures. Both yield full matrices on the same 0–5 scale as the
//! learned index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::{normalize_matrix, ScoreMatrix};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window_size: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window_size: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::config("SSIM window must be odd and >= 3"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::config("SSIM constants must be positive"));
        }
        Ok(())
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for y in 0..h {
            let mut run = 0.0;
            for x in 0..w {
                run += f(y * w + x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + run;
            }
        }
        Self { w: stride, sums }
    }

    fn window(&self, y: usize, x: usize, n: usize) -> f64 {
        let s = &self.sums;
        let w = self.w;
        s[(y + n) * w + x + n] - s[y * w + x + n] - s[(y + n) * w + x] + s[y * w + x]
    }
}

/// Mean SSIM over every fully contained `window_size` square, using
/// uniform weights and population statistics.
pub fn ssim(a: &Raster, b: &Raster, config: &SsimConfig) -> Result<f64> {
    config.validate()?;
    a.ensure_shape(b.shape())?;
    let (h, w) = a.shape();
    let n = config.window_size;
    if h < n || w < n {
        return Err(Error::TooSmall {
            grid: n,
            needed: n,
            found: (h, w),
        });
    }
    let (da, db) = (a.data(), b.data());
    let ia = Integral::new(h, w, |i| da[i]);
    let ib = Integral::new(h, w, |i| db[i]);
    let iaa = Integral::new(h, w, |i| da[i] * da[i]);
    let ibb = Integral::new(h, w, |i| db[i] * db[i]);
    let iab = Integral::new(h, w, |i| da[i] * db[i]);
    let c1 = (config.k1 * config.dynamic_range).powi(2);
    let c2 = (config.k2 * config.dynamic_range).powi(2);
    let area = (n * n) as f64;
    let mut total = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let ma = ia.window(y, x, n) / area;
            let mb = ib.window(y, x, n) / area;
            let va = (iaa.window(y, x, n) / area - ma * ma).max(0.0);
            let vb = (ibb.window(y, x, n) / area - mb * mb).max(0.0);
            let cov = iab.window(y, x, n) / area - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / ((h - n + 1) * (w - n + 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldbergConfig {
    /// Lattice points per side.
    pub grid: usize,
}

impl Default for GoldbergConfig {
    fn default() -> Self {
        Self { grid: 9 }
    }
}

/// Quantized neighbor-difference signature; every entry is in `-2..=2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSignature {
    pub values: Vec<i8>,
}

/// Differences at or below this magnitude count as identical.
const IDENTICAL: f64 = 2.0 / 255.0;

fn lattice(len: usize, grid: usize) -> Vec<usize> {
    let lo = 0.1 * (len - 1) as f64;
    let span = 0.8 * (len - 1) as f64;
    (0..grid)
        .map(|i| (lo + span * i as f64 / (grid - 1) as f64).round() as usize)
        .collect()
}

fn neighborhood_mean(img: &Raster, cy: usize, cx: usize, side: usize) -> f64 {
    let (h, w) = img.shape();
    let y0 = cy.saturating_sub((side - 1) / 2).min(h - side);
    let x0 = cx.saturating_sub((side - 1) / 2).min(w - side);
    let mut sum = 0.0;
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            sum += img.get(y, x);
        }
    }
    sum / (side * side) as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Lattice signature: mean gray level around each lattice point, compared
/// with its 8 neighbors for every interior point, then quantized.
pub fn goldberg_signature(image: &Raster, config: &GoldbergConfig) -> Result<ImageSignature> {
    let grid = config.grid;
    if grid < 3 {
        return Err(Error::config("Goldberg grid must be >= 3"));
    }
    let (h, w) = image.shape();
    if h < grid + 2 || w < grid + 2 {
        return Err(Error::TooSmall {
            grid,
            needed: grid + 2,
            found: (h, w),
        });
    }
    let side = ((0.5 + h.min(w) as f64 / 20.0).floor() as usize).max(2);
    let (ys, xs) = (lattice(h, grid), lattice(w, grid));
    let means: Vec<f64> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .map(|(y, x)| neighborhood_mean(image, y, x, side))
        .collect();
    let mut diffs = Vec::with_capacity(8 * (grid - 2) * (grid - 2));
    for i in 1..grid - 1 {
        for j in 1..grid - 1 {
            let c = means[i * grid + j];
            for di in [-1isize, 0, 1] {
                for dj in [-1isize, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let n = means[(i as isize + di) as usize * grid + (j as isize + dj) as usize];
                    // rounding keeps shifted copies of an image bit-identical here
                    diffs.push(((n - c) * 1e9).round() / 1e9);
                }
            }
        }
    }
    let mut lighter: Vec<f64> = diffs.iter().copied().filter(|&d| d > IDENTICAL).collect();
    let mut darker: Vec<f64> = diffs.iter().filter(|&&d| d < -IDENTICAL).map(|d| -d).collect();
    let light_cut = if lighter.is_empty() { 0.0 } else { median(&mut lighter) };
    let dark_cut = if darker.is_empty() { 0.0 } else { median(&mut darker) };
    let values = diffs
        .into_iter()
        .map(|d| {
            if d > IDENTICAL {
                if d <= light_cut {
                    1
                } else {
                    2
                }
            } else if d < -IDENTICAL {
                if -d <= dark_cut {
                    -1
                } else {
                    -2
                }
            } else {
                0
            }
        })
        .collect();
    Ok(ImageSignature { values })
}

/// `1 - |a - b| / (|a| + |b|)`, or 1 when both signatures are zero.
pub fn goldberg_similarity(a: &ImageSignature, b: &ImageSignature) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::LengthMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    let norm = |s: &ImageSignature| s.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na + nb == 0.0 {
        return Ok(1.0);
    }
    let dist = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 - dist / (na + nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Ssim,
    Goldberg,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ssim => "ssim",
            Self::Goldberg => "goldberg",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssim" => Ok(Self::Ssim),
            "goldberg" | "gb" => Ok(Self::Goldberg),
            other => Err(Error::config(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub ssim: SsimConfig,
    pub goldberg: GoldbergConfig,
}

/// Raw pairwise baseline similarities, row-major `N x N`.
pub fn baseline_raw(corpus: &Corpus, method: BaselineMethod, config: &BaselineConfig) -> Result<Vec<f64>> {
    let records = corpus.records();
    let n = records.len();
    let pair: Box<dyn Fn(usize, usize) -> Result<f64> + Sync> = match method {
        BaselineMethod::Ssim => {
            config.ssim.validate()?;
            Box::new(move |i, j| ssim(&records[i].pixels, &records[j].pixels, &config.ssim))
        }
        BaselineMethod::Goldberg => {
            let sigs: Vec<ImageSignature> = records
                .par_iter()
                .map(|r| goldberg_signature(&r.pixels, &config.goldberg))
                .collect::<Result<_>>()?;
            Box::new(move |i, j| goldberg_similarity(&sigs[i], &sigs[j]))
        }
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| pair(i, j)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            raw[i * n + i + off] = v;
            raw[(i + off) * n + i] = v;
        }
    }
    Ok(raw)
}

/// Full pairwise baseline matrix, min-max normalized onto `[0, 5]`.
pub fn baseline_matrix(corpus: &Corpus, method: BaselineMethod, config: &BaselineConfig) -> Result<ScoreMatrix> {
    if corpus.len() < 2 {
        return Err(Error::config("a baseline matrix needs at least 2 images"));
    }
    let raw = baseline_raw(corpus, method, config)?;
    Ok(normalize_matrix(corpus.ids(), &raw)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssim_constant_images() {
        let cfg = SsimConfig::default();
        let a = Raster::filled(16, 16, 0.0);
        let b = Raster::filled(16, 16, 1.0);
        let c1: f64 = 1e-4;
        let v = ssim(&a, &b, &cfg).unwrap();
        assert!((v - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_errors() {
        let cfg = SsimConfig::default();
        assert!(ssim(&Raster::filled(8, 8, 0.0), &Raster::filled(8, 9, 0.0), &cfg).is_err());
        assert!(ssim(&Raster::filled(5, 5, 0.0), &Raster::filled(5, 5, 0.0), &cfg).is_err());
        let bad = SsimConfig {
            window_size: 4,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn goldberg_constant_is_zero() {
        let s = goldberg_signature(&Raster::filled(40, 40, 0.3), &GoldbergConfig::default()).unwrap();
        assert_eq!(s.values.len(), 392);
        assert!(s.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn goldberg_too_small() {
        assert!(matches!(
            goldberg_signature(&Raster::filled(8, 8, 0.3), &GoldbergConfig::default()),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn goldberg_similarity_cases() {
        let mut a = vec![0i8; 392];
        let mut b = vec![0i8; 392];
        a[0] = 2;
        b[0] = -2;
        let (a, b) = (ImageSignature { values: a }, ImageSignature { values: b });
        assert_eq!(goldberg_similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(goldberg_similarity(&a, &a).unwrap(), 1.0);
        let z = ImageSignature { values: vec![0; 392] };
        assert_eq!(goldberg_similarity(&z, &z).unwrap(), 1.0);
        assert!(goldberg_similarity(&z, &ImageSignature { values: vec![0; 3] }).is_err());
    }

    #[test]
    fn lattice_spans_margins() {
        assert_eq!(lattice(101, 9), vec![10, 20, 30, 40, 50, 60, 70, 80, 90]);
    }
}
