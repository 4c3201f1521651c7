//! Edge-map renditions of images: a classical gradient/hysteresis detector
//! and an adapter for edge maps produced by an external deep model.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{decode_image, file_stem_for, Corpus, ImageRecord};
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMethod {
    Precomputed,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMapConfig {
    pub method: EdgeMethod,
    pub low_threshold: f64,
    pub high_threshold: f64,
    /// Emit dark edges on a light background.
    pub invert: bool,
}

impl Default for EdgeMapConfig {
    fn default() -> Self {
        Self {
            method: EdgeMethod::Classical,
            low_threshold: 0.1,
            high_threshold: 0.25,
            invert: false,
        }
    }
}

impl EdgeMapConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.low_threshold) || !unit.contains(&self.high_threshold) {
            return Err(Error::config("edge thresholds must lie in [0, 1]"));
        }
        if self.low_threshold > self.high_threshold {
            return Err(Error::config("low_threshold exceeds high_threshold"));
        }
        Ok(())
    }
}

/// Sobel gradient magnitude with replicated borders.
pub fn gradient_magnitude(img: &Raster) -> Raster {
    let (h, w) = img.shape();
    Raster::from_fn(h, w, |y, x| {
        let p = |dy: isize, dx: isize| img.get_clamped(y as isize + dy, x as isize + dx);
        let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        gx.hypot(gy)
    })
}

/// Classical edge map: Sobel magnitude normalized by its maximum, then
/// hysteresis thresholding with 8-connectivity. No non-maximum suppression,
/// so a step edge yields a line up to two pixels wide.
pub fn edge_map(image: &ImageRecord, config: &EdgeMapConfig) -> Result<ImageRecord> {
    config.validate()?;
    if config.method != EdgeMethod::Classical {
        return Err(Error::config(
            "precomputed edge maps are ingested with load_precomputed",
        ));
    }
    let (h, w) = image.pixels.shape();
    let mag = gradient_magnitude(&image.pixels);
    let peak = mag.data().iter().copied().fold(0.0, f64::max);

    let mut edges = vec![false; h * w];
    if peak > 0.0 {
        let norm: Vec<f64> = mag.data().iter().map(|v| v / peak).collect();
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (i, &v) in norm.iter().enumerate() {
            if v >= config.high_threshold {
                edges[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !edges[j] && norm[j] >= config.low_threshold {
                        edges[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    let on = if config.invert { 0.0 } else { 1.0 };
    let data = edges
        .into_iter()
        .map(|e| if e { on } else { 1.0 - on })
        .collect();
    Ok(ImageRecord {
        pixels: Raster::new(h, w, data)?,
        ..image.clone()
    })
}

pub fn edge_map_corpus(corpus: &Corpus, config: &EdgeMapConfig) -> Result<Corpus> {
    let records = corpus
        .records()
        .iter()
        .map(|r| edge_map(r, config))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(records, corpus.resolution())
}

const EDGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Aligns externally generated edge maps (`<dir>/<id>.<ext>`) with `corpus`,
/// resizing when allowed and binarizing at 0.5.
pub fn load_precomputed(dir: &Path, corpus: &Corpus, resize: bool) -> Result<Corpus> {
    let (h, w) = corpus.resolution();
    let records = corpus
        .records()
        .iter()
        .map(|r| {
            let stem = file_stem_for(&r.id);
            let path = EDGE_EXTENSIONS
                .iter()
                .map(|ext| dir.join(format!("{stem}.{ext}")))
                .find(|p| p.exists())
                .ok_or_else(|| Error::MissingEdgeMap {
                    id: r.id.clone(),
                    dir: dir.to_owned(),
                })?;
            let raw = decode_image(&r.id, &path)?;
            let px = if raw.shape() == (h, w) {
                raw
            } else if resize {
                raw.resize_area(h, w)
            } else {
                return Err(Error::Resolution {
                    id: r.id.clone(),
                    expected: (h, w),
                    found: raw.shape(),
                });
            };
            Ok(ImageRecord {
                pixels: px.binarized(0.5),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(records, (h, w))
}
