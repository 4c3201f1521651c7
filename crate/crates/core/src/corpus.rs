//! Image corpora, ground-truth similarity matrices and train/query splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Ranker, RetrievalResult, ScoreMatrix, MAX_SCORE};
use crate::raster::Raster;

/// Tolerance for symmetry checks on loaded matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Raster,
    pub class_label: Option<String>,
    pub split: Option<SplitTag>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, pixels: Raster) -> Self {
        Self {
            id: id.into(),
            pixels,
            class_label: None,
            split: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }
}

/// An ordered set of equally-sized gray-scale images. Record order defines
/// the row order of every matrix built from the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<ImageRecord>,
    resolution: (usize, usize),
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<ImageRecord>, resolution: (usize, usize)) -> Result<Self> {
        let mut positions = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            r.pixels.ensure_shape(resolution)?;
            if !r.pixels.in_unit_range() {
                return Err(Error::config(format!(
                    "pixels of {:?} fall outside [0, 1]",
                    r.id
                )));
            }
        }
        Ok(Self {
            records,
            resolution,
            positions,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.positions.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Records for `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<Corpus> {
        let records = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(records, self.resolution)
    }

    pub fn resized(&self, resolution: (usize, usize), binarize: bool) -> Result<Corpus> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut px = r.pixels.resize_area(resolution.0, resolution.1);
                if binarize {
                    px = px.binarized(0.5);
                }
                ImageRecord {
                    pixels: px,
                    ..r.clone()
                }
            })
            .collect();
        Corpus::new(records, resolution)
    }

    /// Writes `<dir>/<id>.png` for every record plus `<dir>/manifest.jsonl`
    /// pointing at them. Returns the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut lines = String::new();
        for r in &self.records {
            let file = format!("{}.png", file_stem_for(&r.id));
            let path = dir.join(&file);
            std::fs::write(&path, r.pixels.to_png_bytes()).map_err(|e| Error::io(&path, e))?;
            let entry = ManifestEntry {
                id: r.id.clone(),
                path: file,
                class_label: r.class_label.clone(),
                split: r.split,
            };
            lines.push_str(&serde_json::to_string(&entry)?);
            lines.push('\n');
        }
        let manifest = dir.join("manifest.jsonl");
        std::fs::write(&manifest, lines).map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

/// Maps an id onto a file name, replacing path separators.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if matches!(c, '/' | '\\' | ':') { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binarize {
    /// Re-binarize at 0.5 only when the source image is pure black/white.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub resolution: (usize, usize),
    pub resize: bool,
    pub binarize: Binarize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            resolution: (128, 128),
            resize: true,
            binarize: Binarize::Auto,
        }
    }
}

/// Decodes an image file into a gray-scale raster scaled to `[0, 1]`.
pub fn decode_image(id: &str, path: &Path) -> Result<Raster> {
    if !path.exists() {
        return Err(Error::MissingImage {
            id: id.to_owned(),
            path: path.to_owned(),
        });
    }
    let img = image::open(path).map_err(|source| Error::Image {
        id: id.to_owned(),
        source,
    })?;
    Ok(Raster::from_gray8(&img.to_luma8()))
}

/// Decodes an in-memory encoded image (PNG, JPEG, ...) like [`decode_image`].
pub fn decode_image_bytes(id: &str, bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory(bytes).map_err(|source| Error::Image {
        id: id.to_owned(),
        source,
    })?;
    Ok(Raster::from_gray8(&img.to_luma8()))
}

/// Brings a decoded raster to the target resolution per `options`.
pub fn preprocess(id: &str, raw: Raster, options: &IngestOptions) -> Result<Raster> {
    let binary_source = raw.is_binary();
    let (h, w) = options.resolution;
    let px = if raw.shape() == options.resolution {
        raw
    } else if options.resize {
        raw.resize_area(h, w)
    } else {
        return Err(Error::Resolution {
            id: id.to_owned(),
            expected: options.resolution,
            found: raw.shape(),
        });
    };
    let binarize = match options.binarize {
        Binarize::Auto => binary_source,
        Binarize::Always => true,
        Binarize::Never => false,
    };
    Ok(if binarize { px.binarized(0.5) } else { px })
}

/// Loads a JSON-lines manifest of `{"id", "path", "class_label"?}` entries.
/// Relative image paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path, options: &IngestOptions) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
        _ => Error::io(path, e),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        let image_path = base.join(&entry.path);
        let raw = decode_image(&entry.id, &image_path)?;
        let pixels = preprocess(&entry.id, raw, options)?;
        records.push(ImageRecord {
            id: entry.id,
            pixels,
            class_label: entry.class_label,
            split: entry.split,
        });
    }
    Corpus::new(records, options.resolution)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
        _ => Error::io(path, e),
    })
}

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            what,
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Loads an IDX image/label file pair (the MNIST family layout). Record ids
/// are zero-padded sample indices; labels become decimal strings.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Corpus> {
    let images = read_all(images_path)?;
    let labels = read_all(labels_path)?;

    let magic = be_u32(&images, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&labels, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&images, 4, "image header")? as usize;
    let rows = be_u32(&images, 8, "image header")? as usize;
    let cols = be_u32(&images, 12, "image header")? as usize;
    let label_count = be_u32(&labels, 4, "label header")? as usize;
    if count != label_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = &images[16..];
    let needed = count * rows * cols;
    if pixels.len() < needed {
        return Err(Error::Truncated {
            what: "image payload",
            expected: needed,
            found: pixels.len(),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Truncated {
            what: "label payload",
            expected: count,
            found: label_bytes.len(),
        });
    }
    let width = count.saturating_sub(1).to_string().len().max(5);
    let records = (0..count)
        .map(|i| {
            let chunk = &pixels[i * rows * cols..(i + 1) * rows * cols];
            let data = chunk.iter().map(|&b| f64::from(b) / 255.0).collect();
            ImageRecord {
                id: format!("{i:0width$}"),
                pixels: Raster::new(rows, cols, data).expect("chunk sized from header"),
                class_label: Some(label_bytes[i].to_string()),
                split: None,
            }
        })
        .collect();
    Corpus::new(records, (rows, cols))
}

/// Validated pairwise similarity ground truth on the 0–5 scale:
/// symmetric, diagonal 5, all cells in range.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMatrix {
    matrix: ScoreMatrix,
}

impl GroundTruthMatrix {
    /// Validates `matrix`, symmetrizing entries that differ by at most
    /// [`SYMMETRY_TOLERANCE`].
    pub fn new(matrix: ScoreMatrix) -> Result<Self> {
        let n = matrix.len();
        let ids = matrix.ids().to_vec();
        let mut values = matrix.values().to_vec();
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=MAX_SCORE).contains(&v) {
                    return Err(Error::ScoreOutOfRange {
                        row: ids[i].clone(),
                        col: ids[j].clone(),
                        value: v,
                    });
                }
            }
            let d = values[i * n + i];
            if d != MAX_SCORE {
                return Err(Error::Diagonal {
                    id: ids[i].clone(),
                    value: d,
                });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Asymmetric {
                        row: ids[i].clone(),
                        col: ids[j].clone(),
                        forward: a,
                        backward: b,
                    });
                }
                let mean = 0.5 * (a + b);
                values[i * n + j] = mean;
                values[j * n + i] = mean;
            }
        }
        Ok(Self {
            matrix: ScoreMatrix::new(ids, values)?,
        })
    }

    pub fn matrix(&self) -> &ScoreMatrix {
        &self.matrix
    }

    pub fn ids(&self) -> &[String] {
        self.matrix.ids()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64> {
        self.matrix.score(a, b)
    }

    /// Fails on the first id that is not in `corpus`.
    pub fn check_bound(&self, corpus: &Corpus) -> Result<()> {
        match self.ids().iter().find(|id| corpus.get(id).is_none()) {
            Some(id) => Err(Error::UnknownId(id.clone())),
            None => Ok(()),
        }
    }

    pub fn restrict(&self, ids: &[String]) -> Result<Self> {
        Ok(Self {
            matrix: self.matrix.restrict(ids)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.matrix.write_csv(path)
    }
}

impl Ranker for GroundTruthMatrix {
    fn ids(&self) -> &[String] {
        self.matrix.ids()
    }

    fn query(&self, query_id: &str, k: usize) -> Result<RetrievalResult> {
        self.matrix.query(query_id, k)
    }
}

/// Loads a CSV ground-truth matrix and checks every id against `corpus`.
pub fn load_similarity_matrix(path: &Path, corpus: &Corpus) -> Result<GroundTruthMatrix> {
    let truth = GroundTruthMatrix::new(ScoreMatrix::read_csv(path)?)?;
    truth.check_bound(corpus)?;
    Ok(truth)
}

/// Same-class pairs score 5, different-class pairs 0.
pub fn binary_matrix_from_labels(corpus: &Corpus) -> Result<GroundTruthMatrix> {
    let labels: Vec<&str> = corpus
        .records()
        .iter()
        .map(|r| {
            r.class_label
                .as_deref()
                .ok_or_else(|| Error::MissingLabel(r.id.clone()))
        })
        .collect::<Result<_>>()?;
    let matrix = ScoreMatrix::from_fn(corpus.ids(), |i, j| {
        if labels[i] == labels[j] {
            MAX_SCORE
        } else {
            0.0
        }
    })?;
    GroundTruthMatrix::new(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Query images may appear in training, but never paired with each other.
    OneShot,
    /// No similarity entry touching a query image is used in training.
    ZeroShot,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::OneShot => "one_shot",
            SplitMode::ZeroShot => "zero_shot",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "one_shot" => Ok(SplitMode::OneShot),
            "zero_shot" => Ok(SplitMode::ZeroShot),
            other => Err(Error::config(format!("unknown split mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::ZeroShot,
            train_fraction: 0.6,
            seed: 0,
        }
    }
}

/// A train/query partition of a matrix's ids, each side in matrix order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub mode: SplitMode,
    pub train_ids: Vec<String>,
    pub query_ids: Vec<String>,
}

impl Split {
    pub fn query_set(&self) -> HashSet<&str> {
        self.query_ids.iter().map(String::as_str).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seeded shuffle, then `floor(train_fraction * N)` train ids with both
/// partitions clamped to at least one id.
pub fn split_corpus(matrix: &GroundTruthMatrix, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let n = matrix.len();
    if n < 2 {
        return Err(Error::EmptyPartition {
            train: n,
            query: 0,
        });
    }
    let n_train = ((spec.train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut query: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    query.sort_unstable();
    let ids = matrix.ids();
    Ok(Split {
        mode: spec.mode,
        train_ids: train.into_iter().map(|i| ids[i].clone()).collect(),
        query_ids: query.into_iter().map(|i| ids[i].clone()).collect(),
    })
}
