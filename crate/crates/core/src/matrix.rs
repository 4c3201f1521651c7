//! Square, id-indexed score matrices on the 0–5 scale and the ranking
//! machinery shared by ground truth, learned indices and baselines.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the similarity scale.
pub const MAX_SCORE: f64 = 5.0;

/// A dense `N x N` score matrix with row/column ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    values: Vec<f64>,
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Ranked answers to a single query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }
}

/// Anything that can rank the other members of its id set for a query.
pub trait Ranker {
    fn ids(&self) -> &[String];
    fn query(&self, query_id: &str, k: usize) -> Result<RetrievalResult>;
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: n * n,
            });
        }
        let mut positions = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            positions,
            values,
        })
    }

    pub fn from_fn(ids: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        Self::new(ids, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64> {
        let i = self
            .position(a)
            .ok_or_else(|| Error::UnknownId(a.to_owned()))?;
        let j = self
            .position(b)
            .ok_or_else(|| Error::UnknownId(b.to_owned()))?;
        Ok(self.get(i, j))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sub-matrix over `ids`, in the given order.
    pub fn restrict(&self, ids: &[String]) -> Result<Self> {
        let pos: Vec<usize> = ids
            .iter()
            .map(|id| self.position(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<_>>()?;
        Self::from_fn(ids.to_vec(), |a, b| self.get(pos[a], pos[b]))
    }

    /// Largest `|m[i][j] - m[j][i]|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Writes the matrix as CSV: empty corner cell, ids on row 0 and column 0.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = Vec::with_capacity(self.len() + 1);
        header.push(String::new());
        header.extend(self.ids.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = Vec::with_capacity(self.len() + 1);
            rec.push(id.clone());
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads the CSV layout written by [`ScoreMatrix::write_csv`]. Only the
    /// structure is checked here; score semantics are validated by callers.
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| Error::MatrixFormat("empty file".into()))??;
        if header.get(0).map(str::trim) != Some("") {
            return Err(Error::MatrixFormat("corner cell must be empty".into()));
        }
        let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_owned()).collect();
        let n = ids.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for rec in records {
            let rec = rec?;
            if rows >= n {
                return Err(Error::MatrixFormat("more rows than columns".into()));
            }
            if rec.len() != n + 1 {
                return Err(Error::MatrixFormat(format!(
                    "row {} has {} cells, expected {}",
                    rows + 1,
                    rec.len(),
                    n + 1
                )));
            }
            let row_id = rec[0].trim();
            if row_id != ids[rows] {
                return Err(Error::MatrixFormat(format!(
                    "row {} id {row_id:?} does not match column id {:?}",
                    rows + 1,
                    ids[rows]
                )));
            }
            for cell in rec.iter().skip(1) {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::MatrixFormat(format!("non-numeric cell {cell:?} in row {row_id:?}"))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::MatrixFormat(format!("{rows} rows for {n} columns")));
        }
        Self::new(ids, values)
    }

    fn rank(&self, query_id: &str, k: usize) -> Result<RetrievalResult> {
        let q = self
            .position(query_id)
            .ok_or_else(|| Error::UnknownId(query_id.to_owned()))?;
        let max = self.len().saturating_sub(1);
        if k < 1 || k > max {
            return Err(Error::KOutOfRange { k, max });
        }
        Ok(RetrievalResult {
            query_id: query_id.to_owned(),
            hits: top_k(&self.ids, self.row(q), Some(q), k),
        })
    }
}

impl Ranker for ScoreMatrix {
    fn ids(&self) -> &[String] {
        &self.ids
    }

    fn query(&self, query_id: &str, k: usize) -> Result<RetrievalResult> {
        self.rank(query_id, k)
    }
}

/// The `k` best entries of `row`, skipping position `exclude`.
pub(crate) fn top_k(ids: &[String], row: &[f64], exclude: Option<usize>, k: usize) -> Vec<Hit> {
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| Some(j) != exclude).collect();
    order.sort_by(|&a, &b| rank_order(row[a], &ids[a], row[b], &ids[b]));
    order.truncate(k);
    order
        .into_iter()
        .map(|j| Hit {
            id: ids[j].clone(),
            score: row[j],
        })
        .collect()
}

/// Descending score, ties broken by ascending id.
pub(crate) fn rank_order(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ida.cmp(idb))
}

/// Global min-max bounds of a set of raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Normalization {
    pub fn fit(raw: &[f64]) -> Self {
        let (raw_min, raw_max) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self { raw_min, raw_max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.raw_max > self.raw_min)
    }

    /// Maps a raw score onto `[0, 5]`; degenerate bounds map everything to 5.
    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        if self.is_degenerate() {
            MAX_SCORE
        } else {
            ((raw - self.raw_min) / (self.raw_max - self.raw_min) * MAX_SCORE).clamp(0.0, MAX_SCORE)
        }
    }
}

/// Min-max normalizes a raw `N x N` matrix to `[0, 5]` over all of its cells.
pub fn normalize_matrix(ids: Vec<String>, raw: &[f64]) -> Result<(ScoreMatrix, Normalization)> {
    let norm = Normalization::fit(raw);
    if norm.is_degenerate() {
        log::warn!(
            "degenerate similarity matrix (all raw scores = {}); setting every cell to {MAX_SCORE}",
            norm.raw_min
        );
    }
    let values = raw.iter().map(|&v| norm.apply(v)).collect();
    Ok((ScoreMatrix::new(ids, values)?, norm))
}
