//! Pairwise similarity over learned embeddings, normalized onto the 0–5
//! scale, with top-k and kNN queries.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::matrix::{normalize_matrix, top_k, Normalization, Ranker, RetrievalResult, ScoreMatrix};
use crate::metric::{EmbeddingVector, SiameseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    Cosine,
    Euclidean,
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Euclidean => "euclidean",
        })
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }
}

fn raw_similarity(a: &[f64], b: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    match metric {
        SimilarityMetric::Cosine => {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Ok((dot / (na * nb)).clamp(-1.0, 1.0))
        }
        SimilarityMetric::Euclidean => Ok(-a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
    }
}

/// Raw similarity before normalization. Cosine lies in `[-1, 1]`;
/// Euclidean is the negated distance so that larger always means closer.
pub fn pairwise_similarity(a: &EmbeddingVector, b: &EmbeddingVector, metric: SimilarityMetric) -> Result<f64> {
    raw_similarity(&a.values, &b.values, metric)
}

/// How an external query row is mapped onto the 0–5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalNormalization {
    /// Refit the bounds over the matrix extended by the new row and its
    /// self-similarity.
    #[default]
    Extended,
    /// Reuse the bounds fitted at build time, clamping to `[0, 5]`.
    StoredBounds,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    metric: SimilarityMetric,
    normalization: Normalization,
}

/// Normalized similarity matrix over a fixed set of embeddings.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    matrix: ScoreMatrix,
    metric: SimilarityMetric,
    normalization: Normalization,
    embeddings: Option<Vec<EmbeddingVector>>,
}

/// Computes all pairwise raw similarities and min-max normalizes the whole
/// matrix onto `[0, 5]`.
pub fn build_index(embeddings: &[EmbeddingVector], metric: SimilarityMetric) -> Result<SimilarityIndex> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::config(format!("an index needs at least 2 embeddings, got {n}")));
    }
    let mut seen = HashSet::with_capacity(n);
    for e in embeddings {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::DuplicateId(e.id.clone()));
        }
        if !e.values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
    }
    // upper triangle per row, mirrored afterwards so the result is exactly symmetric
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| raw_similarity(&embeddings[i].values, &embeddings[j].values, metric))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            raw[i * n + i + off] = v;
            raw[(i + off) * n + i] = v;
        }
    }
    let ids = embeddings.iter().map(|e| e.id.clone()).collect();
    let (matrix, normalization) = normalize_matrix(ids, &raw)?;
    Ok(SimilarityIndex {
        matrix,
        metric,
        normalization,
        embeddings: Some(embeddings.to_vec()),
    })
}

impl SimilarityIndex {
    pub fn matrix(&self) -> &ScoreMatrix {
        &self.matrix
    }

    pub fn metric(&self) -> SimilarityMetric {
        self.metric
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn embeddings(&self) -> Option<&[EmbeddingVector]> {
        self.embeddings.as_deref()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    /// Attaches embeddings to a loaded index; they must cover exactly the
    /// index ids, in order.
    pub fn with_embeddings(mut self, embeddings: Vec<EmbeddingVector>) -> Result<Self> {
        if embeddings.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: embeddings.len(),
            });
        }
        for (e, id) in embeddings.iter().zip(self.matrix.ids()) {
            if &e.id != id {
                return Err(Error::UnknownId(e.id.clone()));
            }
        }
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    /// Ids of the top-k hits.
    pub fn knn(&self, query_id: &str, k: usize) -> Result<Vec<String>> {
        Ok(self.query(query_id, k)?.hits.into_iter().map(|h| h.id).collect())
    }

    /// Ranks the indexed items against an embedding that is not part of the
    /// index. `1 <= k <= N`.
    pub fn query_external_embedding(
        &self,
        values: &[f64],
        k: usize,
        mode: ExternalNormalization,
    ) -> Result<RetrievalResult> {
        let embeddings = self
            .embeddings
            .as_deref()
            .ok_or_else(|| Error::config("index has no embeddings attached"))?;
        let n = self.len();
        if k < 1 || k > n {
            return Err(Error::KOutOfRange { k, max: n });
        }
        let dim = embeddings[0].values.len();
        if values.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: values.len(),
            });
        }
        let raw: Vec<f64> = embeddings
            .iter()
            .map(|e| raw_similarity(values, &e.values, self.metric))
            .collect::<Result<_>>()?;
        let norm = match mode {
            ExternalNormalization::StoredBounds => self.normalization,
            ExternalNormalization::Extended => {
                let own = raw_similarity(values, values, self.metric)?;
                let row = Normalization::fit(&raw);
                Normalization {
                    raw_min: self.normalization.raw_min.min(row.raw_min).min(own),
                    raw_max: self.normalization.raw_max.max(row.raw_max).max(own),
                }
            }
        };
        let scores: Vec<f64> = raw.iter().map(|&v| norm.apply(v)).collect();
        Ok(RetrievalResult {
            query_id: "external".to_owned(),
            hits: top_k(self.matrix.ids(), &scores, None, k),
        })
    }

    /// Embeds `image` with `model` and ranks the indexed items against it.
    pub fn query_external(
        &self,
        model: &SiameseModel,
        image: &ImageRecord,
        k: usize,
        mode: ExternalNormalization,
    ) -> Result<RetrievalResult> {
        let emb = model.embed_raster(&image.pixels)?;
        let mut result = self.query_external_embedding(&emb, k, mode)?;
        result.query_id = image.id.clone();
        Ok(result)
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes the matrix CSV and the metric/normalization sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.matrix.write_csv(path)?;
        let side = Self::sidecar_path(path);
        let body = serde_json::to_string_pretty(&Sidecar {
            metric: self.metric,
            normalization: self.normalization,
        })?;
        std::fs::write(&side, body).map_err(|e| Error::io(&side, e))
    }

    /// Reads an index written by [`SimilarityIndex::save`]. Embeddings are
    /// not stored there; attach them with [`SimilarityIndex::with_embeddings`].
    pub fn load(path: &Path) -> Result<Self> {
        let matrix = ScoreMatrix::read_csv(path)?;
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(side.clone()),
            _ => Error::io(&side, e),
        })?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        Ok(Self {
            matrix,
            metric: sidecar.metric,
            normalization: sidecar.normalization,
            embeddings: None,
        })
    }
}

impl Ranker for SimilarityIndex {
    fn ids(&self) -> &[String] {
        self.matrix.ids()
    }

    fn query(&self, query_id: &str, k: usize) -> Result<RetrievalResult> {
        self.matrix.query(query_id, k)
    }
}

/// Writes embeddings as `id,e0,e1,...` rows.
pub fn write_embeddings(path: &Path, embeddings: &[EmbeddingVector]) -> Result<()> {
    let dim = embeddings.first().map_or(0, |e| e.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for e in embeddings {
        if e.values.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: e.values.len(),
            });
        }
        let mut row = vec![e.id.clone()];
        row.extend(e.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingVector>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len().saturating_sub(1);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::Manifest {
            line: line + 2,
            message,
        };
        if rec.len() != dim + 1 {
            return Err(bad(format!("expected {} fields, found {}", dim + 1, rec.len())));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        out.push(EmbeddingVector {
            id: rec[0].to_owned(),
            values,
        });
    }
    Ok(out)
}
