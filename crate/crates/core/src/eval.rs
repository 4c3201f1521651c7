//! Precision-based retrieval evaluation: AP@k per query, MAP over query
//! sets, and side-by-side method comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{GroundTruthMatrix, SplitMode};
use crate::error::{Error, Result};
use crate::matrix::{Ranker, RetrievalResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    /// Truth scores at or above this count as relevant.
    pub relevance_threshold: f64,
    pub mode: SplitMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![10, 20, 30],
            relevance_threshold: 3.0,
            mode: SplitMode::OneShot,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values[0] == 0 {
            return Err(Error::config("k_values must be non-empty and positive"));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("k_values must be strictly ascending"));
        }
        if !(self.relevance_threshold > 0.0 && self.relevance_threshold <= 5.0) {
            return Err(Error::config("relevance_threshold must lie in (0, 5]"));
        }
        Ok(())
    }
}

/// AP@k together with the number of relevant items available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApOutcome {
    pub ap: f64,
    pub relevant: usize,
}

impl ApOutcome {
    pub fn zero_relevance(&self) -> bool {
        self.relevant == 0
    }
}

/// AP@k where the relevant count R is taken over `pool` (the query itself
/// is never counted). The sum of precision at each relevant rank within
/// the first k hits is divided by `min(k, R)`; R = 0 gives 0.
pub fn average_precision_in(
    ranking: &RetrievalResult,
    truth: &GroundTruthMatrix,
    pool: &[String],
    threshold: f64,
    k: usize,
) -> Result<ApOutcome> {
    if k < 1 {
        return Err(Error::KOutOfRange { k, max: pool.len() });
    }
    let q = ranking.query_id.as_str();
    let m = truth.matrix();
    let qi = m.position(q).ok_or_else(|| Error::UnknownId(q.to_owned()))?;
    let mut relevant = 0;
    for id in pool {
        if id == q {
            continue;
        }
        let j = m.position(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        if m.get(qi, j) >= threshold {
            relevant += 1;
        }
    }
    if relevant == 0 {
        return Ok(ApOutcome { ap: 0.0, relevant });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, hit) in ranking.hits.iter().take(k).enumerate() {
        let j = m
            .position(&hit.id)
            .ok_or_else(|| Error::UnknownId(hit.id.clone()))?;
        if m.get(qi, j) >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(ApOutcome {
        ap: sum / k.min(relevant) as f64,
        relevant,
    })
}

/// [`average_precision_in`] with every truth id as the pool.
pub fn average_precision(
    ranking: &RetrievalResult,
    truth: &GroundTruthMatrix,
    threshold: f64,
    k: usize,
) -> Result<ApOutcome> {
    average_precision_in(ranking, truth, truth.ids(), threshold, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub k_values: Vec<usize>,
    pub map_at_k: BTreeMap<usize, f64>,
    pub per_query: BTreeMap<String, BTreeMap<usize, f64>>,
    pub zero_relevance_queries: Vec<String>,
}

impl EvalReport {
    pub fn map_at(&self, k: usize) -> Option<f64> {
        self.map_at_k.get(&k).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
            _ => Error::io(path, e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Ranks every query with `ranker`, scores AP at each k against `truth`
/// and averages. The relevant pool of a query is the ranker's id set.
pub fn mean_average_precision(
    ranker: &(dyn Ranker + Sync),
    truth: &GroundTruthMatrix,
    queries: &[String],
    config: &EvalConfig,
    method: &str,
) -> Result<EvalReport> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::Empty("query list"));
    }
    let pool = ranker.ids();
    if pool.len() < 2 {
        return Err(Error::config("ranker must index at least 2 items"));
    }
    let depth = config.k_values.last().copied().unwrap_or(1).min(pool.len() - 1);
    let per_query: Vec<(String, BTreeMap<usize, f64>, bool)> = queries
        .par_iter()
        .map(|q| {
            let ranking = ranker.query(q, depth)?;
            let mut aps = BTreeMap::new();
            let mut zero = false;
            for &k in &config.k_values {
                let outcome = average_precision_in(&ranking, truth, pool, config.relevance_threshold, k)?;
                zero = outcome.zero_relevance();
                aps.insert(k, outcome.ap);
            }
            Ok((q.clone(), aps, zero))
        })
        .collect::<Result<_>>()?;
    let mut map_at_k = BTreeMap::new();
    for &k in &config.k_values {
        let sum: f64 = per_query.iter().map(|(_, aps, _)| aps[&k]).sum();
        map_at_k.insert(k, sum / per_query.len() as f64);
    }
    let zero_relevance_queries: Vec<String> = per_query
        .iter()
        .filter(|(_, _, zero)| *zero)
        .map(|(q, _, _)| q.clone())
        .collect();
    if !zero_relevance_queries.is_empty() {
        log::warn!(
            "{method}: {} of {} queries have no relevant items",
            zero_relevance_queries.len(),
            queries.len()
        );
    }
    Ok(EvalReport {
        method: method.to_owned(),
        k_values: config.k_values.clone(),
        map_at_k,
        per_query: per_query.into_iter().map(|(q, aps, _)| (q, aps)).collect(),
        zero_relevance_queries,
    })
}

/// MAP per method and k, best method (at the smallest k) first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub k_values: Vec<usize>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for k in &self.k_values {
            let _ = write!(out, ",map@{k}");
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(name);
            for v in values {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}", "method");
        for k in &self.k_values {
            let _ = write!(out, "  {:>8}", format!("mAP@{k}"));
        }
        out.push('\n');
        for (name, values) in &self.rows {
            let _ = write!(out, "{name:<width$}");
            for v in values {
                let _ = write!(out, "  {v:>8.4}");
            }
            out.push('\n');
        }
        out
    }

    /// Long-format `method,k,map` rows for plotting mAP against k.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("method,k,map\n");
        for (name, values) in &self.rows {
            for (k, v) in self.k_values.iter().zip(values) {
                let _ = writeln!(out, "{name},{k},{v:.6}");
            }
        }
        out
    }
}

pub fn compare_methods(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or(Error::Empty("reports"))?;
    let k_values = first.k_values.clone();
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        if r.k_values != k_values {
            return Err(Error::config(format!(
                "report {} uses k={:?}, expected {:?}",
                r.method, r.k_values, k_values
            )));
        }
        let values = k_values
            .iter()
            .map(|k| r.map_at(*k).ok_or_else(|| Error::config(format!("report {} lacks k={k}", r.method))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((r.method.clone(), values));
    }
    rows.sort_by(|a, b| b.1[0].total_cmp(&a.1[0]).then_with(|| a.0.cmp(&b.0)));
    Ok(ComparisonTable { k_values, rows })
}
