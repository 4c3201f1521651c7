//! End-to-end orchestration: ingest, edge maps, VAE pretraining, triplet
//! fine-tuning, embedding, indexing and evaluation, each persisted under
//! one output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_matrix, BaselineConfig, BaselineMethod};
use crate::corpus::{
    binary_matrix_from_labels, load_manifest, load_similarity_matrix, split_corpus, Binarize, Corpus,
    GroundTruthMatrix, IngestOptions, Split, SplitSpec,
};
use crate::edgemap::{edge_map_corpus, load_precomputed, EdgeMapConfig, EdgeMethod};
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, EvalConfig, EvalReport};
use crate::index::{build_index, read_embeddings, write_embeddings, SimilarityIndex, SimilarityMetric};
use crate::matrix::ScoreMatrix;
use crate::metric::{mine_for_split, train_siamese, EmbeddingVector, MetricConfig, MinedTriplets, SiameseModel};
use crate::vae::{train_vae, VaeConfig, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Labeled corpus manifest.
    pub manifest: PathBuf,
    /// Optional unlabeled corpus for pretraining; the labeled corpus is
    /// used when absent.
    pub pretrain_manifest: Option<PathBuf>,
    /// Ground-truth similarity CSV; derived from class labels when absent.
    pub matrix: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub ingest: IngestOptions,
    /// `None` treats the inputs as edge maps already.
    pub edgemap: Option<EdgeMapConfig>,
    /// Directory of precomputed edge maps for [`EdgeMethod::Precomputed`].
    pub edge_dir: Option<PathBuf>,
    pub vae: VaeConfig,
    pub metric: MetricConfig,
    pub eval: EvalConfig,
    pub split: SplitSpec,
    pub similarity: SimilarityMetric,
    /// Rerun stages whose outputs already exist.
    pub force: bool,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            pretrain_manifest: None,
            matrix: None,
            out_dir: out_dir.into(),
            ingest: IngestOptions::default(),
            edgemap: None,
            edge_dir: None,
            vae: VaeConfig::default(),
            metric: MetricConfig::default(),
            eval: EvalConfig::default(),
            split: SplitSpec::default(),
            similarity: SimilarityMetric::Cosine,
            force: false,
        }
    }

    pub fn paths(&self) -> ArtifactPaths {
        ArtifactPaths::under(&self.out_dir)
    }
}

/// Where each stage persists its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub edges: PathBuf,
    pub pretrain_edges: PathBuf,
    pub split: PathBuf,
    pub vae: PathBuf,
    pub siamese: PathBuf,
    pub triplets: PathBuf,
    pub embeddings: PathBuf,
    pub index: PathBuf,
    pub report: PathBuf,
}

impl ArtifactPaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges"),
            pretrain_edges: dir.join("pretrain_edges"),
            split: dir.join("split.json"),
            vae: dir.join("vae.model"),
            siamese: dir.join("siamese.model"),
            triplets: dir.join("triplets.json"),
            embeddings: dir.join("embeddings.csv"),
            index: dir.join("index.csv"),
            report: dir.join("report.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvalReport,
    /// Stages that ran, in order; the rest were satisfied from disk.
    pub executed: Vec<&'static str>,
    pub paths: ArtifactPaths,
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn edge_corpus(
    corpus: &Corpus,
    cfg: &EdgeMapConfig,
    edge_dir: Option<&Path>,
    out: &Path,
    reuse: bool,
) -> Result<(Corpus, bool)> {
    let manifest = out.join("manifest.jsonl");
    if reuse && manifest.exists() {
        let opts = IngestOptions {
            resolution: corpus.resolution(),
            resize: false,
            binarize: Binarize::Never,
        };
        return Ok((load_manifest(&manifest, &opts)?, false));
    }
    let edges = match cfg.method {
        EdgeMethod::Classical => edge_map_corpus(corpus, cfg)?,
        EdgeMethod::Precomputed => {
            let dir = edge_dir.ok_or_else(|| Error::config("precomputed edge maps need an edge_dir"))?;
            load_precomputed(dir, corpus, true)?
        }
    };
    edges.write_to_dir(out)?;
    Ok((edges, true))
}

/// Runs every stage in order. Stages whose artifact already exists are
/// loaded instead of recomputed unless `force` is set.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    let paths = config.paths();
    let reuse = !config.force;
    let mut executed = Vec::new();
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let (corpus, pretrain, truth) = stage("ingest", || {
        let corpus = load_manifest(&config.manifest, &config.ingest)?;
        let pretrain = config
            .pretrain_manifest
            .as_deref()
            .map(|p| load_manifest(p, &config.ingest))
            .transpose()?;
        let truth = match &config.matrix {
            Some(p) => load_similarity_matrix(p, &corpus)?,
            None => binary_matrix_from_labels(&corpus)?,
        };
        Ok((corpus, pretrain, truth))
    })?;
    executed.push("ingest");

    let (corpus, pretrain) = match &config.edgemap {
        None => (corpus, pretrain),
        Some(cfg) => stage("edgemap", || {
            cfg.validate()?;
            let dir = config.edge_dir.as_deref();
            let (edges, ran_a) = edge_corpus(&corpus, cfg, dir, &paths.edges, reuse)?;
            let (pre, ran_b) = match &pretrain {
                Some(p) => {
                    let (e, ran) = edge_corpus(p, cfg, dir, &paths.pretrain_edges, reuse)?;
                    (Some(e), ran)
                }
                None => (None, false),
            };
            if ran_a || ran_b {
                executed.push("edgemap");
            }
            Ok((edges, pre))
        })?,
    };

    let split = stage("split", || {
        if reuse && paths.split.exists() {
            let split = Split::load(&paths.split)?;
            if split.mode == config.split.mode {
                return Ok(split);
            }
        }
        let split = split_corpus(&truth, &config.split)?;
        split.save(&paths.split)?;
        executed.push("split");
        Ok(split)
    })?;

    let vae = stage("pretrain", || {
        if reuse && paths.vae.exists() {
            return VaeModel::load(&paths.vae);
        }
        let trained = train_vae(pretrain.as_ref().unwrap_or(&corpus), &config.vae)?;
        trained.model.save(&paths.vae)?;
        executed.push("pretrain");
        Ok(trained.model)
    })?;

    let siamese = stage("finetune", || {
        if reuse && paths.siamese.exists() {
            return SiameseModel::load(&paths.siamese);
        }
        let mined = mine_for_split(&truth, &split, &config.metric, config.metric.seed)?;
        log::info!(
            "mined {} triplets ({} anchors skipped)",
            mined.triplets.len(),
            mined.skipped_anchors
        );
        let body = serde_json::to_string(&mined)?;
        std::fs::write(&paths.triplets, body).map_err(|e| Error::io(&paths.triplets, e))?;
        let trained = train_siamese(&vae, &corpus, &mined.triplets, &config.metric)?;
        trained.model.save(&paths.siamese)?;
        executed.push("finetune");
        Ok(trained.model)
    })?;

    let embeddings = stage("embed", || {
        if reuse && paths.embeddings.exists() {
            return read_embeddings(&paths.embeddings);
        }
        let e = siamese.embed_corpus(&corpus)?;
        write_embeddings(&paths.embeddings, &e)?;
        executed.push("embed");
        Ok(e)
    })?;

    let index = stage("index", || {
        if reuse && paths.index.exists() {
            return SimilarityIndex::load(&paths.index);
        }
        let index = build_index(&embeddings, config.similarity)?;
        index.save(&paths.index)?;
        executed.push("index");
        Ok(index)
    })?;

    let report = stage("eval", || {
        if reuse && paths.report.exists() {
            return EvalReport::load(&paths.report);
        }
        let eval = EvalConfig {
            mode: split.mode,
            ..config.eval.clone()
        };
        let report = evaluate_matrix(index.matrix(), &truth, &split.query_ids, &eval, &format!("proposed_{}", split.mode))?;
        report.save(&paths.report)?;
        executed.push("eval");
        Ok(report)
    })?;

    Ok(PipelineOutput {
        report,
        executed,
        paths,
    })
}

/// Reads the triplets persisted by the finetune stage.
pub fn load_triplets(path: &Path) -> Result<MinedTriplets> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// MAP of `matrix` restricted to `queries`, each query ranked against the
/// other queries only.
pub fn evaluate_matrix(
    matrix: &ScoreMatrix,
    truth: &GroundTruthMatrix,
    queries: &[String],
    eval: &EvalConfig,
    method: &str,
) -> Result<EvalReport> {
    let restricted = matrix.restrict(queries)?;
    mean_average_precision(&restricted, truth, queries, eval, method)
}

/// Builds an index over the embeddings of `queries` and evaluates it.
pub fn evaluate_embeddings(
    embeddings: &[EmbeddingVector],
    metric: SimilarityMetric,
    truth: &GroundTruthMatrix,
    queries: &[String],
    eval: &EvalConfig,
    method: &str,
) -> Result<EvalReport> {
    let keep = queries
        .iter()
        .map(|q| {
            embeddings
                .iter()
                .find(|e| &e.id == q)
                .cloned()
                .ok_or_else(|| Error::UnknownId(q.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let index = build_index(&keep, metric)?;
    mean_average_precision(&index, truth, queries, eval, method)
}

/// Baseline matrix over the query images only, evaluated like the index.
pub fn evaluate_baseline(
    corpus: &Corpus,
    method: BaselineMethod,
    config: &BaselineConfig,
    truth: &GroundTruthMatrix,
    queries: &[String],
    eval: &EvalConfig,
) -> Result<EvalReport> {
    let subset = corpus.subset(queries)?;
    let matrix = baseline_matrix(&subset, method, config)?;
    mean_average_precision(&matrix, truth, queries, eval, &method.to_string())
}
