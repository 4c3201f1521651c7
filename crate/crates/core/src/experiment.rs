//! Seeded comparison runs on the synthetic glyph benchmark: the proposed
//! model in both split modes, a randomly initialized encoder, and the
//! classical baselines, all scored on the same query partition.

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::corpus::{binary_matrix_from_labels, split_corpus, Split, SplitMode, SplitSpec};
use crate::error::Result;
use crate::eval::{EvalConfig, EvalReport};
use crate::index::SimilarityMetric;
use crate::metric::{fit_siamese, mine_for_split, train_siamese, MetricConfig, MinedTriplets, SiameseModel};
use crate::nn::derive_seed;
use crate::pipeline::{evaluate_baseline, evaluate_embeddings};
use crate::synth::{desk_benchmark, generate, SynthConfig};
use crate::vae::{train_vae, VaeConfig};

pub const PROPOSED_ONE_SHOT: &str = "proposed_one_shot";
pub const PROPOSED_ZERO_SHOT: &str = "proposed_zero_shot";
pub const RANDOM_INIT: &str = "random_init_one_shot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub synth: SynthConfig,
    /// Size of a separate unlabeled pretraining set; `None` pretrains on
    /// the images of the train partition.
    pub pretrain_images: Option<usize>,
    pub train_fraction: f64,
    pub vae: VaeConfig,
    pub metric: MetricConfig,
    pub eval: EvalConfig,
    pub similarity: SimilarityMetric,
    pub baselines: Vec<BaselineMethod>,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                images: 2500,
                ..SynthConfig::default()
            },
            pretrain_images: None,
            train_fraction: 0.8,
            vae: VaeConfig {
                conv_layers: 3,
                epochs: 8,
                ..VaeConfig::default()
            },
            metric: MetricConfig {
                epochs: 4,
                triplets_per_anchor: 4,
                ..MetricConfig::default()
            },
            eval: EvalConfig::default(),
            similarity: SimilarityMetric::Cosine,
            baselines: vec![BaselineMethod::Ssim, BaselineMethod::Goldberg],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskRun {
    pub seed: u64,
    pub split: Split,
    pub one_shot_triplets: MinedTriplets,
    pub zero_shot_triplets: MinedTriplets,
    pub reports: Vec<EvalReport>,
}

impl DeskRun {
    pub fn report(&self, method: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// One seeded run. The same query partition is used for every method; the
/// split mode only changes which pairs the triplet miner may use.
pub fn run_desk(config: &DeskConfig, seed: u64) -> Result<DeskRun> {
    let synth = SynthConfig {
        seed,
        ..config.synth.clone()
    };
    let (pretrain, labeled, truth) = match config.pretrain_images {
        Some(n) => {
            let b = desk_benchmark(&synth, n)?;
            (Some(b.pretrain), b.labeled, b.truth)
        }
        None => {
            let labeled = generate(&synth, "")?;
            let truth = binary_matrix_from_labels(&labeled)?;
            (None, labeled, truth)
        }
    };
    let vae_cfg = VaeConfig {
        seed: derive_seed(seed, 21, 0),
        ..config.vae.clone()
    };
    let metric = MetricConfig {
        seed: derive_seed(seed, 22, 0),
        ..config.metric.clone()
    };
    let spec = |mode| SplitSpec {
        mode,
        train_fraction: config.train_fraction,
        seed: derive_seed(seed, 23, 0),
    };
    let one_shot = split_corpus(&truth, &spec(SplitMode::OneShot))?;
    let zero_shot = split_corpus(&truth, &spec(SplitMode::ZeroShot))?;
    let queries = one_shot.query_ids.clone();

    let pretrain = match pretrain {
        Some(p) => p,
        None => labeled.subset(&one_shot.train_ids)?,
    };
    log::info!("seed {seed}: pretraining on {} images", pretrain.len());
    let vae = train_vae(&pretrain, &vae_cfg)?.model;
    let os_triplets = mine_for_split(&truth, &one_shot, &metric, metric.seed)?;
    let zs_triplets = mine_for_split(&truth, &zero_shot, &metric, metric.seed)?;

    let eval = |mode| EvalConfig {
        mode,
        ..config.eval.clone()
    };
    let mut reports = Vec::new();
    let mut score = |model: &SiameseModel, name: &str, mode| -> Result<()> {
        let emb = model.embed_corpus(&labeled)?;
        reports.push(evaluate_embeddings(&emb, config.similarity, &truth, &queries, &eval(mode), name)?);
        Ok(())
    };
    let os = train_siamese(&vae, &labeled, &os_triplets.triplets, &metric)?.model;
    score(&os, PROPOSED_ONE_SHOT, SplitMode::OneShot)?;
    let zs = train_siamese(&vae, &labeled, &zs_triplets.triplets, &metric)?.model;
    score(&zs, PROPOSED_ZERO_SHOT, SplitMode::ZeroShot)?;
    let random = SiameseModel::with_random_encoder(vae.encoder_spec(), &metric, derive_seed(seed, 24, 0))?;
    let random = fit_siamese(random, &labeled, &os_triplets.triplets)?.model;
    score(&random, RANDOM_INIT, SplitMode::OneShot)?;

    for &method in &config.baselines {
        reports.push(evaluate_baseline(
            &labeled,
            method,
            &BaselineConfig::default(),
            &truth,
            &queries,
            &eval(SplitMode::OneShot),
        )?);
    }
    for r in &reports {
        log::info!("seed {seed}: {} mAP {:?}", r.method, r.map_at_k);
    }
    Ok(DeskRun {
        seed,
        split: zero_shot,
        one_shot_triplets: os_triplets,
        zero_shot_triplets: zs_triplets,
        reports,
    })
}

/// Per-method mean of `map_at_k` over several runs, in first-run order.
pub fn mean_reports(runs: &[DeskRun]) -> Vec<EvalReport> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .reports
        .iter()
        .map(|r| {
            let mut mean = r.clone();
            mean.per_query.clear();
            mean.zero_relevance_queries.clear();
            for (k, v) in mean.map_at_k.iter_mut() {
                *v = runs
                    .iter()
                    .filter_map(|run| run.report(&r.method).and_then(|x| x.map_at(*k)))
                    .sum::<f64>()
                    / runs.len() as f64;
            }
            mean
        })
        .collect()
}
