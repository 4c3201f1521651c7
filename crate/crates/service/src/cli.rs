//! Command-line front end: one subcommand per pipeline stage plus the
//! orchestrated pipeline, the comparison runs and the HTTP service.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diagsearch::baselines::{baseline_matrix, BaselineConfig, BaselineMethod, GoldbergConfig, SsimConfig};
use diagsearch::corpus::Binarize;
use diagsearch::edgemap::{edge_map_corpus, load_precomputed, EdgeMapConfig, EdgeMethod};
use diagsearch::experiment::{mean_reports, run_desk, DeskConfig};
use diagsearch::index::{read_embeddings, write_embeddings, ExternalNormalization};
use diagsearch::metric::mine_for_split;
use diagsearch::pipeline::{evaluate_matrix, run_pipeline, PipelineConfig};
use diagsearch::synth::{generate, SynthConfig};
use diagsearch::{
    binary_matrix_from_labels, build_index, compare_methods, load_manifest, load_similarity_matrix, split_corpus,
    train_siamese, train_vae, Corpus, EvalConfig, EvalReport, GroundTruthMatrix, IngestOptions, MetricConfig,
    RetrievalResult, SiameseModel, SimilarityIndex, SimilarityMetric, Split, SplitMode, SplitSpec, VaeConfig,
    VaeModel,
};

use crate::server::{attach_embeddings, ExternalQuery, Snapshot, SnapshotConfig};

#[derive(Debug, Parser)]
#[command(name = "diagsearch", version, about = "Diagram retrieval with sketch-pretrained embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a corpus to binary edge maps.
    Edgemap(EdgemapArgs),
    /// Train the VAE on a corpus of edge maps.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained encoder with triplets mined from a similarity matrix.
    Finetune(FinetuneArgs),
    /// Embed a corpus with a fine-tuned model.
    Embed(EmbedArgs),
    /// Build the normalized similarity index from embeddings.
    Index(IndexArgs),
    /// Top-k query by indexed id or by external image.
    Query(QueryArgs),
    /// Similarity matrix from a classical baseline.
    Baseline(BaselineArgs),
    /// Mean average precision of an index against ground truth.
    Eval(EvalArgs),
    /// Side-by-side table of evaluation reports.
    Compare(CompareArgs),
    /// Run every stage with persisted, resumable artifacts.
    Pipeline(PipelineArgs),
    /// Serve the index over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic glyph corpus.
    Synth(SynthArgs),
    /// Seeded comparison of the proposed model, ablation and baselines on synthetic glyphs.
    Desk(DeskArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EdgeSource {
    Classical,
    Precomputed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BinarizeArg {
    Auto,
    Always,
    Never,
}

impl From<BinarizeArg> for Binarize {
    fn from(b: BinarizeArg) -> Self {
        match b {
            BinarizeArg::Auto => Binarize::Auto,
            BinarizeArg::Always => Binarize::Always,
            BinarizeArg::Never => Binarize::Never,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Square working resolution in pixels.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub binarize: BinarizeArg,
}

impl IngestArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            resolution: (self.resolution, self.resolution),
            resize: true,
            binarize: self.binarize.into(),
        }
    }
}

fn model_ingest(resolution: (usize, usize), binarize: BinarizeArg) -> IngestOptions {
    IngestOptions {
        resolution,
        resize: true,
        binarize: binarize.into(),
    }
}

#[derive(Debug, Args)]
pub struct EdgemapArgs {
    #[arg(long, value_enum, default_value = "classical")]
    pub method: EdgeSource,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub low: f64,
    #[arg(long, default_value_t = 0.25)]
    pub high: f64,
    #[arg(long)]
    pub invert: bool,
    /// Directory holding `<id>.png` edge maps for `--method precomputed`.
    #[arg(long)]
    pub edge_dir: Option<PathBuf>,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub latent: usize,
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Split file; created when missing, reused when present.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SplitArgs {
    fn resolve(&self, truth: &GroundTruthMatrix, mode: SplitMode) -> anyhow::Result<Split> {
        if let Some(path) = &self.split {
            if path.exists() {
                let mut split = Split::load(path)?;
                split.mode = mode;
                return Ok(split);
            }
        }
        let split = split_corpus(
            truth,
            &SplitSpec {
                mode,
                train_fraction: self.train_fraction,
                seed: self.split_seed,
            },
        )?;
        if let Some(path) = &self.split {
            split.save(path)?;
        }
        Ok(split)
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub vae: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ground-truth CSV; derived from class labels when omitted.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, default_value = "zero_shot")]
    pub mode: SplitMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Comma-separated widths of the projection head.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    pub head: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub triplets_per_anchor: usize,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "auto")]
    pub binarize: BinarizeArg,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub binarize: BinarizeArg,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value = "cosine")]
    pub metric: SimilarityMetric,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Indexed id to query.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub id: Option<String>,
    /// External image file to query; needs `--model`.
    #[arg(long, requires = "model")]
    pub image: Option<PathBuf>,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Embeddings of the indexed images; defaults to `embeddings.csv` beside the index.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Corpus to embed when no embeddings file exists.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Convert the query image to an edge map first.
    #[arg(long)]
    pub edges: bool,
    /// Score external images with the index's stored bounds instead of refitting them.
    #[arg(long)]
    pub stored_bounds: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub binarize: BinarizeArg,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Index or any similarity matrix CSV to evaluate.
    #[arg(long)]
    pub index: PathBuf,
    /// Ground-truth CSV.
    #[arg(long, required_unless_present = "manifest")]
    pub truth: Option<PathBuf>,
    /// Labeled manifest to derive a binary ground truth from.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// File of query ids, one per line, or `all-test` for the split's query partition.
    #[arg(long, default_value = "all-test")]
    pub queries: String,
    #[arg(long, default_value = "zero_shot")]
    pub mode: SplitMode,
    #[arg(short, long, value_delimiter = ',', default_value = "10,20,30")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Method name recorded in the report.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub ingest: IngestArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON pipeline configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub pretrain_manifest: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<SplitMode>,
    /// Classical edge maps before training.
    #[arg(long)]
    pub edges: bool,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Convert uploads (and the corpus, if re-embedded) to edge maps.
    #[arg(long)]
    pub edges: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub binarize: BinarizeArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DeskArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Directory for per-seed reports and the comparison table.
    #[arg(long)]
    pub out: PathBuf,
    /// Labeled images per seed.
    #[arg(long)]
    pub images: Option<usize>,
}

fn load_truth(path: Option<&Path>, corpus: Option<&Corpus>) -> anyhow::Result<GroundTruthMatrix> {
    match (path, corpus) {
        (Some(p), Some(c)) => Ok(load_similarity_matrix(p, c)?),
        (Some(p), None) => Ok(GroundTruthMatrix::new(diagsearch::ScoreMatrix::read_csv(p)?)?),
        (None, Some(c)) => Ok(binary_matrix_from_labels(c)?),
        (None, None) => bail!("need --truth or --manifest"),
    }
}

fn write_ranking(out: &mut dyn Write, result: &RetrievalResult) -> anyhow::Result<()> {
    writeln!(out, "rank,id,score")?;
    for (i, hit) in result.hits.iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, hit.id, hit.score)?;
    }
    Ok(())
}

fn query(args: QueryArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let index = SimilarityIndex::load(&args.index)?;
    let result = match (&args.id, &args.image) {
        (Some(id), _) => diagsearch::Ranker::query(&index, id, args.k)?,
        (None, Some(image)) => {
            let model_path = args.model.as_deref().context("--image needs --model")?;
            let model = SiameseModel::load(model_path)?;
            let ingest = model_ingest(model.resolution(), args.binarize);
            let corpus = args
                .manifest
                .as_deref()
                .map(|m| load_manifest(m, &ingest))
                .transpose()?;
            let edgemap = args.edges.then(EdgeMapConfig::default);
            let emb_path = args
                .embeddings
                .clone()
                .unwrap_or_else(|| args.index.parent().unwrap_or(Path::new(".")).join("embeddings.csv"));
            let index = attach_embeddings(index, &emb_path, &model, corpus.as_ref(), edgemap.as_ref())?;
            let external = ExternalQuery {
                index,
                model,
                ingest,
                edgemap,
                normalization: if args.stored_bounds {
                    ExternalNormalization::StoredBounds
                } else {
                    ExternalNormalization::Extended
                },
            };
            let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
            external.rank_bytes(&bytes, args.k)?
        }
        (None, None) => bail!("need --id or --image"),
    };
    write_ranking(out, &result)
}

fn eval(args: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let matrix = diagsearch::ScoreMatrix::read_csv(&args.index)?;
    let corpus = args
        .manifest
        .as_deref()
        .map(|m| load_manifest(m, &args.ingest.options()))
        .transpose()?;
    let truth = load_truth(args.truth.as_deref(), corpus.as_ref())?;
    let queries: Vec<String> = if args.queries == "all-test" {
        args.split.resolve(&truth, args.mode)?.query_ids
    } else {
        std::fs::read_to_string(&args.queries)
            .with_context(|| format!("reading {}", args.queries))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()
    };
    let cfg = EvalConfig {
        k_values: args.k,
        relevance_threshold: args.threshold,
        mode: args.mode,
    };
    let name = args.name.unwrap_or_else(|| {
        args.index
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "index".into())
    });
    let report = evaluate_matrix(&matrix, &truth, &queries, &cfg, &name)?;
    if let Some(path) = &args.out {
        report.save(path)?;
    }
    print_report(out, &report)
}

fn print_report(out: &mut dyn Write, report: &EvalReport) -> anyhow::Result<()> {
    for (k, v) in &report.map_at_k {
        writeln!(out, "{} mAP@{k} = {v:.4}", report.method)?;
    }
    if !report.zero_relevance_queries.is_empty() {
        writeln!(out, "{} queries without relevant items", report.zero_relevance_queries.len())?;
    }
    Ok(())
}

fn pipeline(args: PipelineArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<PipelineConfig>(&text)?
        }
        None => PipelineConfig::new(
            args.manifest.clone().context("--manifest is required")?,
            args.out.clone().context("--out is required")?,
        ),
    };
    if let Some(m) = args.manifest {
        cfg.manifest = m;
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    if args.matrix.is_some() {
        cfg.matrix = args.matrix;
    }
    if args.pretrain_manifest.is_some() {
        cfg.pretrain_manifest = args.pretrain_manifest;
    }
    if let Some(mode) = args.mode {
        cfg.split.mode = mode;
    }
    if args.edges {
        cfg.edgemap = Some(EdgeMapConfig::default());
    }
    if let Some(r) = args.resolution {
        cfg.ingest.resolution = (r, r);
    }
    cfg.force |= args.force;
    let result = run_pipeline(&cfg)?;
    writeln!(out, "stages run: {}", result.executed.join(", "))?;
    print_report(out, &result.report)
}

fn desk(args: DeskArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut cfg = DeskConfig::default();
    if let Some(n) = args.images {
        cfg.synth.images = n;
    }
    std::fs::create_dir_all(&args.out)?;
    let mut runs = Vec::new();
    for &seed in &args.seeds {
        let run = run_desk(&cfg, seed)?;
        for r in &run.reports {
            r.save(&args.out.join(format!("seed{seed}_{}.json", r.method)))?;
        }
        runs.push(run);
    }
    let table = compare_methods(&mean_reports(&runs))?;
    std::fs::write(args.out.join("comparison.csv"), table.to_csv())?;
    std::fs::write(args.out.join("series.csv"), table.series_csv())?;
    write!(out, "{}", table.to_text())?;
    Ok(())
}

/// Runs one command, writing user-facing output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Edgemap(a) => {
            let corpus = load_manifest(&a.input, &a.ingest.options())?;
            let cfg = EdgeMapConfig {
                method: match a.method {
                    EdgeSource::Classical => EdgeMethod::Classical,
                    EdgeSource::Precomputed => EdgeMethod::Precomputed,
                },
                low_threshold: a.low,
                high_threshold: a.high,
                invert: a.invert,
            };
            cfg.validate()?;
            let edges = match cfg.method {
                EdgeMethod::Classical => edge_map_corpus(&corpus, &cfg)?,
                EdgeMethod::Precomputed => {
                    load_precomputed(a.edge_dir.as_deref().context("--edge-dir is required")?, &corpus, true)?
                }
            };
            let manifest = edges.write_to_dir(&a.out)?;
            writeln!(out, "wrote {} edge maps, manifest {}", edges.len(), manifest.display())?;
        }
        Command::Pretrain(a) => {
            let corpus = load_manifest(&a.manifest, &a.ingest.options())?;
            let cfg = VaeConfig {
                conv_layers: a.layers,
                latent_dim: a.latent,
                batch_size: a.batch,
                learning_rate: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                kl_weight: a.kl_weight,
            };
            let trained = train_vae(&corpus, &cfg)?;
            trained.model.save(&a.out)?;
            for (epoch, loss) in trained.curve.iter().enumerate() {
                writeln!(out, "epoch {} loss {loss:.6}", epoch + 1)?;
            }
        }
        Command::Finetune(a) => {
            let vae = VaeModel::load(&a.vae)?;
            let corpus = load_manifest(&a.manifest, &model_ingest(vae.resolution(), a.binarize))?;
            let truth = load_truth(a.matrix.as_deref(), Some(&corpus))?;
            let split = a.split.resolve(&truth, a.mode)?;
            let cfg = MetricConfig {
                margin: a.margin,
                batch_size: a.batch,
                learning_rate: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                freeze_encoder: a.freeze_encoder,
                head_dims: a.head,
                triplets_per_anchor: a.triplets_per_anchor,
                ..MetricConfig::default()
            };
            let mined = mine_for_split(&truth, &split, &cfg, cfg.seed)?;
            writeln!(
                out,
                "{} triplets from {} train ids ({} anchors skipped)",
                mined.triplets.len(),
                split.train_ids.len(),
                mined.skipped_anchors
            )?;
            let trained = train_siamese(&vae, &corpus, &mined.triplets, &cfg)?;
            trained.model.save(&a.out)?;
            for (epoch, loss) in trained.curve.iter().enumerate() {
                writeln!(out, "epoch {} loss {loss:.6}", epoch + 1)?;
            }
        }
        Command::Embed(a) => {
            let model = SiameseModel::load(&a.model)?;
            let corpus = load_manifest(&a.manifest, &model_ingest(model.resolution(), a.binarize))?;
            let embeddings = model.embed_corpus(&corpus)?;
            write_embeddings(&a.out, &embeddings)?;
            writeln!(out, "wrote {} embeddings of length {}", embeddings.len(), model.embedding_dim())?;
        }
        Command::Index(a) => {
            let embeddings = read_embeddings(&a.embeddings)?;
            let index = build_index(&embeddings, a.metric)?;
            index.save(&a.out)?;
            writeln!(out, "indexed {} items ({})", index.len(), a.metric)?;
        }
        Command::Query(a) => query(a, out)?,
        Command::Baseline(a) => {
            let corpus = load_manifest(&a.manifest, &a.ingest.options())?;
            let cfg = BaselineConfig {
                ssim: SsimConfig {
                    window_size: a.window,
                    ..SsimConfig::default()
                },
                goldberg: GoldbergConfig { grid: a.grid },
            };
            let matrix = baseline_matrix(&corpus, a.method, &cfg)?;
            matrix.write_csv(&a.out)?;
            writeln!(out, "wrote {} matrix over {} images", a.method, corpus.len())?;
        }
        Command::Eval(a) => eval(a, out)?,
        Command::Compare(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| EvalReport::load(p))
                .collect::<diagsearch::Result<Vec<_>>>()?;
            let table = compare_methods(&reports)?;
            if let Some(path) = &a.out {
                std::fs::write(path, table.to_csv())?;
            }
            write!(out, "{}", table.to_text())?;
        }
        Command::Pipeline(a) => pipeline(a, out)?,
        Command::Serve(a) => {
            let snapshot = Snapshot::load(&SnapshotConfig {
                index: a.index,
                model: a.model,
                manifest: a.manifest,
                embeddings: a.embeddings,
                report: a.report,
                edgemap: a.edges.then(EdgeMapConfig::default),
                binarize: a.binarize.into(),
            })?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::server::serve(snapshot, (a.host, a.port).into()))?;
        }
        Command::Synth(a) => {
            let corpus = generate(
                &SynthConfig {
                    classes: a.classes,
                    images: a.images,
                    resolution: (a.resolution, a.resolution),
                    seed: a.seed,
                    ..SynthConfig::default()
                },
                "",
            )?;
            let manifest = corpus.write_to_dir(&a.out)?;
            writeln!(out, "wrote {} glyphs, manifest {}", corpus.len(), manifest.display())?;
        }
        Command::Desk(a) => desk(a, out)?,
    }
    Ok(())
}
