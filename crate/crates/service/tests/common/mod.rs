#![allow(dead_code)]

use std::path::{Path, PathBuf};

use diagsearch::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use diagsearch::synth::{generate, SynthConfig};
use diagsearch_service::cli::{run, Cli};
use clap::Parser;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub output: PipelineOutput,
}

/// A 60-glyph corpus at 16x16 pushed through the quick pipeline.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(
        &SynthConfig {
            classes: 4,
            images: 60,
            resolution: (16, 16),
            stroke_width: 1.2,
            ..SynthConfig::default()
        },
        "",
    )
    .unwrap();
    let manifest = corpus.write_to_dir(&dir.path().join("data")).unwrap();
    let mut cfg = PipelineConfig::new(&manifest, dir.path().join("out"));
    cfg.ingest.resolution = (16, 16);
    cfg.vae.conv_layers = 2;
    cfg.vae.latent_dim = 8;
    cfg.vae.epochs = 2;
    cfg.vae.batch_size = 16;
    cfg.metric.epochs = 2;
    cfg.metric.head_dims = vec![8];
    cfg.metric.batch_size = 16;
    cfg.metric.triplets_per_anchor = 3;
    let output = run_pipeline(&cfg).unwrap();
    Fixture { dir, manifest, output }
}

pub fn image_path(manifest: &Path, id: &str) -> PathBuf {
    manifest.parent().unwrap().join(format!("{}.png", diagsearch::corpus::file_stem_for(id)))
}

/// Runs the CLI with `args` and returns its stdout.
pub fn cli(args: &[&str]) -> anyhow::Result<String> {
    let parsed = Cli::try_parse_from(std::iter::once("diagsearch").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
