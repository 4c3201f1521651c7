//! Diagram image retrieval from sketch-pretrained representations.
//!
//! The pipeline learns an unsupervised latent representation of edge maps
//! with a convolutional VAE, fine-tunes the encoder with a Siamese triplet
//! objective on a small labeled similarity matrix, and answers top-k
//! queries from a normalized 0–5 similarity matrix. Retrieval quality is
//! measured with mean average precision against SSIM and Goldberg
//! signature baselines.

pub mod baselines;
pub mod corpus;
pub mod edgemap;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod index;
pub mod matrix;
pub mod metric;
mod model_io;
mod nn;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod vae;

pub use corpus::{
    binary_matrix_from_labels, load_idx, load_manifest, load_similarity_matrix, split_corpus,
    Corpus, GroundTruthMatrix, ImageRecord, IngestOptions, Split, SplitMode, SplitSpec,
};
pub use error::{Error, Result};
pub use eval::{average_precision, compare_methods, mean_average_precision, EvalConfig, EvalReport};
pub use index::{build_index, pairwise_similarity, SimilarityIndex, SimilarityMetric};
pub use matrix::{Hit, Ranker, RetrievalResult, ScoreMatrix};
pub use metric::{
    mine_triplets, train_siamese, triplet_loss, EmbeddingVector, MetricConfig, SiameseModel,
    TripletSample,
};
pub use raster::Raster;
pub use vae::{kl_divergence, reconstruction_loss, sample_latent, train_vae, LatentStats, Trained, VaeConfig, VaeModel};
