//! Synthetic training data generation.

mod config;
mod dataset;
mod plan;
mod sample;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ConfigError, GenerationConfig};
pub use dataset::{
    generate_dataset, generate_sample, BackgroundDir, BackgroundProvider, GenerateOptions,
    GenerationSummary, SampleFailure, SampleSidecar, image_file_name,
};
pub use plan::{derive_sample_rng, plan_placements, PlannedSign, SampleRng, MAX_STACK};
pub use sample::{synthesize_sample, PlacedSign, SyntheticSample, TransformRecord};

use crate::corpus::CorpusError;
use crate::dataset_io::DatasetIoError;
use crate::imageops::ImageOpError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no sign group could be placed without overlap")]
    PlacementExhausted,
    #[error("class {0} is not in the catalog")]
    UnknownClass(u32),
    #[error("the background corpus is empty")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    ImageOp(#[from] ImageOpError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
}
