//! Manifests, length-sorted batching and parallel featurization.

mod batch;
mod manifest;
mod prefetch;

use thiserror::Error;

pub use batch::{
    shuffle_batches, sort_and_batch, AudioSource, Batch, BatchBuilder, BatchSpec, InMemoryAudio, TargetEncoder,
    WavFiles, TARGET_PAD,
};
pub use manifest::{Manifest, ManifestEntry};
pub use prefetch::Prefetcher;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{file}:{line}: {message}")]
    Manifest { file: String, line: usize, message: String },
    #[error("batch {batch}, utterance {id}: {message}")]
    Utterance { batch: usize, id: String, message: String },
}
