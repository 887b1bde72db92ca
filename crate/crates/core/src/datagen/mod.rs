//! Reproducible mixture datasets: onset detection, clip extraction and
//! looping, file-level partitioning, K-way mixing, and a synthetic corpus.
//!
//! A dataset is described by a line-delimited JSON manifest. Every random
//! draw (file choice, event, offset, loop gap) is made while building the
//! manifest and stored in it, so rendering is a pure function of the
//! manifest and the corpus.

mod clip;
mod corpus;
mod events;
mod manifest;
mod render;

pub use clip::{draw_placement, extract_clip, place_clip, ClipParams, ClipPlacement};
pub use corpus::{
    index_corpus, read_exclusion_list, write_synthetic_corpus, CorpusFile, CorpusIndex, SyntheticProfile,
};
pub use events::{detect_events, EventList, DEFAULT_RMS_WINDOW_S};
pub use manifest::{
    build_manifest, partition_files, DatasetManifest, DrawPolicy, ManifestHeader, MixtureRecipe, SourceDraw, Split,
    SplitCounts,
};
pub use render::{load_split, render_dataset, render_mixture, MixtureExample, REFERENCE_GRID};

use thiserror::Error;

use crate::signal::AudioError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("split {split} has {have} files, {need} needed")]
    TooFewFiles { split: Split, have: usize, need: usize },
    #[error("file {0} is not in the corpus index")]
    MissingFile(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}
