//! Multi-condition augmentation: synthetic room impulse responses,
//! reverberation, additive corruption at a target SNR, and the stratified
//! mixing recipe that pools clean, reverberant and noisy renditions.

mod corrupt;
mod mix;
mod reverb;
mod rir;

use thiserror::Error;

use crate::audio::AudioError;

pub use corrupt::{corrupt, corrupt_with_rng, fit_to_length, CorruptionSpec, Corrupted};
pub use mix::{
    build_mixed_dataset, plan_mixed_dataset, read_manifest, render_job, write_manifest, Condition,
    ManifestRow, MixJob, MixRecipe, MixSources, RenderedJob,
};
pub use reverb::{convolve_direct, convolve_truncated, reverberate};
pub use rir::{
    image_sources, synthesize_rir, truncate_tail, ImageSource, RirFilter, RoomSampler, RoomSpec, MAX_ORDER,
};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid room: {0}")]
    Room(String),
    #[error("invalid impulse response: {0}")]
    Rir(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("{0} interference has zero power but a non-zero share of the mix")]
    SilentInterference(&'static str),
    #[error("clean signal has zero power; SNR is undefined")]
    SilentSignal,
    #[error("invalid corruption spec: {0}")]
    Spec(String),
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error("empty {0} pool")]
    EmptyPool(&'static str),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
