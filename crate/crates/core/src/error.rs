use thiserror::Error;

use crate::audio::AudioError;
use crate::augment::AugmentError;
use crate::decode::DecodeError;
use crate::features::FeatureError;
use crate::lexicon::LexiconError;
use crate::mining::MineError;
use crate::spotter::SpotterError;

/// Any failure surfaced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error(transparent)]
    Spotter(#[from] SpotterError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
