//! Compact feed-forward wake-word spotter.
//!
//! Each hidden block is a linear bottleneck (a low-rank factor of the full
//! weight matrix, no bias or nonlinearity) followed by an affine layer and a
//! ReLU. A 2-way softmax sits on top; class 1 is the wake word.

mod checkpoint;
mod dataset;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use checkpoint::{decode_model, encode_model, load_model, load_spotter, save_model, Encoding, FORMAT_VERSION};
pub use dataset::{FeatureScaler, FrameDataset, FrameRecord, UtteranceFrames};
pub use loss::{effective_target, frame_loss, ssl_loss, LossValue, PROB_CLAMP};
pub use model::{gradient, Batch, Block, ModelShape, Params, SpotterModel, WW_CLASS};
pub use train::{train, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum SpotterError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
