//! Wake-word spotting toolkit: multi-condition audio augmentation,
//! lexicon-filtered semi-supervised mining, a compact feed-forward spotter
//! and DET-curve evaluation.

pub mod audio;
pub mod augment;
pub mod decode;
pub mod demo;
pub mod error;
pub mod exec;
pub mod features;
pub mod lexicon;
pub mod mining;
pub mod spotter;

pub use error::{Error, Result};
