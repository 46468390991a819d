use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, msg: impl std::fmt::Display) -> Self {
        CliError::Config {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn data(msg: impl std::fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<wwkit::Error> for CliError {
    fn from(e: wwkit::Error) -> Self {
        use wwkit::spotter::SpotterError;
        match &e {
            wwkit::Error::Spotter(SpotterError::Diverged { .. }) => CliError::Runtime(e.to_string()),
            wwkit::Error::Spotter(SpotterError::Io { .. }) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! impl_from_stage {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from(wwkit::Error::from(e))
            }
        })*
    };
}

impl_from_stage!(
    wwkit::audio::AudioError,
    wwkit::augment::AugmentError,
    wwkit::decode::DecodeError,
    wwkit::features::FeatureError,
    wwkit::lexicon::LexiconError,
    wwkit::mining::MineError,
    wwkit::spotter::SpotterError
);

/// Failure writing an output artifact.
pub fn write_failed(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("writing {}: {e}", path.display()))
}

/// Failure reading a stage input.
pub fn read_failed(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("reading {}: {e}", path.display()))
}
