use thiserror::Error;

/// Unified error type for the library surface. Binaries wrap this in `anyhow`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("language backend error: {0}")]
    Lang(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint is incompatible with the active config: {0}")]
    CheckpointMismatch(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
