use thiserror::Error;

/// Errors across the experiment stack. Config problems and checkpoint
/// integrity failures are distinguished so the CLI can map them to its
/// documented exit codes.
#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown prompt id '{0}' in scorer target lookup")]
    UnknownPrompt(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("empty prompt set for {0}")]
    EmptyPromptSet(&'static str),
    #[error("aggregate: reports do not share a common scorer set ({0})")]
    MixedScorerSets(String),
    #[error("metrics: row has {got} fields, header has {expected}")]
    InconsistentColumns { expected: usize, got: usize },
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    TomlParse(#[from] toml::de::Error),
    #[error("config serialize: {0}")]
    TomlSerialize(#[from] toml::ser::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code for the CLI: 2 for config errors, 3 for checkpoint
    /// integrity failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::InvalidConfig(_) | LabError::TomlParse(_) => 2,
            LabError::Checkpoint(_) => 3,
            _ => 1,
        }
    }
}
