use akd_core::Error as CoreError;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HarnessError>,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
}

impl HarnessError {
    pub fn stage(stage: impl Into<String>) -> impl FnOnce(HarnessError) -> HarnessError {
        let stage = stage.into();
        move |e| HarnessError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Name of the innermost failing stage, if any.
    pub fn failed_stage(&self) -> Option<&str> {
        match self {
            HarnessError::Stage { stage, source } => source.failed_stage().or(Some(stage)),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => exit::CONFIG,
            HarnessError::Data(_) | HarnessError::Io(_) => exit::DATA,
            HarnessError::Stage { source, .. } => source.exit_code(),
            HarnessError::Core(e) => match e {
                CoreError::Config(_) => exit::CONFIG,
                CoreError::Data(_)
                | CoreError::VocabMismatch { .. }
                | CoreError::Format { .. }
                | CoreError::Length { .. }
                | CoreError::Io(_) => exit::DATA,
                CoreError::Divergence { .. } => exit::DIVERGENCE,
                _ => exit::OTHER,
            },
        }
    }
}
