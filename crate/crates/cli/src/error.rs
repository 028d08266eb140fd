use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{stage} failed: {message}")]
    Pipeline { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Pipeline { .. } => EXIT_PIPELINE,
        }
    }

    pub fn pipeline(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Pipeline {
            stage,
            message: err.to_string(),
        }
    }

    pub fn input(what: &str, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{what}: {err}"))
    }
}
