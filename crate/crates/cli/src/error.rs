use uncertainty_core::model::ModelError;

/// Exit code 1 for bad input, 2 for failures while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub trait Context<T> {
    /// Input problems: missing files, schema violations, bad values.
    fn invalid(self, what: impl std::fmt::Display) -> Result<T, CliError>;
    /// Failures after the inputs were accepted.
    fn failed(self, what: impl std::fmt::Display) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn invalid(self, what: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }

    fn failed(self, what: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}

/// Configuration and data-shape errors are the caller's; the rest are runtime.
pub fn from_model(what: &str, e: ModelError) -> CliError {
    match e {
        ModelError::Config(_)
        | ModelError::EmptyDataset
        | ModelError::EmptySplit(_)
        | ModelError::StratumTooSmall { .. }
        | ModelError::MissingParticipant(_)
        | ModelError::Checkpoint(_)
        | ModelError::Feature(_) => CliError::Validation(format!("{what}: {e}")),
        _ => CliError::Runtime(format!("{what}: {e}")),
    }
}
