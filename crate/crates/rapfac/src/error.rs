use rapfac_core::Error as CoreError;

/// Failure of a CLI verb, with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid config: {0}")]
    Parse(String),

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("resource refusal: {0}")]
    Resource(String),

    #[error("runs cannot be compared: {0}")]
    Mismatch(String),

    #[error("{0}")]
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } | AppError::Parse(_) | AppError::Mismatch(_) => 2,
            AppError::Instability(_) => 3,
            AppError::Resource(_) => 4,
            AppError::Io(_) => 1,
        }
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> AppError {
        AppError::Io(format!("{context}: {e}"))
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> AppError {
        let message = e.to_string();
        match e.root() {
            CoreError::InvalidConfig { field, reason } => AppError::Config {
                field: field.to_string(),
                reason: if message.starts_with("invalid configuration") {
                    reason.clone()
                } else {
                    message
                },
            },
            CoreError::InvalidArgument(_) => AppError::Config {
                field: "run".into(),
                reason: message,
            },
            CoreError::NumericalInstability { .. } => AppError::Instability(message),
            CoreError::ResourceLimit(_) => AppError::Resource(message),
            _ => AppError::Io(message),
        }
    }
}
