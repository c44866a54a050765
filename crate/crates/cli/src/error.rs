use far_core::FarError;

/// A failed command; the variant decides the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or missing input data (exit 2).
    Input(String),
    /// Invalid configuration (exit 3).
    Config(String),
    /// Solver did not converge under `--strict` (exit 4).
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 2,
            Self::Config(_) => 3,
            Self::NotConverged(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Config(m) | Self::NotConverged(m) => m,
        }
    }
}

impl From<FarError> for CliError {
    fn from(e: FarError) -> Self {
        match e {
            FarError::InvalidTuning(_) | FarError::InvalidPenalty(_) | FarError::InvalidDimension { .. } => {
                Self::Config(e.to_string())
            }
            _ => Self::Input(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Input(e.to_string())
    }
}
