use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad result file or bad environment; exit code 2.
    #[error("validation error: {0}")]
    Validation(String),

    /// A library routine failed while the experiment ran; exit code 3.
    #[error("numerical failure in {module}: {source}")]
    Numerical {
        module: &'static str,
        #[source]
        source: met_core::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Numerical { .. } => 3,
            Self::Io { .. } => 1,
        }
    }
}

/// Tags a library error with the module that raised it.
pub fn numerical(module: &'static str) -> impl Fn(met_core::Error) -> CliError {
    move |source| CliError::Numerical { module, source }
}

/// Library errors while building inputs from a config are validation errors.
pub fn invalid(field: &'static str) -> impl Fn(met_core::Error) -> CliError {
    move |e| CliError::Validation(format!("{field}: {e}"))
}
