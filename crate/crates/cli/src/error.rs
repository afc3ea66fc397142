use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration; one diagnostic per line.
    #[error("{}", .0.join("\n"))]
    Schema(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn schema(msg: impl Into<String>) -> Self {
        CliError::Schema(vec![msg.into()])
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Schema(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
            CliError::Io(_) => ExitCode::from(4),
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(
    paracoupler::circuit::CircuitError,
    paracoupler::floquet::FloquetError,
    paracoupler::dynamics::DynamicsError,
    paracoupler::rbsim::RbError,
    paracoupler::protocols::ProtocolError
);
