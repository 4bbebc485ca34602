use ntcp_msm::msm::MsmError;
use ntcp_msm::sim::SimError;
use ntcp_msm::DvhError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input file, config or flag.
    #[error("{0}")]
    Validation(String),
    /// Fitting, estimation, oracle or output failure.
    #[error("{0}")]
    Compute(String),
    #[error("{0}")]
    Positivity(String),
    #[error("{0}")]
    Bootstrap(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Compute(_) => 3,
            CliError::Positivity(_) => 4,
            CliError::Bootstrap(_) => 5,
        }
    }
}

impl From<DvhError> for CliError {
    fn from(e: DvhError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MsmError> for CliError {
    fn from(e: MsmError) -> Self {
        match e {
            MsmError::InvalidSpec(_)
            | MsmError::InvalidIntervention(_)
            | MsmError::Dvh(_)
            | MsmError::EmptyStratum(_) => CliError::Validation(e.to_string()),
            MsmError::BootstrapFailed { .. } => CliError::Bootstrap(e.to_string()),
            MsmError::Surface(_) | MsmError::Numerical(_) | MsmError::DegenerateDenominator(_) => {
                CliError::Compute(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::Dvh(_) => CliError::Validation(e.to_string()),
            SimError::Msm(inner) => inner.into(),
            SimError::Oracle(_) | SimError::TooManyFailures { .. } => CliError::Compute(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_taxonomy() {
        let code = |e: MsmError| CliError::from(e).exit_code();
        assert_eq!(code(MsmError::InvalidSpec("x".into())), 2);
        assert_eq!(code(MsmError::Numerical("x".into())), 3);
        assert_eq!(code(MsmError::BootstrapFailed { failed: 3, total: 10 }), 5);
        assert_eq!(CliError::from(SimError::InvalidConfig("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(SimError::Msm(MsmError::BootstrapFailed { failed: 1, total: 2 })).exit_code(), 5);
        assert_eq!(CliError::Positivity("w".into()).exit_code(), 4);
    }
}
