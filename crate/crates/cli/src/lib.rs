//! Library side of `sweepctl`: problem files, the builtin registry,
//! certificate I/O and the subcommands themselves.

pub mod certio;
pub mod commands;
pub mod problem;
pub mod registry;

use sweep_core::dynamics::DynamicsError;
use sweep_core::expr::ExprError;
use sweep_core::ocp::OcpError;
use sweep_core::pmp::PmpError;
use sweep_core::sweepset::SweepError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for numerical failures, 2 for everything the user must fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 1,
            _ => 2,
        }
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Expr(_) | SweepError::Invalid(_) | SweepError::Schedule(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Expr(e) => e.into(),
            DynamicsError::Set(e) => e.into(),
            DynamicsError::Invalid(_) | DynamicsError::GridMismatch => CliError::Schema(e.to_string()),
            DynamicsError::Precondition(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<OcpError> for CliError {
    fn from(e: OcpError) -> Self {
        match e {
            OcpError::Expr(e) => e.into(),
            OcpError::Set(e) => e.into(),
            OcpError::Dynamics(e) => e.into(),
            OcpError::Invalid(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<PmpError> for CliError {
    fn from(e: PmpError) -> Self {
        match e {
            PmpError::Expr(e) => e.into(),
            PmpError::Set(e) => e.into(),
            PmpError::Dynamics(e) => e.into(),
            PmpError::GridMismatch(_) => CliError::Schema(e.to_string()),
        }
    }
}
