use thiserror::Error;

pub type Result<T> = std::result::Result<T, PdmError>;

#[derive(Debug, Error)]
pub enum PdmError {
    /// A caller broke an operation's precondition (shapes, ranges, invariants).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The instance admits no feasible trajectory (checked before iterating).
    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("did not converge after {iterations} iterations (max residual {max_residual:.3e})")]
    NonConvergence { iterations: usize, max_residual: f64 },

    #[error("reference projector found no feasible point in {restarts} restarts (best violation {best_residual:.3e})")]
    OracleFailure { restarts: usize, best_residual: f64 },

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("parse error in `{field}` at byte {offset}: {message}")]
    Parse {
        field: String,
        offset: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PdmError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        PdmError::Contract(msg.into())
    }

    pub(crate) fn parse(field: impl Into<String>, offset: usize, message: impl Into<String>) -> Self {
        PdmError::Parse {
            field: field.into(),
            offset,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PdmError::Infeasible(_) => 3,
            PdmError::NonConvergence { .. } | PdmError::OracleFailure { .. } => 4,
            _ => 2,
        }
    }
}
