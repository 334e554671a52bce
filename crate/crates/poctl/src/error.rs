//! Errors raised while checking a formula against a model.

use crate::linalg::LinalgError;
use crate::model::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error("model failed validation: {0}")]
    InvalidModel(ValidationReport),
    #[error("unknown atomic proposition '{0}'")]
    UnknownProposition(String),
    #[error("observation index {index} out of range for a model with {m} observations")]
    ObsIndexOutOfRange { index: usize, m: usize },
    #[error("per-state evaluation requires a state index")]
    MissingEvalState,
    #[error("evaluation state is only meaningful in per-state mode")]
    UnexpectedEvalState,
    #[error("state index {index} out of range for a model with {n} states")]
    StateOutOfRange { index: usize, n: usize },
    #[error("formula contains an operator reserved for internal rewriting")]
    InternalOperator,
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<LinalgError> for CheckError {
    fn from(err: LinalgError) -> Self {
        CheckError::Internal(format!("linear solver failed: {err}"))
    }
}
