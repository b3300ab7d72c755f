//! Exit status: 2 for bad input, 1 for everything else.

use thiserror::Error;
use webforge_core::annotate::AnnotateError;
use webforge_core::archive::ArchiveError;
use webforge_core::evaluate::EvalError;
use webforge_core::genclient::GenError;
use webforge_core::metrics::MetricsError;
use webforge_core::study::StudyError;

/// Input that fails validation before any work is done.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn is_validation(e: &(dyn std::error::Error + 'static)) -> bool {
    if e.is::<Invalid>() || e.is::<AnnotateError>() {
        return true;
    }
    if let Some(a) = e.downcast_ref::<ArchiveError>() {
        return !matches!(a, ArchiveError::Io(_));
    }
    if let Some(m) = e.downcast_ref::<MetricsError>() {
        return !matches!(m, MetricsError::Csv(_));
    }
    if let Some(s) = e.downcast_ref::<StudyError>() {
        return matches!(s, StudyError::InvalidTask(_) | StudyError::UnknownStudy(_));
    }
    if let Some(g) = e.downcast_ref::<GenError>() {
        return matches!(g, GenError::InvalidConfig(_) | GenError::EmptyPrompt);
    }
    if let Some(v) = e.downcast_ref::<EvalError>() {
        return !matches!(v, EvalError::ProviderUnavailable(_));
    }
    e.is::<serde_json::Error>()
}

pub fn code_for(err: &anyhow::Error) -> u8 {
    if err.chain().any(is_validation) {
        2
    } else {
        1
    }
}
