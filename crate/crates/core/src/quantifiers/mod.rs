//! Quantifiers: turn network outputs into a prediction plus an uncertainty
//! (or confidence) score.
//!
//! Two families exist. Point-predictor quantifiers (PPQ) work on the softmax
//! output of a single deterministic forward pass ([`SingleOutputs`]).
//! Sampling-based quantifiers (SBQ) work on several non-deterministic passes
//! per input, laid out as `(inputs, samples, classes)` ([`SampledOutputs`]),
//! or on raw regression samples ([`RegressionSamples`]).
//!
//! All functions here are pure. Entropies use the natural logarithm and every
//! argmax breaks ties towards the lowest class index.

mod ops;
mod registry;
mod types;

pub use ops::{
    convert_score, max_softmax, mean_softmax, mutual_information, prediction_confidence_score,
    predictive_entropy, standard_deviation, variation_ratio,
};
pub use registry::{lookup_quantifier, registry, IntoQuantifier, Quantifier, QuantifierDescriptor};
pub use types::{
    Predictions, ProblemType, QuantifiedResult, RegressionSamples, SampledOutputs, ScoreKind,
    SingleOutputs, NORMALIZATION_TOLERANCE,
};

use thiserror::Error;

/// Errors raised by quantifier construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantifierError {
    #[error("invalid outputs at row {row}: {reason}")]
    Validation { row: usize, reason: String },
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("quantifier requires at least {required} samples per input, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("unknown quantifier '{alias}'; known aliases: {}", known.join(", "))]
    UnknownQuantifier { alias: String, known: Vec<String> },
    #[error("quantifier '{quantifier}' does not apply to {problem:?} outputs")]
    ProblemTypeMismatch {
        quantifier: &'static str,
        problem: ProblemType,
    },
}

pub type Result<T> = std::result::Result<T, QuantifierError>;
