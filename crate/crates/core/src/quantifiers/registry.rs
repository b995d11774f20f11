use std::fmt;
use std::str::FromStr;

use super::{ProblemType, QuantifierError, Result, ScoreKind};

/// The built-in quantifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantifier {
    MaxSoftmax,
    PredictionConfidenceScore,
    VariationRatio,
    PredictiveEntropy,
    MutualInformation,
    MeanSoftmax,
    StandardDeviation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantifierDescriptor {
    pub quantifier: Quantifier,
    pub canonical_name: &'static str,
    pub aliases: &'static [&'static str],
    pub is_sampling_based: bool,
    pub native_kind: ScoreKind,
    pub problem_type: ProblemType,
}

static REGISTRY: [QuantifierDescriptor; 7] = [
    QuantifierDescriptor {
        quantifier: Quantifier::MaxSoftmax,
        canonical_name: "max_softmax",
        aliases: &["max_softmax", "softmax", "sm"],
        is_sampling_based: false,
        native_kind: ScoreKind::Confidence,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::PredictionConfidenceScore,
        canonical_name: "prediction_confidence_score",
        aliases: &["pcs"],
        is_sampling_based: false,
        native_kind: ScoreKind::Confidence,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::VariationRatio,
        canonical_name: "variation_ratio",
        aliases: &["var_ratio", "variation_ratio", "vr"],
        is_sampling_based: true,
        native_kind: ScoreKind::Uncertainty,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::PredictiveEntropy,
        canonical_name: "predictive_entropy",
        aliases: &["pred_entropy", "predictive_entropy", "pe"],
        is_sampling_based: true,
        native_kind: ScoreKind::Uncertainty,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::MutualInformation,
        canonical_name: "mutual_information",
        aliases: &["mutu_info", "mutual_information", "mi"],
        is_sampling_based: true,
        native_kind: ScoreKind::Uncertainty,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::MeanSoftmax,
        canonical_name: "mean_softmax",
        aliases: &["mean_softmax", "ensembling", "ms"],
        is_sampling_based: true,
        native_kind: ScoreKind::Confidence,
        problem_type: ProblemType::Classification,
    },
    QuantifierDescriptor {
        quantifier: Quantifier::StandardDeviation,
        canonical_name: "standard_deviation",
        aliases: &["std", "stddev", "standard_deviation"],
        is_sampling_based: true,
        native_kind: ScoreKind::Uncertainty,
        problem_type: ProblemType::Regression,
    },
];

/// All built-in quantifier descriptors.
pub fn registry() -> &'static [QuantifierDescriptor] {
    &REGISTRY
}

fn known_aliases() -> Vec<String> {
    REGISTRY
        .iter()
        .flat_map(|d| d.aliases.iter().map(|a| a.to_string()))
        .collect()
}

/// Finds the descriptor owning `alias` (case-insensitive).
pub fn lookup_quantifier(alias: &str) -> Result<&'static QuantifierDescriptor> {
    let wanted = alias.trim().to_ascii_lowercase();
    REGISTRY
        .iter()
        .find(|d| d.aliases.contains(&wanted.as_str()))
        .ok_or_else(|| QuantifierError::UnknownQuantifier {
            alias: alias.to_string(),
            known: known_aliases(),
        })
}

impl Quantifier {
    pub fn descriptor(self) -> &'static QuantifierDescriptor {
        REGISTRY
            .iter()
            .find(|d| d.quantifier == self)
            .expect("every quantifier is registered")
    }

    pub fn name(self) -> &'static str {
        self.descriptor().canonical_name
    }

    pub fn is_sampling_based(self) -> bool {
        self.descriptor().is_sampling_based
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantifier {
    type Err = QuantifierError;

    fn from_str(s: &str) -> Result<Self> {
        lookup_quantifier(s).map(|d| d.quantifier)
    }
}

/// Anything that names a quantifier: an alias string, a [`Quantifier`] or a
/// descriptor.
pub trait IntoQuantifier {
    fn resolve(&self) -> Result<Quantifier>;
}

impl IntoQuantifier for Quantifier {
    fn resolve(&self) -> Result<Quantifier> {
        Ok(*self)
    }
}

impl IntoQuantifier for QuantifierDescriptor {
    fn resolve(&self) -> Result<Quantifier> {
        Ok(self.quantifier)
    }
}

impl IntoQuantifier for str {
    fn resolve(&self) -> Result<Quantifier> {
        self.parse()
    }
}

impl IntoQuantifier for String {
    fn resolve(&self) -> Result<Quantifier> {
        self.parse()
    }
}

impl<T: IntoQuantifier + ?Sized> IntoQuantifier for &T {
    fn resolve(&self) -> Result<Quantifier> {
        (**self).resolve()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seven_builtins_two_point_predictors() {
        assert_eq!(registry().len(), 7);
        let ppq = registry().iter().filter(|d| !d.is_sampling_based).count();
        assert_eq!(ppq, 2);
    }

    #[test]
    fn aliases_are_disjoint() {
        let mut seen = HashSet::new();
        for d in registry() {
            for a in d.aliases {
                assert!(seen.insert(*a), "alias {a} registered twice");
            }
        }
    }

    #[test]
    fn lookup_by_listing_aliases() {
        assert_eq!(
            lookup_quantifier("var_ratio").unwrap().quantifier,
            Quantifier::VariationRatio
        );
        assert_eq!(
            lookup_quantifier("ensembling").unwrap().quantifier,
            Quantifier::MeanSoftmax
        );
        assert_eq!(
            lookup_quantifier("PCS").unwrap().quantifier,
            Quantifier::PredictionConfidenceScore
        );
        assert_eq!(
            lookup_quantifier("pred_entropy").unwrap().canonical_name,
            "predictive_entropy"
        );
    }

    #[test]
    fn unknown_alias_lists_known_ones() {
        match lookup_quantifier("no_such").unwrap_err() {
            QuantifierError::UnknownQuantifier { alias, known } => {
                assert_eq!(alias, "no_such");
                assert!(known.contains(&"mutu_info".to_string()));
                assert_eq!(known.len(), 19);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
