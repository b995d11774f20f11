use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{QuantifierError, Result};

/// Maximum deviation of a softmax row sum from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Classification,
    Regression,
}

/// Whether higher scores mean "more sure" or "less sure".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Confidence,
    Uncertainty,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Confidence => "confidence",
            ScoreKind::Uncertainty => "uncertainty",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            ScoreKind::Confidence => ScoreKind::Uncertainty,
            ScoreKind::Uncertainty => ScoreKind::Confidence,
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictions {
    /// One class index per input.
    Classes(Vec<usize>),
    /// One output vector per input.
    Values(Vec<Vec<f64>>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Classes(c) => c.len(),
            Predictions::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Predictions::Classes(c) => Some(c),
            Predictions::Values(_) => None,
        }
    }
}

/// Per-input predictions and scores produced by a quantifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifiedResult {
    pub predictions: Predictions,
    pub scores: Vec<f64>,
    pub score_kind: ScoreKind,
}

impl QuantifiedResult {
    pub(crate) fn new(predictions: Predictions, scores: Vec<f64>, score_kind: ScoreKind) -> Self {
        debug_assert_eq!(predictions.len(), scores.len());
        Self {
            predictions,
            scores,
            score_kind,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn validate_distribution(row: ArrayView1<f64>, index: usize) -> Result<()> {
    let mut sum = 0.0;
    for (c, &p) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(QuantifierError::Validation {
                row: index,
                reason: format!("entry {c} = {p} is outside [0, 1]"),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(QuantifierError::Validation {
            row: index,
            reason: format!("row sums to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Softmax outputs of a single forward pass, shape `(inputs, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleOutputs {
    values: Array2<f64>,
}

impl SingleOutputs {
    /// Validates that every row is a probability distribution.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, c) = values.dim();
        if n == 0 || c == 0 {
            return Err(QuantifierError::UnsupportedShape(format!(
                "single outputs must be non-empty, got shape ({n}, {c})"
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            validate_distribution(row, i)?;
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn num_inputs(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Softmax outputs of several sampled passes, shape `(inputs, samples, classes)`.
///
/// Samples of one input are contiguous along axis 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledOutputs {
    values: Array3<f64>,
}

impl SampledOutputs {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (n, s, c) = values.dim();
        if n == 0 || s == 0 || c == 0 {
            return Err(QuantifierError::UnsupportedShape(format!(
                "sampled outputs must be non-empty, got shape ({n}, {s}, {c})"
            )));
        }
        for (i, input) in values.outer_iter().enumerate() {
            for row in input.outer_iter() {
                validate_distribution(row, i)?;
            }
        }
        Ok(Self { values })
    }

    /// Stacks per-sample output matrices (each `(inputs, classes)`) along the
    /// sample axis, keeping their order.
    pub fn stack(samples: &[ArrayView2<f64>]) -> Result<Self> {
        Self::new(stack_samples(samples)?)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn num_inputs(&self) -> usize {
        self.values.dim().0
    }

    pub fn num_samples(&self) -> usize {
        self.values.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().2
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.values
    }
}

/// Raw regression outputs of several passes, shape `(inputs, samples, output_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSamples {
    values: Array3<f64>,
}

impl RegressionSamples {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (n, s, d) = values.dim();
        if n == 0 || s == 0 || d == 0 {
            return Err(QuantifierError::UnsupportedShape(format!(
                "regression samples must be non-empty, got shape ({n}, {s}, {d})"
            )));
        }
        if let Some(((i, _, _), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(QuantifierError::Validation {
                row: i,
                reason: format!("non-finite value {v}"),
            });
        }
        Ok(Self { values })
    }

    pub fn stack(samples: &[ArrayView2<f64>]) -> Result<Self> {
        Self::new(stack_samples(samples)?)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn num_samples(&self) -> usize {
        self.values.dim().1
    }
}

fn stack_samples(samples: &[ArrayView2<f64>]) -> Result<Array3<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| QuantifierError::UnsupportedShape("no samples to stack".into()))?;
    if let Some((s, bad)) = samples
        .iter()
        .enumerate()
        .find(|(_, v)| v.dim() != first.dim())
    {
        return Err(QuantifierError::UnsupportedShape(format!(
            "sample {s} has shape {:?}, expected {:?}",
            bad.dim(),
            first.dim()
        )));
    }
    let stacked = ndarray::stack(Axis(1), samples)
        .map_err(|e| QuantifierError::UnsupportedShape(e.to_string()))?;
    Ok(stacked)
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(QuantifierError::UnsupportedShape(format!(
            "row {i} has {} entries, expected {width}",
            rows[i].len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| QuantifierError::UnsupportedShape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_unnormalized_row_and_names_it() {
        let err = SingleOutputs::new(array![[0.5, 0.5], [0.6, 0.6]]).unwrap_err();
        assert!(matches!(err, QuantifierError::Validation { row: 1, .. }));
    }

    #[test]
    fn rejects_out_of_range_entries() {
        let err = SingleOutputs::new(array![[1.5, -0.5]]).unwrap_err();
        assert!(matches!(err, QuantifierError::Validation { row: 0, .. }));
        let err = SingleOutputs::new(array![[f64::NAN, 1.0]]).unwrap_err();
        assert!(matches!(err, QuantifierError::Validation { .. }));
    }

    #[test]
    fn accepts_rounding_noise_within_tolerance() {
        assert!(SingleOutputs::new(array![[0.3333333, 0.3333333, 0.3333334]]).is_ok());
    }

    #[test]
    fn sampled_layout_keeps_sample_order() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        let s = SampledOutputs::stack(&[a.view(), b.view()]).unwrap();
        assert_eq!(s.values().dim(), (2, 2, 2));
        assert_eq!(s.values()[[0, 0, 0]], 1.0);
        assert_eq!(s.values()[[0, 1, 1]], 1.0);
        assert_eq!(s.values()[[1, 1, 0]], 1.0);
    }

    #[test]
    fn stacking_mismatched_shapes_fails() {
        let a = array![[1.0, 0.0]];
        let b = array![[1.0, 0.0, 0.0]];
        assert!(SampledOutputs::stack(&[a.view(), b.view()]).is_err());
    }
}
