//! The `predict_quantified` flow.
//!
//! Point-predictor quantifiers get one deterministic pass with stochastic
//! mode off. Sampling-based quantifiers get a second pass with stochastic
//! mode on, where every input is replicated `num_samples` times through a
//! lazily generated batch stream; outputs are regrouped so that the samples
//! of one input are contiguous. Stochastic mode is off again once the call
//! returns, error or not.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::layer::ModeGuard;
use super::model::{DropoutPolicy, SequentialModel};
use super::{NnError, Result};
use crate::quantifiers::{
    self, IntoQuantifier, ProblemType, QuantifiedResult, Quantifier, QuantifierError,
    RegressionSamples, SampledOutputs, SingleOutputs,
};

pub const DEFAULT_NUM_SAMPLES: usize = 32;
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Forward passes per input for sampling-based quantifiers.
    pub num_samples: usize,
    /// `Some(true)` converts uncertainties to confidences, `Some(false)` the
    /// reverse, `None` leaves scores as produced.
    pub as_confidence: Option<bool>,
    /// Maximum rows per forward pass.
    pub batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            num_samples: DEFAULT_NUM_SAMPLES,
            as_confidence: None,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl PredictOptions {
    pub fn with_num_samples(mut self, num_samples: usize) -> Self {
        self.num_samples = num_samples;
        self
    }

    pub fn with_as_confidence(mut self, as_confidence: Option<bool>) -> Self {
        self.as_confidence = as_confidence;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// Lazily replicates each input row `samples` times, yielding batches of at
/// most `batch_size` rows. Row `r` of the virtual `N * S` stream is input
/// `r / S`; only the current batch is ever materialized.
#[derive(Debug, Clone)]
pub struct ReplicatedBatches<'a> {
    inputs: ArrayView2<'a, f64>,
    samples: usize,
    batch_size: usize,
    next_row: usize,
}

impl<'a> ReplicatedBatches<'a> {
    pub fn new(inputs: ArrayView2<'a, f64>, samples: usize, batch_size: usize) -> Self {
        Self {
            inputs,
            samples,
            batch_size: batch_size.max(1),
            next_row: 0,
        }
    }

    pub fn total_rows(&self) -> usize {
        self.inputs.nrows() * self.samples
    }
}

impl Iterator for ReplicatedBatches<'_> {
    type Item = Array2<f64>;

    fn next(&mut self) -> Option<Array2<f64>> {
        let total = self.total_rows();
        if self.next_row >= total {
            return None;
        }
        let end = (self.next_row + self.batch_size).min(total);
        let idx: Vec<usize> = (self.next_row..end).map(|r| r / self.samples).collect();
        self.next_row = end;
        Some(self.inputs.select(Axis(0), &idx))
    }
}

fn resolve_all<Q: IntoQuantifier>(quantifiers: &[Q], problem: ProblemType) -> Result<Vec<Quantifier>> {
    quantifiers
        .iter()
        .map(|q| {
            let q = q.resolve()?;
            let desc = q.descriptor();
            if desc.problem_type != problem {
                return Err(QuantifierError::ProblemTypeMismatch {
                    quantifier: desc.canonical_name,
                    problem,
                }
                .into());
            }
            Ok(q)
        })
        .collect()
}

/// Applies a point-predictor quantifier to single-pass outputs.
pub(crate) fn apply_point(q: Quantifier, outputs: &SingleOutputs) -> quantifiers::Result<QuantifiedResult> {
    match q {
        Quantifier::MaxSoftmax => quantifiers::max_softmax(outputs),
        Quantifier::PredictionConfidenceScore => quantifiers::prediction_confidence_score(outputs),
        other => unreachable!("{other} is sampling-based"),
    }
}

/// Applies a sampling-based classification quantifier.
pub(crate) fn apply_sampled(q: Quantifier, samples: &SampledOutputs) -> quantifiers::Result<QuantifiedResult> {
    match q {
        Quantifier::VariationRatio => quantifiers::variation_ratio(samples),
        Quantifier::PredictiveEntropy => quantifiers::predictive_entropy(samples),
        Quantifier::MutualInformation => quantifiers::mutual_information(samples),
        Quantifier::MeanSoftmax => quantifiers::mean_softmax(samples),
        other => unreachable!("{other} is not a sampling-based classification quantifier"),
    }
}

impl SequentialModel {
    /// Predicts `x` and quantifies with a single quantifier.
    pub fn predict_quantified<Q: IntoQuantifier + ?Sized>(
        &mut self,
        x: ArrayView2<f64>,
        quantifier: &Q,
        options: &PredictOptions,
    ) -> Result<QuantifiedResult> {
        let q = quantifier.resolve()?;
        let mut results = self.predict_quantified_many(x, &[q], options)?;
        Ok(results.remove(0))
    }

    /// Predicts `x` and quantifies with every quantifier in order, returning
    /// one result per quantifier. Point predictors and sampling-based
    /// quantifiers may be mixed.
    pub fn predict_quantified_many<Q: IntoQuantifier>(
        &mut self,
        x: ArrayView2<f64>,
        quantifiers: &[Q],
        options: &PredictOptions,
    ) -> Result<Vec<QuantifiedResult>> {
        let _reset = ModeGuard::enable(self.stochastic_mode(), false);
        self.predict_inner(x, quantifiers, options)
    }

    fn predict_inner<Q: IntoQuantifier>(
        &self,
        x: ArrayView2<f64>,
        quantifiers: &[Q],
        options: &PredictOptions,
    ) -> Result<Vec<QuantifiedResult>> {
        if quantifiers.is_empty() {
            return Err(NnError::InvalidConfig("no quantifier requested".into()));
        }
        let resolved = resolve_all(quantifiers, self.problem_type())?;
        let any_sampling = resolved.iter().any(|q| q.is_sampling_based());
        if any_sampling && options.num_samples < 2 {
            return Err(QuantifierError::InsufficientSamples {
                required: 2,
                got: options.num_samples,
            }
            .into());
        }
        self.check_input(&x)?;
        if x.nrows() == 0 {
            return Err(NnError::Shape("no inputs to predict".into()));
        }

        let point = if resolved.iter().any(|q| !q.is_sampling_based()) {
            Some(SingleOutputs::new(self.deterministic_pass(x, options.batch_size))?)
        } else {
            None
        };
        let sampled = if any_sampling {
            Some(self.sampled_pass(x, options.num_samples, options.batch_size))
        } else {
            None
        };

        resolved
            .into_iter()
            .map(|q| {
                let result = if !q.is_sampling_based() {
                    apply_point(q, point.as_ref().expect("point pass ran"))?
                } else {
                    let values = sampled.as_ref().expect("sampled pass ran").clone();
                    match self.problem_type() {
                        ProblemType::Classification => apply_sampled(q, &SampledOutputs::new(values)?)?,
                        ProblemType::Regression => {
                            quantifiers::standard_deviation(&RegressionSamples::new(values)?)?
                        }
                    }
                };
                Ok(quantifiers::convert_score(result, options.as_confidence))
            })
            .collect()
    }

    fn deterministic_pass(&self, x: ArrayView2<f64>, batch_size: usize) -> Array2<f64> {
        let _mode = ModeGuard::enable(self.stochastic_mode(), false);
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (chunk, mut dst) in x
            .axis_chunks_iter(Axis(0), batch_size.max(1))
            .zip(out.axis_chunks_iter_mut(Axis(0), batch_size.max(1)))
        {
            dst.assign(&self.forward_with(chunk, DropoutPolicy::Off));
        }
        out
    }

    /// Returns `(inputs, samples, outputs)`.
    fn sampled_pass(&self, x: ArrayView2<f64>, num_samples: usize, batch_size: usize) -> Array3<f64> {
        let _mode = ModeGuard::enable(self.stochastic_mode(), true);
        let mut rng = self.next_call_rng();
        let (n, d) = (x.nrows(), self.output_dim());
        let mut flat = Array2::zeros((n * num_samples, d));
        let mut row = 0;
        for batch in ReplicatedBatches::new(x, num_samples, batch_size) {
            let out = self.forward_with(batch.view(), DropoutPolicy::On(&mut rng));
            let rows = out.nrows();
            flat.slice_mut(ndarray::s![row..row + rows, ..]).assign(&out);
            row += rows;
        }
        flat.into_shape_with_order((n, num_samples, d))
            .expect("row count is n * num_samples")
    }
}
