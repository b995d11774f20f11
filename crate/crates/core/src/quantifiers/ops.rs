use ndarray::ArrayView2;

use super::types::{
    Predictions, QuantifiedResult, RegressionSamples, SampledOutputs, ScoreKind, SingleOutputs,
};
use super::{QuantifierError, Result};

/// Index and value of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<I: IntoIterator<Item = f64>>(values: I) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Column means of a `(samples, width)` block. A constant column yields its
/// value exactly, so identical samples reproduce that sample bit-for-bit.
pub(crate) fn sample_mean(samples: ArrayView2<f64>) -> Vec<f64> {
    let s = samples.nrows() as f64;
    samples
        .columns()
        .into_iter()
        .map(|col| {
            let first = col[0];
            if col.iter().all(|&x| x == first) {
                first
            } else {
                col.iter().sum::<f64>() / s
            }
        })
        .collect()
}

fn require_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(QuantifierError::UnsupportedShape(format!(
            "classification quantifiers need at least 2 classes, got {num_classes}"
        )));
    }
    Ok(())
}

fn require_samples(got: usize, required: usize) -> Result<()> {
    if got < required {
        return Err(QuantifierError::InsufficientSamples { required, got });
    }
    Ok(())
}

/// Predicted class is the argmax; its softmax value is the confidence.
pub fn max_softmax(outputs: &SingleOutputs) -> Result<QuantifiedResult> {
    require_classes(outputs.num_classes())?;
    let (preds, scores) = outputs
        .values()
        .rows()
        .into_iter()
        .map(|row| argmax(row.iter().copied()))
        .unzip();
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Confidence,
    ))
}

/// Confidence is the gap between the highest and second-highest softmax value.
pub fn prediction_confidence_score(outputs: &SingleOutputs) -> Result<QuantifiedResult> {
    require_classes(outputs.num_classes())?;
    let mut preds = Vec::with_capacity(outputs.num_inputs());
    let mut scores = Vec::with_capacity(outputs.num_inputs());
    for row in outputs.values().rows() {
        let (best, top) = argmax(row.iter().copied());
        let second = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != best)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        preds.push(best);
        scores.push(top - second);
    }
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Confidence,
    ))
}

/// Uncertainty is one minus the relative frequency of the modal sample class.
pub fn variation_ratio(samples: &SampledOutputs) -> Result<QuantifiedResult> {
    require_classes(samples.num_classes())?;
    require_samples(samples.num_samples(), 2)?;
    let s = samples.num_samples();
    let mut preds = Vec::with_capacity(samples.num_inputs());
    let mut scores = Vec::with_capacity(samples.num_inputs());
    let mut votes = vec![0usize; samples.num_classes()];
    for input in samples.values().outer_iter() {
        votes.iter_mut().for_each(|v| *v = 0);
        for row in input.outer_iter() {
            votes[argmax(row.iter().copied()).0] += 1;
        }
        let (mode, count) = argmax(votes.iter().map(|&v| v as f64));
        preds.push(mode);
        scores.push(1.0 - count / s as f64);
    }
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Uncertainty,
    ))
}

/// Uncertainty is the entropy of the sample-averaged distribution.
pub fn predictive_entropy(samples: &SampledOutputs) -> Result<QuantifiedResult> {
    require_classes(samples.num_classes())?;
    require_samples(samples.num_samples(), 2)?;
    let (preds, scores) = samples
        .values()
        .outer_iter()
        .map(|input| {
            let mean = sample_mean(input);
            (argmax(mean.iter().copied()).0, entropy(&mean))
        })
        .unzip();
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Uncertainty,
    ))
}

/// Uncertainty is `H(mean) - mean(H)`, clamped below at zero.
pub fn mutual_information(samples: &SampledOutputs) -> Result<QuantifiedResult> {
    require_classes(samples.num_classes())?;
    require_samples(samples.num_samples(), 2)?;
    let s = samples.num_samples() as f64;
    let (preds, scores) = samples
        .values()
        .outer_iter()
        .map(|input| {
            let mean = sample_mean(input);
            let expected: f64 = input
                .outer_iter()
                .map(|row| entropy(&row.to_vec()))
                .sum::<f64>()
                / s;
            let mi = (entropy(&mean) - expected).max(0.0);
            (argmax(mean.iter().copied()).0, mi)
        })
        .unzip();
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Uncertainty,
    ))
}

/// Argmax and maximum of the sample-averaged distribution. Accepts a single
/// sample, in which case it coincides with [`max_softmax`].
pub fn mean_softmax(samples: &SampledOutputs) -> Result<QuantifiedResult> {
    require_classes(samples.num_classes())?;
    require_samples(samples.num_samples(), 1)?;
    let (preds, scores) = samples
        .values()
        .outer_iter()
        .map(|input| argmax(sample_mean(input)))
        .unzip();
    Ok(QuantifiedResult::new(
        Predictions::Classes(preds),
        scores,
        ScoreKind::Confidence,
    ))
}

/// Prediction is the per-dimension sample mean; uncertainty is the mean over
/// dimensions of the population standard deviation.
pub fn standard_deviation(samples: &RegressionSamples) -> Result<QuantifiedResult> {
    require_samples(samples.num_samples(), 2)?;
    let s = samples.num_samples() as f64;
    let (preds, scores) = samples
        .values()
        .outer_iter()
        .map(|input| {
            let mean = sample_mean(input);
            let stds: Vec<f64> = mean
                .iter()
                .enumerate()
                .map(|(d, &m)| {
                    let var = input.column(d).iter().map(|x| (x - m).powi(2)).sum::<f64>() / s;
                    var.sqrt()
                })
                .collect();
            let score = stds.iter().sum::<f64>() / stds.len() as f64;
            (mean, score)
        })
        .unzip();
    Ok(QuantifiedResult::new(
        Predictions::Values(preds),
        scores,
        ScoreKind::Uncertainty,
    ))
}

/// Converts between confidence and uncertainty by negating the scores.
///
/// `None` leaves the result untouched; so does a request for the kind the
/// result already has.
pub fn convert_score(mut result: QuantifiedResult, as_confidence: Option<bool>) -> QuantifiedResult {
    let Some(as_confidence) = as_confidence else {
        return result;
    };
    let wanted = if as_confidence {
        ScoreKind::Confidence
    } else {
        ScoreKind::Uncertainty
    };
    if wanted != result.score_kind {
        result.scores.iter_mut().for_each(|s| *s = -*s);
        result.score_kind = wanted;
    }
    result
}
