//! Misprediction detection metrics.

use serde::Serialize;

use crate::quantifiers::{QuantifiedResult, ScoreKind};

/// Area under the ROC curve of `scores` as a detector of `positive` items,
/// computed as a rank statistic with midranks for ties.
///
/// Returns `None` when either class is empty.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "one label per score");
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores oriented so that higher means "more likely wrong".
pub fn misprediction_scores(result: &QuantifiedResult) -> Vec<f64> {
    match result.score_kind {
        ScoreKind::Uncertainty => result.scores.clone(),
        ScoreKind::Confidence => result.scores.iter().map(|s| -s).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub num_inputs: usize,
    pub num_wrong: usize,
    /// `None` when every prediction is right or every prediction is wrong.
    pub auroc: Option<f64>,
}

/// Accuracy of a classification result and AUROC of its score as a
/// misprediction detector.
pub fn evaluate(result: &QuantifiedResult, labels: &[usize]) -> Option<Evaluation> {
    let predicted = result.predictions.classes()?;
    assert_eq!(predicted.len(), labels.len(), "one label per prediction");
    let wrong: Vec<bool> = predicted.iter().zip(labels).map(|(p, l)| p != l).collect();
    let num_wrong = wrong.iter().filter(|&&w| w).count();
    let n = labels.len();
    Some(Evaluation {
        accuracy: if n == 0 { 0.0 } else { (n - num_wrong) as f64 / n as f64 },
        num_inputs: n,
        num_wrong,
        auroc: auroc(&misprediction_scores(result), &wrong),
    })
}

/// One-sided sign test: P(X >= successes) for X ~ Binomial(trials, 1/2).
pub fn sign_test_p_value(successes: usize, trials: usize) -> f64 {
    let mut coeff = 1.0_f64;
    let mut tail = 0.0;
    for k in 0..=trials {
        if k > 0 {
            coeff = coeff * (trials - k + 1) as f64 / k as f64;
        }
        if k >= successes {
            tail += coeff;
        }
    }
    tail / 2f64.powi(trials as i32)
}
