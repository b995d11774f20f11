use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::model::SequentialModel;
use super::{NnError, Result};
use crate::quantifiers::ProblemType;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    MeanSquaredError,
}

impl Loss {
    /// Default loss for a problem type.
    pub fn for_problem(problem: ProblemType) -> Self {
        match problem {
            ProblemType::Classification => Loss::CrossEntropy,
            ProblemType::Regression => Loss::MeanSquaredError,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.05,
            loss: Loss::CrossEntropy,
            seed: 0,
        }
    }
}

/// Training targets: class labels or real-valued rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select(Axis(0), idx)),
        }
    }

    fn dense(&self, width: usize) -> Array2<f64> {
        match self {
            Targets::Labels(l) => {
                let mut out = Array2::zeros((l.len(), width));
                for (r, &c) in l.iter().enumerate() {
                    out[[r, c]] = 1.0;
                }
                out
            }
            Targets::Values(v) => v.clone(),
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub losses: Vec<f64>,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Gradient of the loss with respect to one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

fn log_softmax_row(z: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.mapv(|v| v - lse)
}

impl SequentialModel {
    fn check_targets(&self, x: &ArrayView2<f64>, targets: &Targets, loss: Loss) -> Result<()> {
        self.check_input(x)?;
        if targets.len() != x.nrows() {
            return Err(NnError::Shape(format!(
                "{} inputs but {} targets",
                x.nrows(),
                targets.len()
            )));
        }
        match targets {
            Targets::Labels(labels) => {
                if let Some(&bad) = labels.iter().find(|&&c| c >= self.output_dim()) {
                    return Err(NnError::Shape(format!(
                        "label {bad} outside [0, {})",
                        self.output_dim()
                    )));
                }
            }
            Targets::Values(v) => {
                if v.ncols() != self.output_dim() {
                    return Err(NnError::Shape(format!(
                        "targets have {} columns, model outputs {}",
                        v.ncols(),
                        self.output_dim()
                    )));
                }
                if loss == Loss::CrossEntropy {
                    return Err(NnError::InvalidConfig(
                        "cross-entropy needs class labels".into(),
                    ));
                }
            }
        }
        if loss == Loss::CrossEntropy && !matches!(self.layers().last(), Some(Layer::Softmax)) {
            return Err(NnError::InvalidConfig(
                "cross-entropy needs a softmax output layer".into(),
            ));
        }
        Ok(())
    }

    /// Loss on `(x, targets)` with dropout inactive.
    pub fn loss(&self, x: ArrayView2<f64>, targets: &Targets, loss: Loss) -> Result<f64> {
        self.check_targets(&x, targets, loss)?;
        let cache = self.forward_cached(x, None);
        Ok(self.loss_from_cache(&cache, targets, loss))
    }

    /// Loss and gradients of every dense layer (in layer order), computed
    /// with dropout inactive.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        targets: &Targets,
        loss: Loss,
    ) -> Result<(f64, Vec<DenseGradient>)> {
        self.check_targets(&x, targets, loss)?;
        let cache = self.forward_cached(x, None);
        let value = self.loss_from_cache(&cache, targets, loss);
        Ok((value, self.backward(&cache, targets, loss)))
    }

    fn loss_from_cache(&self, cache: &super::model::ForwardCache, targets: &Targets, loss: Loss) -> f64 {
        let out = cache.activations.last().expect("non-empty cache");
        let batch = out.nrows() as f64;
        match (loss, targets) {
            (Loss::CrossEntropy, Targets::Labels(labels)) => {
                let logits = &cache.activations[cache.activations.len() - 2];
                -labels
                    .iter()
                    .enumerate()
                    .map(|(r, &c)| log_softmax_row(logits.row(r))[c])
                    .sum::<f64>()
                    / batch
            }
            (Loss::CrossEntropy, Targets::Values(_)) => unreachable!("rejected by check_targets"),
            (Loss::MeanSquaredError, _) => {
                let t = targets.dense(out.ncols());
                (out - &t).mapv(|v| v * v).sum() / (batch * out.ncols() as f64)
            }
        }
    }

    fn backward(&self, cache: &super::model::ForwardCache, targets: &Targets, loss: Loss) -> Vec<DenseGradient> {
        let layers = self.layers();
        let out = cache.activations.last().expect("non-empty cache");
        let batch = out.nrows() as f64;
        let t = targets.dense(out.ncols());

        // Gradient w.r.t. the output of the layer currently being processed.
        let (mut grad, mut start) = match loss {
            // Fused softmax + cross-entropy: gradient w.r.t. the logits.
            Loss::CrossEntropy => ((out - &t) / batch, layers.len() - 1),
            Loss::MeanSquaredError => (
                (out - &t) * (2.0 / (batch * out.ncols() as f64)),
                layers.len(),
            ),
        };
        let mut grads = Vec::new();
        while start > 0 {
            let i = start - 1;
            let input = &cache.activations[i];
            grad = match &layers[i] {
                Layer::Dense(d) => {
                    grads.push(DenseGradient {
                        weights: grad.t().dot(input),
                        biases: grad.sum_axis(Axis(0)),
                    });
                    grad.dot(&d.weights)
                }
                Layer::Relu => grad * &input.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                Layer::Softmax => {
                    let p = &cache.activations[i + 1];
                    let dot = (&grad * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                    p * &(&grad - &dot)
                }
                Layer::Dropout(_) => match &cache.masks[i] {
                    Some(mask) => grad * mask,
                    None => grad,
                },
            };
            start = i;
        }
        grads.reverse();
        grads
    }

    /// Minibatch SGD. Dropout is active throughout training, independent of
    /// the stochastic mode. Returns the per-epoch mean loss.
    pub fn fit(&mut self, x: ArrayView2<f64>, targets: &Targets, config: &TrainConfig) -> Result<TrainingHistory> {
        self.check_targets(&x, targets, config.loss)?;
        let n = x.nrows();
        if config.batch_size == 0 || config.batch_size > n {
            return Err(NnError::InvalidConfig(format!(
                "batch size must be in [1, {n}], got {}",
                config.batch_size
            )));
        }
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be a non-negative number, got {}",
                config.learning_rate
            )));
        }
        let mut shuffle_rng = rng::stream(config.seed, Purpose::Train, 0);
        let mut dropout_rng = rng::stream(config.seed, Purpose::Train, 1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = TrainingHistory::default();
        for epoch in 0..config.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for (b, idx) in order.chunks(config.batch_size).enumerate() {
                let xb = x.select(Axis(0), idx);
                let tb = targets.select(idx);
                let cache = self.forward_cached(xb.view(), Some(&mut dropout_rng));
                let batch_loss = self.loss_from_cache(&cache, &tb, config.loss);
                if !batch_loss.is_finite() {
                    return Err(NnError::Diverged { epoch, batch: b });
                }
                total += batch_loss * idx.len() as f64;
                let grads = self.backward(&cache, &tb, config.loss);
                let lr = config.learning_rate;
                for (dense, g) in self.dense_layers_mut().zip(grads) {
                    dense.weights.scaled_add(-lr, &g.weights);
                    dense.biases.scaled_add(-lr, &g.biases);
                }
            }
            history.losses.push(total / n as f64);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnengine::LayerSpec;
    use ndarray::array;

    fn tiny() -> SequentialModel {
        SequentialModel::build(
            vec![
                LayerSpec::dense(2, 4),
                LayerSpec::relu(),
                LayerSpec::dropout(0.2),
                LayerSpec::dense(4, 2),
                LayerSpec::softmax(),
            ],
            5,
        )
        .unwrap()
    }

    fn xor_like() -> (Array2<f64>, Targets) {
        (
            array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0], [0.5, 0.9], [0.9, 0.4]],
            Targets::Labels(vec![1, 1, 0, 0, 1, 1]),
        )
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut m = tiny();
        let before: Vec<_> = m.dense_layers().cloned().collect();
        let (x, y) = xor_like();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            ..Default::default()
        };
        let h = m.fit(x.view(), &y, &cfg).unwrap();
        assert_eq!(h.losses.len(), 3);
        let after: Vec<_> = m.dense_layers().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn replay_gives_identical_history() {
        let (x, y) = xor_like();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 3,
            learning_rate: 0.1,
            seed: 9,
            ..Default::default()
        };
        let a = tiny().fit(x.view(), &y, &cfg).unwrap();
        let b = tiny().fit(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_loss() {
        let (x, y) = xor_like();
        let mut m = tiny();
        let before = m.loss(x.view(), &y, Loss::CrossEntropy).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 6,
            learning_rate: 0.5,
            ..Default::default()
        };
        m.fit(x.view(), &y, &cfg).unwrap();
        assert!(m.loss(x.view(), &y, Loss::CrossEntropy).unwrap() < before);
    }

    #[test]
    fn diverging_training_is_aborted() {
        let (x, _) = xor_like();
        let mut m = SequentialModel::build(vec![LayerSpec::dense(2, 1)], 3).unwrap();
        let targets = Targets::Values(array![[1e200], [1e200], [1e200], [1e200], [1e200], [1e200]]);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 6,
            learning_rate: 10.0,
            loss: Loss::MeanSquaredError,
            seed: 0,
        };
        let err = m.fit(x.view(), &targets, &cfg).unwrap_err();
        assert!(matches!(err, NnError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn rejects_out_of_range_labels_and_bad_batch() {
        let (x, _) = xor_like();
        let mut m = tiny();
        let bad = Targets::Labels(vec![0, 1, 2, 0, 0, 0]);
        assert!(matches!(
            m.fit(x.view(), &bad, &TrainConfig::default()),
            Err(NnError::Shape(_))
        ));
        let ok = Targets::Labels(vec![0; 6]);
        let cfg = TrainConfig {
            batch_size: 7,
            ..Default::default()
        };
        assert!(matches!(m.fit(x.view(), &ok, &cfg), Err(NnError::InvalidConfig(_))));
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut m = SequentialModel::build(
            vec![LayerSpec::dense(2, 3), LayerSpec::relu(), LayerSpec::dense(3, 2)],
            17,
        )
        .unwrap();
        let x = array![[0.3, -0.7], [1.2, 0.4], [-0.5, 0.9]];
        let t = Targets::Values(array![[0.1, 0.2], [-1.0, 0.5], [0.0, 2.0]]);
        let (_, grads) = m.loss_and_gradients(x.view(), &t, Loss::MeanSquaredError).unwrap();
        let h = 1e-6;
        for (li, g) in grads.iter().enumerate() {
            for ((r, c), &analytic) in g.weights.indexed_iter() {
                let orig = m.dense_layers().nth(li).unwrap().weights()[[r, c]];
                m.dense_layers_mut().nth(li).unwrap().weights_mut()[[r, c]] = orig + h;
                let up = m.loss(x.view(), &t, Loss::MeanSquaredError).unwrap();
                m.dense_layers_mut().nth(li).unwrap().weights_mut()[[r, c]] = orig - h;
                let down = m.loss(x.view(), &t, Loss::MeanSquaredError).unwrap();
                m.dense_layers_mut().nth(li).unwrap().weights_mut()[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - analytic).abs() < 1e-6, "{numeric} vs {analytic}");
            }
        }
    }
}
