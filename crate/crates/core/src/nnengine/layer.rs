use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

/// Per-model switch that turns randomized layers on at prediction time.
///
/// The flag is shared between a model and the dropout layers bound to it;
/// every model owns its own flag.
#[derive(Debug, Clone, Default)]
pub struct StochasticMode(Arc<AtomicBool>);

impl StochasticMode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub(crate) fn set(&self, enabled: bool) {
        self.0.store(enabled, Ordering::SeqCst);
    }

    pub(crate) fn same_as(&self, other: &StochasticMode) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Restores stochastic mode to `false` when dropped.
pub(crate) struct ModeGuard<'a>(&'a StochasticMode);

impl<'a> ModeGuard<'a> {
    pub(crate) fn enable(mode: &'a StochasticMode, enabled: bool) -> Self {
        mode.set(enabled);
        ModeGuard(mode)
    }
}

impl Drop for ModeGuard<'_> {
    fn drop(&mut self) {
        self.0.set(false);
    }
}

/// Layer description used to build a model.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Dense layer with seeded Glorot-uniform weights and zero biases.
    Dense { in_dim: usize, out_dim: usize },
    /// Dense layer with explicit weights (`out_dim x in_dim`) and biases.
    DenseWith {
        weights: Array2<f64>,
        biases: Array1<f64>,
    },
    Relu,
    Softmax,
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn dense_with(weights: Array2<f64>, biases: Array1<f64>) -> Self {
        LayerSpec::DenseWith { weights, biases }
    }

    pub fn relu() -> Self {
        LayerSpec::Relu
    }

    pub fn softmax() -> Self {
        LayerSpec::Softmax
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    Softmax,
    Dropout,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Relu => 1,
            LayerKind::Softmax => 2,
            LayerKind::Dropout => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LayerKind::Dense),
            1 => Some(LayerKind::Relu),
            2 => Some(LayerKind::Softmax),
            3 => Some(LayerKind::Dropout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) weights: Array2<f64>,
    pub(crate) biases: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut Array1<f64> {
        &mut self.biases
    }

    /// `y = x W^T + b`, one row at a time in a fixed summation order so that
    /// a row's output does not depend on the batch it travels in.
    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let x = x.as_standard_layout();
        let w = self.weights.as_standard_layout();
        let (batch, in_dim) = x.dim();
        let out_dim = self.out_dim();
        let xs = x.as_slice().expect("standard layout");
        let ws = w.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(batch * out_dim);
        for row in xs.chunks_exact(in_dim.max(1)).take(batch) {
            for (o, w_row) in ws.chunks_exact(in_dim.max(1)).enumerate().take(out_dim) {
                let mut acc = self.biases[o];
                for (wi, xi) in w_row.iter().zip(row) {
                    acc += wi * xi;
                }
                out.push(acc);
            }
        }
        Array2::from_shape_vec((batch, out_dim), out).expect("shape computed above")
    }
}

/// Inverted dropout. Inert unless bound to a model's [`StochasticMode`] that
/// is enabled, or the model is training.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub(crate) rate: f64,
    pub(crate) mode: Option<StochasticMode>,
}

impl Dropout {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Whether the layer follows a stochastic mode (plain models' dropout
    /// layers are permanently inert at prediction time).
    pub fn is_bound(&self) -> bool {
        self.mode.is_some()
    }

    pub(crate) fn active_for_prediction(&self) -> bool {
        self.mode.as_ref().is_some_and(StochasticMode::is_enabled)
    }

    /// Returns the mask (entries 0 or `1/(1-p)`) applied to `x`.
    pub(crate) fn sample_mask<R: Rng + ?Sized>(&self, dim: (usize, usize), rng: &mut R) -> Array2<f64> {
        if self.rate == 0.0 {
            return Array2::ones(dim);
        }
        let keep = 1.0 / (1.0 - self.rate);
        Array2::from_shape_simple_fn(dim, || {
            if rng.random::<f64>() < self.rate {
                0.0
            } else {
                keep
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Softmax,
    Dropout(Dropout),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::Softmax => LayerKind::Softmax,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
