use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{relu, softmax, Dense, Dropout, Layer, LayerSpec, StochasticMode};
use super::{NnError, Result};
use crate::quantifiers::ProblemType;
use crate::rng::{self, Purpose};

/// A sequential feed-forward network whose dropout layers follow a
/// per-model [`StochasticMode`].
///
/// The model may move between threads but must only be used by one thread
/// at a time: the mode flag and the dropout call counter are per-model state.
#[derive(Debug)]
pub struct SequentialModel {
    layers: Vec<Layer>,
    mode: StochasticMode,
    seed: u64,
    calls: AtomicU64,
    problem_type: ProblemType,
    input_dim: usize,
    output_dim: usize,
}

/// Outcome of [`SequentialModel::stochastic_from_plain`].
#[derive(Debug)]
pub struct Converted {
    pub model: SequentialModel,
    /// Set when the model has no randomized layer; sampling-based
    /// quantifiers will then see identical samples.
    pub no_randomized_layers: bool,
}

/// Which dropout behaviour a forward pass uses.
pub(crate) enum DropoutPolicy<'r> {
    /// Dropout is identity.
    Off,
    /// Dropout samples masks from the given stream.
    On(&'r mut ChaCha8Rng),
}

/// Activations recorded during a training forward pass.
pub(crate) struct ForwardCache {
    /// Input of every layer, plus the final output at the end.
    pub(crate) activations: Vec<Array2<f64>>,
    /// Mask used by each dropout layer (None for other layers).
    pub(crate) masks: Vec<Option<Array2<f64>>>,
}

fn glorot_uniform(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Array2<f64> {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-limit..=limit))
}

impl SequentialModel {
    /// Builds a stochastic model from layer specs. Dense layers without
    /// explicit weights are initialised from `seed`; dropout layers are bound
    /// to the new model's stochastic mode.
    pub fn build(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut init = rng::stream(seed, Purpose::Init, 0);
        let mode = StochasticMode::new();
        let mut layers = Vec::with_capacity(specs.len());
        for (index, spec) in specs.into_iter().enumerate() {
            let layer = match spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(NnError::Construction {
                            layer: index,
                            reason: format!("dense dimensions must be positive, got {in_dim}->{out_dim}"),
                        });
                    }
                    Layer::Dense(Dense {
                        weights: glorot_uniform(&mut init, in_dim, out_dim),
                        biases: Array1::zeros(out_dim),
                    })
                }
                LayerSpec::DenseWith { weights, biases } => {
                    if weights.nrows() != biases.len() {
                        return Err(NnError::Construction {
                            layer: index,
                            reason: format!(
                                "{} weight rows but {} biases",
                                weights.nrows(),
                                biases.len()
                            ),
                        });
                    }
                    Layer::Dense(Dense { weights, biases })
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Softmax => Layer::Softmax,
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout {
                    rate,
                    mode: Some(mode.clone()),
                }),
            };
            layers.push(layer);
        }
        Self::assemble(layers, mode, seed)
    }

    /// Validates a layer stack and wraps it into a model. Dropout layers keep
    /// whatever binding they carry.
    pub(crate) fn assemble(layers: Vec<Layer>, mode: StochasticMode, seed: u64) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut input_dim = None;
        for (index, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    if d.in_dim() == 0 || d.out_dim() == 0 {
                        return Err(NnError::Construction {
                            layer: index,
                            reason: "dense dimensions must be positive".into(),
                        });
                    }
                    if let Some(w) = width {
                        if w != d.in_dim() {
                            return Err(NnError::Construction {
                                layer: index,
                                reason: format!(
                                    "expects {} inputs but the previous dense layer produces {w}",
                                    d.in_dim()
                                ),
                            });
                        }
                    }
                    if d.weights.iter().chain(d.biases.iter()).any(|v| !v.is_finite()) {
                        return Err(NnError::Construction {
                            layer: index,
                            reason: "non-finite parameter".into(),
                        });
                    }
                    input_dim.get_or_insert(d.in_dim());
                    width = Some(d.out_dim());
                }
                Layer::Dropout(d) => {
                    if !(0.0..1.0).contains(&d.rate) {
                        return Err(NnError::Construction {
                            layer: index,
                            reason: format!("dropout rate must be in [0, 1), got {}", d.rate),
                        });
                    }
                }
                Layer::Relu | Layer::Softmax => {}
            }
        }
        let (Some(input_dim), Some(output_dim)) = (input_dim, width) else {
            return Err(NnError::Construction {
                layer: 0,
                reason: "a model needs at least one dense layer".into(),
            });
        };
        let problem_type = match layers.last() {
            Some(Layer::Softmax) => ProblemType::Classification,
            _ => ProblemType::Regression,
        };
        Ok(Self {
            layers,
            mode,
            seed,
            calls: AtomicU64::new(0),
            problem_type,
            input_dim,
            output_dim,
        })
    }

    /// Detaches every dropout layer from the stochastic mode, producing a
    /// plain model whose dropout only acts during training.
    pub fn into_plain(mut self) -> Self {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                d.mode = None;
            }
        }
        self
    }

    /// Converts a plain model into a stochastic one with identical weights,
    /// rebinding every dropout layer to the model's stochastic mode.
    pub fn stochastic_from_plain(model: SequentialModel) -> Converted {
        let mut model = model;
        let mode = StochasticMode::new();
        let mut found = false;
        for layer in &mut model.layers {
            if let Layer::Dropout(d) = layer {
                d.mode = Some(mode.clone());
                found = true;
            }
        }
        model.mode = mode;
        if !found {
            warn!("model has no randomized layers; sampling-based quantifiers will be degenerate");
        }
        Converted {
            model,
            no_randomized_layers: !found,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn problem_type(&self) -> ProblemType {
        self.problem_type
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn stochastic_mode(&self) -> &StochasticMode {
        &self.mode
    }

    /// Switches randomized layers on or off for subsequent [`forward`](Self::forward) calls.
    pub fn set_stochastic_mode(&mut self, enabled: bool) {
        self.mode.set(enabled);
    }

    pub fn has_randomized_layers(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout(_)))
    }

    /// True when every dropout layer is bound to this model's mode.
    pub fn is_stochastic(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::Dropout(d) => d.mode.as_ref().is_some_and(|m| m.same_as(&self.mode)),
            _ => true,
        })
    }

    pub(crate) fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(NnError::Shape(format!(
                "model expects {} input features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Dropout stream for the next stochastic call: derived from the model
    /// seed and a per-model call counter.
    pub(crate) fn next_call_rng(&self) -> ChaCha8Rng {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        rng::stream(self.seed, Purpose::Dropout, call)
    }

    /// Forward pass. Deterministic unless stochastic mode is enabled, in
    /// which case bound dropout layers sample fresh masks.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        if self.mode.is_enabled() && self.has_randomized_layers() {
            let mut rng = self.next_call_rng();
            Ok(self.forward_with(x, DropoutPolicy::On(&mut rng)))
        } else {
            Ok(self.forward_with(x, DropoutPolicy::Off))
        }
    }

    /// Prediction-time forward pass; only dropout layers whose binding is
    /// enabled react to `policy`.
    pub(crate) fn forward_with(&self, x: ArrayView2<f64>, mut policy: DropoutPolicy) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = match layer {
                Layer::Dense(d) => d.forward(a.view()),
                Layer::Relu => relu(&a),
                Layer::Softmax => softmax(&a),
                Layer::Dropout(d) => match &mut policy {
                    DropoutPolicy::On(rng) if d.active_for_prediction() => {
                        let mask = d.sample_mask(a.dim(), *rng);
                        a * mask
                    }
                    _ => a,
                },
            };
        }
        a
    }

    /// Training forward pass: every dropout layer is active when `rng` is
    /// given, regardless of binding.
    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>, mut rng: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut masks = Vec::with_capacity(self.layers.len());
        activations.push(x.to_owned());
        for layer in &self.layers {
            let a = activations.last().expect("input pushed above");
            let (next, mask) = match layer {
                Layer::Dense(d) => (d.forward(a.view()), None),
                Layer::Relu => (relu(a), None),
                Layer::Softmax => (softmax(a), None),
                Layer::Dropout(d) => match rng.as_deref_mut() {
                    Some(r) => {
                        let mask = d.sample_mask(a.dim(), r);
                        (a * &mask, Some(mask))
                    }
                    None => (a.clone(), None),
                },
            };
            activations.push(next);
            masks.push(mask);
        }
        ForwardCache { activations, masks }
    }
}

impl Clone for SequentialModel {
    /// The clone owns a fresh (disabled) stochastic mode; dropout layers that
    /// were bound to the original are bound to the clone's mode instead.
    fn clone(&self) -> Self {
        let mode = StochasticMode::new();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dropout(d) => Layer::Dropout(Dropout {
                    rate: d.rate,
                    mode: d.mode.as_ref().map(|_| mode.clone()),
                }),
                other => other.clone(),
            })
            .collect();
        Self {
            layers,
            mode,
            seed: self.seed,
            calls: AtomicU64::new(self.calls.load(Ordering::SeqCst)),
            problem_type: self.problem_type,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }
}
