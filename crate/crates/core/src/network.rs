//! ReLU feed-forward binary classifiers: representation, evaluation and model files.
//!
//! A network maps an encoded input vector to a single logit `h(x)`. Hidden layers apply
//! a ReLU (or, for linear test fixtures, the identity); the output layer is always linear.
//! The predicted label is [`Label::Positive`] exactly when `h(x) >= 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("model file parse error: {0}")]
    Parse(String),
    #[error("unsupported model format version {0}")]
    UnsupportedFormat(u32),
    #[error("network has no layers")]
    Empty,
    #[error("input_dim must be positive")]
    ZeroInput,
    #[error("layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("layer {layer}: non-finite value in {what}")]
    NonFinite { layer: usize, what: &'static str },
    #[error("output layer has {0} rows; only single-output networks are supported")]
    MultiOutput(usize),
    #[error("output layer must be linear")]
    NonLinearOutput,
    #[error("input has length {got}, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("input contains a non-finite entry at index {0}")]
    NonFiniteInput(usize),
}

/// Activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// Row-major `k_i x k_{i-1}` matrix.
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: Vec<Vec<T>>, biases: Vec<T>, activation: Activation) -> Self {
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.biases.len()
    }

    pub fn fan_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `W v + b`.
    pub fn affine(&self, input: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }

    pub fn activate(&self, pre: &[T]) -> Vec<T> {
        match self.activation {
            Activation::Relu => pre.iter().map(|&z| z.max(T::zero())).collect(),
            Activation::Identity => pre.to_vec(),
        }
    }
}

/// Binary decision of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn of_output<T: Scalar>(output: T) -> Self {
        if output >= T::zero() {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

/// Pre- and post-activation values of every layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    /// `z_i` per layer, including the output layer last.
    pub pre_activation: Vec<Vec<T>>,
    /// `ẑ_i` per layer; for the output layer this equals the pre-activation.
    pub post_activation: Vec<Vec<T>>,
    pub output: T,
}

/// A validated ReLU network with a single linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNetwork<T> {
    input_dim: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> FeedForwardNetwork<T> {
    /// Validates shapes and values. A ReLU on the output layer is rejected.
    pub fn new(input_dim: usize, layers: Vec<Layer<T>>) -> Result<Self, NetworkError> {
        if input_dim == 0 {
            return Err(NetworkError::ZeroInput);
        }
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut prev = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.biases.len() {
                return Err(NetworkError::ShapeMismatch {
                    layer: i,
                    detail: format!(
                        "{} weight rows but {} biases",
                        layer.weights.len(),
                        layer.biases.len()
                    ),
                });
            }
            if layer.weights.is_empty() {
                return Err(NetworkError::ShapeMismatch {
                    layer: i,
                    detail: "layer has no neurons".into(),
                });
            }
            for (r, row) in layer.weights.iter().enumerate() {
                if row.len() != prev {
                    return Err(NetworkError::ShapeMismatch {
                        layer: i,
                        detail: format!("row {r} has {} columns, expected {prev}", row.len()),
                    });
                }
                if row.iter().any(|w| !w.is_finite()) {
                    return Err(NetworkError::NonFinite {
                        layer: i,
                        what: "weights",
                    });
                }
            }
            if layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(NetworkError::NonFinite {
                    layer: i,
                    what: "biases",
                });
            }
            prev = layer.width();
        }
        let last = layers.last().expect("non-empty");
        if last.width() != 1 {
            return Err(NetworkError::MultiOutput(last.width()));
        }
        if last.activation != Activation::Identity {
            return Err(NetworkError::NonLinearOutput);
        }
        Ok(Self { input_dim, layers })
    }

    /// Builds a network from hidden ReLU layers `(W, b)` and an output row.
    pub fn relu(
        input_dim: usize,
        hidden: Vec<(Vec<Vec<T>>, Vec<T>)>,
        output_weights: Vec<T>,
        output_bias: T,
    ) -> Result<Self, NetworkError> {
        let mut layers: Vec<Layer<T>> = hidden
            .into_iter()
            .map(|(w, b)| Layer::new(w, b, Activation::Relu))
            .collect();
        layers.push(Layer::new(
            vec![output_weights],
            vec![output_bias],
            Activation::Identity,
        ));
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of weight layers `n`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn hidden_layers(&self) -> &[Layer<T>] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer<T> {
        self.layers.last().expect("validated non-empty")
    }

    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_layers().iter().map(Layer::width).sum()
    }

    fn check_input(&self, x: &[T]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::InputShape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NetworkError::NonFiniteInput(i));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<ActivationTrace<T>, NetworkError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> ActivationTrace<T> {
        let mut pre_activation = Vec::with_capacity(self.layers.len());
        let mut post_activation = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&current);
            current = layer.activate(&z);
            pre_activation.push(z);
            post_activation.push(current.clone());
        }
        let output = current[0];
        ActivationTrace {
            pre_activation,
            post_activation,
            output,
        }
    }

    /// `h(x)` without the trace.
    pub fn output(&self, x: &[T]) -> Result<T, NetworkError> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = layer.activate(&layer.affine(&current));
        }
        Ok(current[0])
    }

    pub fn predicted_label(&self, x: &[T]) -> Result<Label, NetworkError> {
        self.output(x).map(Label::of_output)
    }

    /// Converts every weight to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FeedForwardNetwork<U> {
        let conv = |v: T| U::from_f64_lossy(v.to_f64_lossy());
        FeedForwardNetwork {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(|&w| conv(w)).collect())
                        .collect(),
                    biases: l.biases.iter().map(|&b| conv(b)).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: u32,
    input_dim: usize,
    layers: Vec<LayerDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDocument {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
}

/// Parses and validates a model file (JSON, `format: 1`).
///
/// Hidden layers default to ReLU; the output layer defaults to (and must be) linear.
pub fn load_network(document: &str) -> Result<FeedForwardNetwork<f64>, NetworkError> {
    let doc: ModelDocument =
        serde_json::from_str(document).map_err(|e| NetworkError::Parse(e.to_string()))?;
    if doc.format != MODEL_FORMAT_VERSION {
        return Err(NetworkError::UnsupportedFormat(doc.format));
    }
    let n = doc.layers.len();
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let default = if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer::new(l.weights, l.biases, l.activation.unwrap_or(default))
        })
        .collect();
    FeedForwardNetwork::new(doc.input_dim, layers)
}

/// Serializes a network to the model file format. Numbers use the shortest
/// representation that parses back to the identical `f64`.
pub fn save_network<T: Scalar>(net: &FeedForwardNetwork<T>) -> String {
    let n = net.layers.len();
    let doc = ModelDocument {
        format: MODEL_FORMAT_VERSION,
        input_dim: net.input_dim,
        layers: net
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerDocument {
                weights: l
                    .weights
                    .iter()
                    .map(|r| r.iter().map(|w| w.to_f64_lossy()).collect())
                    .collect(),
                biases: l.biases.iter().map(|b| b.to_f64_lossy()).collect(),
                activation: (i + 1 < n && l.activation != Activation::Relu).then_some(l.activation),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// `z1 = x1 - x2`, `z2 = 2 x1 - x3`, `h = -ẑ1 + ẑ2`.
    pub fn three_input() -> FeedForwardNetwork<f64> {
        FeedForwardNetwork::relu(
            3,
            vec![(
                vec![vec![1.0, -1.0, 0.0], vec![2.0, 0.0, -1.0]],
                vec![0.0, 0.0],
            )],
            vec![-1.0, 1.0],
            0.0,
        )
        .unwrap()
    }

    /// `z1 = x1 + x2`, `z2 = -x1 - x2`, `z3 = z1 + z2`.
    pub fn cancelling(activation: Activation) -> FeedForwardNetwork<f64> {
        FeedForwardNetwork::new(
            2,
            vec![
                Layer::new(
                    vec![vec![1.0, 1.0], vec![-1.0, -1.0]],
                    vec![0.0, 0.0],
                    activation,
                ),
                Layer::new(vec![vec![1.0, 1.0]], vec![0.0], Activation::Identity),
            ],
        )
        .unwrap()
    }
}
