//! Per-neuron pre-activation bounds over an input box.

mod lp;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSchema;
use crate::milp::SolverError;
use crate::network::{Activation, FeedForwardNetwork};
use crate::scalar::Scalar;

pub(crate) use lp::{add_activation, add_affine_layer};
pub use lp::{
    lp_tightened_bounds, lp_tightened_bounds_with, tighten_input_box, HiddenEncoding, NeuronValue,
};

/// Widths below this are treated as a point when classifying a ReLU.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("input box has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input box: {0}")]
    InvalidBox(String),
    #[error("constraints admit no input")]
    Infeasible,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> InputBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self, BoundsError> {
        if lower.len() != upper.len() {
            return Err(BoundsError::InvalidBox(
                "lower and upper differ in length".into(),
            ));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(BoundsError::InvalidBox(format!(
                    "dimension {i}: [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lb: T, ub: T) -> Result<Self, BoundsError> {
        Self::new(vec![lb; dim], vec![ub; dim])
    }

    pub fn point(x: &[T]) -> Result<Self, BoundsError> {
        Self::new(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn cast<U: Scalar>(&self) -> InputBox<U> {
        let c = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect()
        };
        InputBox {
            lower: c(&self.lower),
            upper: c(&self.upper),
        }
    }
}

impl InputBox<f64> {
    /// The encoded domain of a schema.
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let (lower, upper) = schema.encoded_bounds().into_iter().unzip();
        Self { lower, upper }
    }
}

/// Pre-activation interval of every neuron in one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> LayerBounds<T> {
    pub fn width(&self) -> usize {
        self.lower.len()
    }

    pub fn pre(&self, j: usize) -> (T, T) {
        (self.lower[j], self.upper[j])
    }

    pub fn post(&self, j: usize) -> (T, T) {
        match self.activation {
            Activation::Relu => (self.lower[j].max(T::zero()), self.upper[j].max(T::zero())),
            Activation::Identity => self.pre(j),
        }
    }
}

/// Bounds for every layer, output layer last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable<T> {
    pub layers: Vec<LayerBounds<T>>,
}

impl<T: Scalar> BoundsTable<T> {
    pub fn hidden(&self) -> &[LayerBounds<T>] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> (T, T) {
        self.layers
            .last()
            .expect("at least the output layer")
            .pre(0)
    }

    /// True when every interval of `self` lies inside the matching one of `other`,
    /// allowing `slack`.
    pub fn within(&self, other: &BoundsTable<T>, slack: T) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.width() == b.width()
                    && (0..a.width()).all(|j| {
                        a.lower[j] >= b.lower[j] - slack && a.upper[j] <= b.upper[j] + slack
                    })
            })
    }

    pub fn cast<U: Scalar>(&self) -> BoundsTable<U> {
        let c = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect()
        };
        BoundsTable {
            layers: self
                .layers
                .iter()
                .map(|l| LayerBounds {
                    lower: c(&l.lower),
                    upper: c(&l.upper),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

fn check_dim<T: Scalar>(net: &FeedForwardNetwork<T>, dim: usize) -> Result<(), BoundsError> {
    if dim != net.input_dim() {
        return Err(BoundsError::Dimension {
            expected: net.input_dim(),
            got: dim,
        });
    }
    Ok(())
}

/// Propagates one affine layer over post-activation intervals of the previous layer.
pub(crate) fn affine_interval<T: Scalar>(
    weights: &[Vec<T>],
    biases: &[T],
    lo: &[T],
    hi: &[T],
) -> (Vec<T>, Vec<T>) {
    weights
        .iter()
        .zip(biases)
        .map(|(row, &b)| {
            row.iter()
                .zip(lo.iter().zip(hi))
                .fold((b, b), |(l, u), (&w, (&a, &c))| {
                    if w >= T::zero() {
                        (l + w * a, u + w * c)
                    } else {
                        (l + w * c, u + w * a)
                    }
                })
        })
        .unzip()
}

/// Interval arithmetic, layer by layer, with post-ReLU clamping.
pub fn interval_bounds<T: Scalar>(
    net: &FeedForwardNetwork<T>,
    input: &InputBox<T>,
) -> Result<BoundsTable<T>, BoundsError> {
    check_dim(net, input.dim())?;
    let mut lo = input.lower.clone();
    let mut hi = input.upper.clone();
    let mut layers = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let (l, u) = affine_interval(&layer.weights, &layer.biases, &lo, &hi);
        let bounds = LayerBounds {
            lower: l,
            upper: u,
            activation: layer.activation,
        };
        (lo, hi) = (0..bounds.width()).map(|j| bounds.post(j)).unzip();
        layers.push(bounds);
    }
    Ok(BoundsTable { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReluState {
    AlwaysActive,
    AlwaysInactive,
    Unstable,
    /// Neuron of an identity layer; never needs a binary.
    Linear,
}

pub fn relu_state<T: Scalar>(activation: Activation, l: T, u: T) -> ReluState {
    if activation == Activation::Identity {
        return ReluState::Linear;
    }
    if l >= T::zero() {
        ReluState::AlwaysActive
    } else if u <= T::zero() {
        ReluState::AlwaysInactive
    } else if (u - l).to_f64_lossy() < DEGENERATE_WIDTH {
        if l + u >= T::zero() {
            ReluState::AlwaysActive
        } else {
            ReluState::AlwaysInactive
        }
    } else {
        ReluState::Unstable
    }
}

/// State of every hidden neuron, indexed `[layer][neuron]`.
pub fn relu_states<T: Scalar>(table: &BoundsTable<T>) -> Vec<Vec<ReluState>> {
    table
        .hidden()
        .iter()
        .map(|l| {
            (0..l.width())
                .map(|j| relu_state(l.activation, l.lower[j], l.upper[j]))
                .collect()
        })
        .collect()
}

pub fn unstable_count(states: &[Vec<ReluState>]) -> usize {
    states
        .iter()
        .flatten()
        .filter(|&&s| s == ReluState::Unstable)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub layer: usize,
    pub neuron: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub input: Vec<f64>,
}

/// Evaluates the network at `samples` uniform points of the box and reports every
/// pre-activation that leaves the table or contradicts its ReLU state.
pub fn sample_bounds_check<T: Scalar>(
    net: &FeedForwardNetwork<T>,
    input: &InputBox<T>,
    table: &BoundsTable<T>,
    samples: usize,
    seed: u64,
) -> Vec<BoundViolation> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..samples.max(1) {
        let x: Vec<T> = input
            .lower
            .iter()
            .zip(&input.upper)
            .map(|(&l, &u)| {
                let t: f64 = rng.gen();
                let v = l.to_f64_lossy() + t * (u - l).to_f64_lossy();
                T::from_f64_lossy(v).max(l).min(u)
            })
            .collect();
        let trace = net.forward_unchecked(&x);
        for (i, (z, b)) in trace.pre_activation.iter().zip(&table.layers).enumerate() {
            for (j, &v) in z.iter().enumerate() {
                let (v, l, u) = (
                    v.to_f64_lossy(),
                    b.lower[j].to_f64_lossy(),
                    b.upper[j].to_f64_lossy(),
                );
                let slack = 1e-9 * (1.0 + v.abs());
                if v < l - slack || v > u + slack {
                    out.push(BoundViolation {
                        layer: i,
                        neuron: j,
                        value: v,
                        lower: l,
                        upper: u,
                        input: x.iter().map(|t| t.to_f64_lossy()).collect(),
                    });
                }
            }
        }
    }
    out
}
