//! MILP assembly for counterfactual queries.
//!
//! [`EncodingArtifacts`] starts from the input variables of a schema and grows by
//! fragments: plausibility, actionability, distance, the network itself, the flip row
//! and diversity rows. Every row carries a tag whose first path segment names the
//! fragment that produced it.

mod distance;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

pub use distance::DistanceMode;

use crate::bounds::{
    add_activation, add_affine_layer, relu_state, BoundsTable, HiddenEncoding, InputBox,
    NeuronValue, ReluState,
};
use crate::features::{
    Actionability, EncodedPoint, FeatureError, FeatureKind, FeatureSchema, Norm,
};
use crate::milp::{MilpModel, Sense, VarId};
use crate::network::{Activation, FeedForwardNetwork, Label};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("norm {0} is not supported by the built-in solver (export it instead)")]
    UnsupportedNorm(Norm),
    #[error("network expects {expected} inputs, schema encodes {got}")]
    Dimension { expected: usize, got: usize },
    #[error("bounds table does not match the network: {0}")]
    MissingBounds(String),
    #[error("invalid distance interval [{0}, {1}]")]
    InvalidInterval(f64, f64),
    #[error("diversity threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("input box excludes every admissible value of encoded column {0}")]
    EmptyBox(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Fragment that produced a row, read from the first segment of its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fragment {
    Network,
    Distance,
    Plausibility,
    Actionability,
    Diversity,
    Counterfactual,
}

impl Fragment {
    pub fn prefix(self) -> &'static str {
        match self {
            Fragment::Network => "network/",
            Fragment::Distance => "distance/",
            Fragment::Plausibility => "plausibility/",
            Fragment::Actionability => "actionability/",
            Fragment::Diversity => "diversity/",
            Fragment::Counterfactual => "counterfactual/",
        }
    }
}

/// Side of the decision boundary a counterfactual must reach.
///
/// `Positive` means `h(x) >= positive_offset`; `Negative` means `h(x) <= -margin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRule {
    pub target: Label,
    pub margin: f64,
    pub positive_offset: f64,
}

impl FlipRule {
    pub fn new(target: Label, margin: f64) -> Self {
        Self {
            target,
            margin,
            positive_offset: 0.0,
        }
    }

    /// True label semantics with the margin on the negative side.
    pub fn is_flipped(&self, output: f64) -> bool {
        match self.target {
            Label::Positive => output >= 0.0,
            Label::Negative => output <= -self.margin && output < 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodingArtifacts {
    pub milp: MilpModel,
    /// One variable per encoded input column.
    pub input_vars: Vec<VarId>,
    pub output_var: Option<VarId>,
    pub distance_var: Option<VarId>,
    /// Binary indicator of every unstable ReLU, with its `(layer, neuron)`.
    pub deltas: Vec<(VarId, (usize, usize))>,
    /// Pre-activation variable of every neuron, `[layer][neuron]`.
    pub pre_activation: Vec<Vec<VarId>>,
}

impl EncodingArtifacts {
    /// Input variables for `schema` restricted to `input`: continuous for real columns,
    /// general integer for integer columns, binary for every block column. Integer and
    /// binary columns keep only the integral part of their box.
    pub fn new(schema: &FeatureSchema, input: &InputBox<f64>) -> Result<Self, EncodeError> {
        if input.dim() != schema.encoded_dim() {
            return Err(EncodeError::Dimension {
                expected: schema.encoded_dim(),
                got: input.dim(),
            });
        }
        let mut milp = MilpModel::new();
        let mut input_vars = Vec::with_capacity(schema.encoded_dim());
        for (i, f) in schema.features().iter().enumerate() {
            for (c, col) in schema.block(i).enumerate() {
                let (lb, ub) = (input.lower[col], input.upper[col]);
                let name = if f.kind.encoded_width() == 1 {
                    f.name.clone()
                } else {
                    format!("{}[{}]", f.name, c + 1)
                };
                let v = match f.kind {
                    FeatureKind::Real { .. } => milp.add_continuous(name, lb, ub),
                    FeatureKind::Integer { .. } => {
                        let (l, u) = ((lb - 1e-9).ceil(), (ub + 1e-9).floor());
                        if l > u {
                            return Err(EncodeError::EmptyBox(col));
                        }
                        milp.add_integer(name, l, u)
                    }
                    _ => {
                        let (l, u) = ((lb - 1e-9).ceil().max(0.0), (ub + 1e-9).floor().min(1.0));
                        if l > u {
                            return Err(EncodeError::EmptyBox(col));
                        }
                        let v = milp.add_binary(name);
                        milp.set_bounds(v, l, u);
                        v
                    }
                };
                input_vars.push(v);
            }
        }
        Ok(Self {
            milp,
            input_vars,
            output_var: None,
            distance_var: None,
            deltas: Vec::new(),
            pre_activation: Vec::new(),
        })
    }

    pub fn binary_count(&self) -> usize {
        self.milp.binaries().count()
    }

    pub fn rows(
        &self,
        fragment: Fragment,
    ) -> impl Iterator<Item = &crate::milp::LinearConstraint> + '_ {
        self.milp
            .constraints
            .iter()
            .filter(move |c| c.tag.starts_with(fragment.prefix()))
    }

    /// Narrows the input variables to `input`; integer columns keep their integral part.
    pub fn restrict_inputs(&mut self, input: &InputBox<f64>) -> Result<(), EncodeError> {
        if input.dim() != self.input_vars.len() {
            return Err(EncodeError::Dimension {
                expected: self.input_vars.len(),
                got: input.dim(),
            });
        }
        for (col, &v) in self.input_vars.iter().enumerate() {
            let def = self.milp.var(v).clone();
            let (mut l, mut u) = (input.lower[col].max(def.lb), input.upper[col].min(def.ub));
            if def.kind == crate::milp::VarKind::Continuous {
                // Tightened boxes may cross by rounding noise.
                if l > u && l - u <= 1e-9 * (1.0 + l.abs()) {
                    let mid = 0.5 * (l + u);
                    (l, u) = (mid, mid);
                }
            } else {
                l = (l - 1e-9).ceil();
                u = (u + 1e-9).floor();
            }
            if l > u {
                return Err(EncodeError::EmptyBox(col));
            }
            self.milp.set_bounds(v, l, u);
        }
        Ok(())
    }

    /// Thermometer chains `f_j >= f_{j+1}` and one-hot sums.
    pub fn add_plausibility(&mut self, schema: &FeatureSchema) {
        for (i, f) in schema.features().iter().enumerate() {
            let cols: Vec<VarId> = schema.block(i).map(|c| self.input_vars[c]).collect();
            match f.kind {
                FeatureKind::Ordinal { .. } => {
                    for (j, w) in cols.windows(2).enumerate() {
                        self.milp.constrain(
                            format!("plausibility/thermometer/{}/{}", f.name, j + 1),
                            vec![(w[0], 1.0), (w[1], -1.0)],
                            Sense::Ge,
                            0.0,
                        );
                    }
                }
                FeatureKind::Categorical { .. } => {
                    self.milp.constrain(
                        format!("plausibility/one_hot/{}", f.name),
                        cols.iter().map(|&v| (v, 1.0)).collect(),
                        Sense::Eq,
                        1.0,
                    );
                }
                _ => {}
            }
        }
    }

    /// Per-feature change rules relative to the factual point.
    pub fn add_actionability(
        &mut self,
        schema: &FeatureSchema,
        xf: &EncodedPoint<f64>,
    ) -> Result<(), EncodeError> {
        if xf.len() != schema.encoded_dim() {
            return Err(FeatureError::SchemaMismatch {
                expected: schema.encoded_dim(),
                got: xf.len(),
            }
            .into());
        }
        for (i, f) in schema.features().iter().enumerate() {
            let block = schema.block(i);
            let terms: Vec<(VarId, f64)> =
                block.clone().map(|c| (self.input_vars[c], 1.0)).collect();
            let level: f64 = xf.values[block.clone()].iter().sum();
            let tag = |what: &str| format!("actionability/{what}/{}", f.name);
            match f.actionability {
                Actionability::Free => {}
                Actionability::Fixed => {
                    for c in block {
                        self.milp.constrain(
                            tag("fixed"),
                            vec![(self.input_vars[c], 1.0)],
                            Sense::Eq,
                            xf.values[c],
                        );
                    }
                }
                Actionability::IncreaseOnly => {
                    self.milp
                        .constrain(tag("increase_only"), terms, Sense::Ge, level);
                }
                Actionability::DecreaseOnly => {
                    self.milp
                        .constrain(tag("decrease_only"), terms, Sense::Le, level);
                }
            }
        }
        Ok(())
    }

    fn check_net(&self, net: &FeedForwardNetwork<f64>) -> Result<(), EncodeError> {
        if net.input_dim() != self.input_vars.len() {
            return Err(EncodeError::Dimension {
                expected: net.input_dim(),
                got: self.input_vars.len(),
            });
        }
        Ok(())
    }

    /// Exact network encoding using per-neuron bounds: stable neurons are substituted,
    /// each unstable ReLU gets one binary.
    pub fn add_network_bounded(
        &mut self,
        net: &FeedForwardNetwork<f64>,
        table: &BoundsTable<f64>,
        states: &[Vec<ReluState>],
    ) -> Result<VarId, EncodeError> {
        self.check_net(net)?;
        if table.layers.len() != net.depth()
            || table
                .layers
                .iter()
                .zip(net.layers())
                .any(|(b, l)| b.width() != l.width())
        {
            return Err(EncodeError::MissingBounds("layer shapes differ".into()));
        }
        if states.len() + 1 != net.depth()
            || states
                .iter()
                .zip(net.layers())
                .any(|(s, l)| s.len() != l.width())
        {
            return Err(EncodeError::MissingBounds("state map shape differs".into()));
        }
        let mut prev: Vec<NeuronValue> = self
            .input_vars
            .iter()
            .map(|&v| NeuronValue::Var(v))
            .collect();
        let last = net.depth() - 1;
        for (i, (layer, bounds)) in net.layers().iter().zip(&table.layers).enumerate() {
            let zs = add_affine_layer(
                &mut self.milp,
                i,
                layer,
                &prev,
                &bounds.lower,
                &bounds.upper,
            );
            if i < last {
                prev = zs
                    .iter()
                    .enumerate()
                    .map(|(j, &z)| {
                        let (v, d) = add_activation(
                            &mut self.milp,
                            i,
                            j,
                            z,
                            bounds.pre(j),
                            states[i][j],
                            HiddenEncoding::Bounded,
                        );
                        if let Some(d) = d {
                            self.deltas.push((d, (i, j)));
                        }
                        v
                    })
                    .collect();
            }
            self.pre_activation.push(zs);
        }
        let out = self.pre_activation[last][0];
        self.output_var = Some(out);
        Ok(out)
    }

    /// Big-M reference encoding: every ReLU gets a binary and `|z| <= big_m` is assumed.
    pub fn add_network_unbounded(
        &mut self,
        net: &FeedForwardNetwork<f64>,
        big_m: f64,
    ) -> Result<VarId, EncodeError> {
        self.check_net(net)?;
        let m = big_m;
        let mut prev: Vec<NeuronValue> = self
            .input_vars
            .iter()
            .map(|&v| NeuronValue::Var(v))
            .collect();
        let last = net.depth() - 1;
        for (i, layer) in net.layers().iter().enumerate() {
            let w = layer.width();
            let zs = add_affine_layer(&mut self.milp, i, layer, &prev, &vec![-m; w], &vec![m; w]);
            if i < last {
                prev = zs
                    .iter()
                    .enumerate()
                    .map(|(j, &z)| {
                        if layer.activation == Activation::Identity {
                            return NeuronValue::Var(z);
                        }
                        let tag = |what: &str| format!("network/{what}/l{i}n{j}");
                        let h = self.milp.add_continuous(format!("relu_l{i}n{j}"), 0.0, m);
                        let d = self.milp.add_binary(format!("delta_l{i}n{j}"));
                        self.milp.constrain(
                            tag("relu_lower"),
                            vec![(h, 1.0), (z, -1.0)],
                            Sense::Ge,
                            0.0,
                        );
                        self.milp.constrain(
                            tag("bigm_active"),
                            vec![(h, 1.0), (z, -1.0), (d, m)],
                            Sense::Le,
                            m,
                        );
                        self.milp.constrain(
                            tag("bigm_inactive"),
                            vec![(h, 1.0), (d, -m)],
                            Sense::Le,
                            0.0,
                        );
                        self.deltas.push((d, (i, j)));
                        NeuronValue::Var(h)
                    })
                    .collect();
            }
            self.pre_activation.push(zs);
        }
        let out = self.pre_activation[last][0];
        self.output_var = Some(out);
        Ok(out)
    }

    /// The flip row on the output variable.
    pub fn add_counterfactual(&mut self, rule: &FlipRule) -> Result<(), EncodeError> {
        let out = self
            .output_var
            .ok_or_else(|| EncodeError::MissingBounds("network not encoded yet".into()))?;
        match rule.target {
            Label::Positive => self.milp.constrain(
                "counterfactual/flip",
                vec![(out, 1.0)],
                Sense::Ge,
                rule.positive_offset,
            ),
            Label::Negative => self.milp.constrain(
                "counterfactual/flip",
                vec![(out, 1.0)],
                Sense::Le,
                -rule.margin,
            ),
        };
        Ok(())
    }

    /// Input values of an assignment, with integer columns rounded.
    pub fn decode_point(&self, assignment: &[f64]) -> EncodedPoint<f64> {
        EncodedPoint::new(
            self.input_vars
                .iter()
                .map(|&v| {
                    let def = self.milp.var(v);
                    let x = assignment[v.0].clamp(def.lb, def.ub);
                    if def.kind != crate::milp::VarKind::Continuous {
                        x.round()
                    } else {
                        x
                    }
                })
                .collect(),
        )
    }
}

/// States of every hidden neuron implied by a table (convenience over `bounds::relu_states`).
pub fn states_for(net: &FeedForwardNetwork<f64>, table: &BoundsTable<f64>) -> Vec<Vec<ReluState>> {
    net.hidden_layers()
        .iter()
        .zip(table.hidden())
        .map(|(layer, b)| {
            (0..b.width())
                .map(|j| relu_state(layer.activation, b.lower[j], b.upper[j]))
                .collect()
        })
        .collect()
}

/// Number of sampled points at which some pre-activation leaves `[-big_m, big_m]`, i.e.
/// where the big-M encoding would cut off reachable behaviour.
pub fn big_m_violations(
    net: &FeedForwardNetwork<f64>,
    input: &InputBox<f64>,
    big_m: f64,
    samples: usize,
    seed: u64,
) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..samples)
        .filter(|_| {
            let x: Vec<f64> = input
                .lower
                .iter()
                .zip(&input.upper)
                .map(|(&l, &u)| l + rng.gen::<f64>() * (u - l))
                .collect();
            let trace = net.forward_unchecked(&x);
            trace
                .pre_activation
                .iter()
                .flatten()
                .any(|z| z.abs() > big_m)
        })
        .count()
}

#[cfg(test)]
mod tests;
