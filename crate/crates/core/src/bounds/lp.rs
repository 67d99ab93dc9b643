//! Layer-by-layer LP tightening with the triangle relaxation of each unstable ReLU.

use super::{
    affine_interval, relu_state, BoundsError, BoundsTable, InputBox, LayerBounds, ReluState,
};
use crate::milp::{
    optimize_variable_warm, Basis, Direction, LinearConstraint, MilpModel, Sense, SolverError,
    Tolerances, VarId,
};
use crate::network::{FeedForwardNetwork, Layer};

/// Post-activation value of a neuron inside a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeuronValue {
    Var(VarId),
    /// A neuron proven inactive contributes nothing downstream.
    Zero,
}

/// How unstable ReLUs are written into a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenEncoding {
    /// Triangle over-approximation, no binaries.
    Relaxed,
    /// Exact formulation with one binary per unstable neuron.
    Bounded,
}

/// Adds `z = W ẑ_prev + b` for one layer; the new variables carry the given bounds.
pub(crate) fn add_affine_layer(
    model: &mut MilpModel,
    index: usize,
    layer: &Layer<f64>,
    prev: &[NeuronValue],
    lower: &[f64],
    upper: &[f64],
) -> Vec<VarId> {
    (0..layer.width())
        .map(|j| {
            let z = model.add_continuous(format!("z_l{index}n{j}"), lower[j], upper[j]);
            let mut terms = vec![(z, 1.0)];
            for (&w, &p) in layer.weights[j].iter().zip(prev) {
                if let NeuronValue::Var(v) = p {
                    if w != 0.0 {
                        terms.push((v, -w));
                    }
                }
            }
            model.constrain(
                format!("network/affine/l{index}n{j}"),
                terms,
                Sense::Eq,
                layer.biases[j],
            );
            z
        })
        .collect()
}

/// Writes the activation of neuron `j` in layer `index`. Returns its post-activation
/// value and, for the bounded encoding of an unstable ReLU, the binary indicator.
pub(crate) fn add_activation(
    model: &mut MilpModel,
    index: usize,
    j: usize,
    z: VarId,
    (l, u): (f64, f64),
    state: ReluState,
    encoding: HiddenEncoding,
) -> (NeuronValue, Option<VarId>) {
    match state {
        ReluState::Linear | ReluState::AlwaysActive => (NeuronValue::Var(z), None),
        ReluState::AlwaysInactive => (NeuronValue::Zero, None),
        ReluState::Unstable => {
            let h = model.add_continuous(format!("relu_l{index}n{j}"), 0.0, u);
            let tag = |what: &str| format!("network/{what}/l{index}n{j}");
            model.constrain(tag("relu_lower"), vec![(h, 1.0), (z, -1.0)], Sense::Ge, 0.0);
            match encoding {
                HiddenEncoding::Relaxed => {
                    let s = u / (u - l);
                    model.constrain(
                        tag("relu_triangle"),
                        vec![(h, 1.0), (z, -s)],
                        Sense::Le,
                        -s * l,
                    );
                    (NeuronValue::Var(h), None)
                }
                HiddenEncoding::Bounded => {
                    let d = model.add_binary(format!("delta_l{index}n{j}"));
                    model.constrain(
                        tag("relu_active_cap"),
                        vec![(h, 1.0), (d, -u)],
                        Sense::Le,
                        0.0,
                    );
                    model.constrain(
                        tag("relu_inactive_cap"),
                        vec![(h, 1.0), (z, -1.0), (d, -l)],
                        Sense::Le,
                        -l,
                    );
                    (NeuronValue::Var(h), Some(d))
                }
            }
        }
    }
}

fn solver_err(e: SolverError) -> BoundsError {
    match e {
        SolverError::Infeasible => BoundsError::Infeasible,
        other => BoundsError::Solver(other),
    }
}

fn widen(v: f64) -> f64 {
    1e-8 * (1.0 + v.abs())
}

/// LP bounds of one variable intersected with `[lo, hi]`.
fn tighten(
    model: &MilpModel,
    v: VarId,
    (lo, hi): (f64, f64),
    tol: &Tolerances,
    basis: &mut Option<Basis>,
) -> Result<(f64, f64), BoundsError> {
    if hi - lo <= 0.0 {
        return Ok((lo, hi));
    }
    let (min, b) = optimize_variable_warm(model, v, Direction::Min, tol, basis.as_ref())
        .map_err(solver_err)?;
    *basis = b;
    let (max, b) = optimize_variable_warm(model, v, Direction::Max, tol, basis.as_ref())
        .map_err(solver_err)?;
    *basis = b;
    let l = (min - widen(min)).max(lo);
    let u = (max + widen(max)).min(hi);
    Ok(if l <= u { (l, u) } else { (u, l) })
}

/// Smallest box containing the feasible region of `base` projected on `input_vars`
/// (binaries relaxed).
pub fn tighten_input_box(
    base: &MilpModel,
    input_vars: &[VarId],
) -> Result<InputBox<f64>, BoundsError> {
    let model = base.relaxed();
    let tol = Tolerances::default();
    let mut basis = None;
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for &v in input_vars {
        let def = model.var(v);
        let (l, u) = tighten(&model, v, (def.lb, def.ub), &tol, &mut basis)?;
        lower.push(l);
        upper.push(u);
    }
    if input_vars
        .iter()
        .all(|&v| model.var(v).lb == model.var(v).ub)
    {
        // No LP was solved; still detect infeasible rows.
        crate::milp::solve_lp(&model, &tol)
            .map_err(solver_err)
            .and_then(|o| {
                if o.has_solution() {
                    Ok(())
                } else {
                    Err(BoundsError::Infeasible)
                }
            })?;
    }
    InputBox::new(lower, upper)
}

/// LP-tightened bounds where `base` already holds the input variables (with their box as
/// variable bounds) and any extra constraints over them, such as a distance shell.
pub fn lp_tightened_bounds_with(
    net: &FeedForwardNetwork<f64>,
    base: &MilpModel,
    input_vars: &[VarId],
) -> Result<BoundsTable<f64>, BoundsError> {
    if input_vars.len() != net.input_dim() {
        return Err(BoundsError::Dimension {
            expected: net.input_dim(),
            got: input_vars.len(),
        });
    }
    let tol = Tolerances::default();
    let mut model = base.relaxed();
    let mut prev: Vec<NeuronValue> = input_vars.iter().map(|&v| NeuronValue::Var(v)).collect();
    let mut prev_lo: Vec<f64> = input_vars.iter().map(|&v| model.var(v).lb).collect();
    let mut prev_hi: Vec<f64> = input_vars.iter().map(|&v| model.var(v).ub).collect();
    InputBox::new(prev_lo.clone(), prev_hi.clone())?;
    let mut basis = None;
    let mut layers = Vec::with_capacity(net.depth());
    let last = net.depth() - 1;
    for (i, layer) in net.layers().iter().enumerate() {
        let (il, iu) = affine_interval(&layer.weights, &layer.biases, &prev_lo, &prev_hi);
        let zs = add_affine_layer(&mut model, i, layer, &prev, &il, &iu);
        let mut bounds = LayerBounds {
            lower: il.clone(),
            upper: iu.clone(),
            activation: layer.activation,
        };
        for (j, &z) in zs.iter().enumerate() {
            let (l, u) = tighten(&model, z, (il[j], iu[j]), &tol, &mut basis)?;
            model.set_bounds(z, l, u);
            bounds.lower[j] = l;
            bounds.upper[j] = u;
        }
        if i < last {
            prev = zs
                .iter()
                .enumerate()
                .map(|(j, &z)| {
                    let (l, u) = bounds.pre(j);
                    let state = relu_state(layer.activation, l, u);
                    add_activation(&mut model, i, j, z, (l, u), state, HiddenEncoding::Relaxed).0
                })
                .collect();
            (prev_lo, prev_hi) = (0..bounds.width()).map(|j| bounds.post(j)).unzip();
        }
        layers.push(bounds);
    }
    Ok(BoundsTable { layers })
}

/// LP-tightened bounds over `input`, optionally restricted by rows over the inputs
/// (variable `k` is input dimension `k`).
pub fn lp_tightened_bounds(
    net: &FeedForwardNetwork<f64>,
    input: &InputBox<f64>,
    extra: &[LinearConstraint],
) -> Result<BoundsTable<f64>, BoundsError> {
    if input.dim() != net.input_dim() {
        return Err(BoundsError::Dimension {
            expected: net.input_dim(),
            got: input.dim(),
        });
    }
    let mut base = MilpModel::new();
    let vars: Vec<VarId> = (0..input.dim())
        .map(|k| base.add_continuous(format!("x{k}"), input.lower[k], input.upper[k]))
        .collect();
    for c in extra {
        if let Some(&(v, _)) = c.terms.iter().find(|(v, _)| v.0 >= vars.len()) {
            return Err(BoundsError::InvalidBox(format!(
                "extra row {} references non-input {v}",
                c.tag
            )));
        }
        base.add_constraint(c.clone());
    }
    lp_tightened_bounds_with(net, &base, &vars)
}
