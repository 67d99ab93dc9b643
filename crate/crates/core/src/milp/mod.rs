//! Self-contained LP/MILP modelling and solving.
//!
//! [`MilpModel`] is the single solver-facing representation: bounded continuous and binary
//! variables, linear rows and a linear objective that is always minimized. LP relaxations
//! are solved with a bounded-variable primal simplex ([`solve_lp`]); binaries are handled by
//! best-bound branch-and-bound ([`solve_milp`]). [`export_lp`] and [`import_lp`] bridge to
//! external solvers through the CPLEX LP text format.

mod branch;
mod lp_format;
mod simplex;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use branch::{solve_milp, solve_milp_with_callback, Incumbent, SearchControl};
pub use lp_format::{export_lp, import_lp};
pub use simplex::Basis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("quadratic objectives are export-only; the built-in solver handles linear models")]
    QuadraticObjective,
    #[error("model is infeasible")]
    Infeasible,
    #[error("model is unbounded")]
    Unbounded,
    #[error("solver stopped at its iteration or node limit")]
    Limit,
    #[error("LP format error at line {line}: {detail}")]
    LpFormat { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    /// General integer on finite bounds.
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableDef {
    pub id: VarId,
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    /// Provenance, e.g. `network/relu_upper/l0n1`.
    pub tag: String,
}

impl LinearConstraint {
    pub fn new(tag: impl Into<String>, terms: Vec<(VarId, f64)>, sense: Sense, rhs: f64) -> Self {
        Self {
            terms,
            sense,
            rhs,
            tag: tag.into(),
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

/// A minimization problem over bounded variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MilpModel {
    pub variables: Vec<VariableDef>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Vec<(VarId, f64)>,
    pub objective_constant: f64,
    /// `coef * x_i * x_j` terms; only [`export_lp`] understands these.
    pub quadratic_objective: Vec<(VarId, VarId, f64)>,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lb: f64, ub: f64) -> VarId {
        let id = VarId(self.variables.len());
        self.variables.push(VariableDef {
            id,
            name: name.into(),
            kind,
            lb,
            ub,
        });
        id
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lb, ub)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_integer(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.add_var(name, VarKind::Integer, lb, ub)
    }

    pub fn add_constraint(&mut self, c: LinearConstraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn constrain(
        &mut self,
        tag: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.add_constraint(LinearConstraint::new(tag, terms, sense, rhs))
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, f64)>, constant: f64) {
        self.objective = terms;
        self.objective_constant = constant;
        self.quadratic_objective.clear();
    }

    pub fn var(&self, id: VarId) -> &VariableDef {
        &self.variables[id.0]
    }

    pub fn set_bounds(&mut self, id: VarId, lb: f64, ub: f64) {
        let v = &mut self.variables[id.0];
        v.lb = lb;
        v.ub = ub;
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.id)
    }

    /// Binary and general integer variables.
    pub fn integers(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .filter(|v| v.kind != VarKind::Continuous)
            .map(|v| v.id)
    }

    pub fn has_binaries(&self) -> bool {
        self.binaries().next().is_some()
    }

    /// Copy with every integer variable relaxed to a continuous variable on its bounds.
    pub fn relaxed(&self) -> MilpModel {
        let mut m = self.clone();
        for v in &mut m.variables {
            v.kind = VarKind::Continuous;
        }
        m
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant
            + self.objective.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
            + self
                .quadratic_objective
                .iter()
                .map(|&(i, j, c)| c * x[i.0] * x[j.0])
                .sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = self
            .variables
            .iter()
            .map(|v| (v.lb - x[v.id.0]).max(x[v.id.0] - v.ub).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(x));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn max_integrality_violation(&self, x: &[f64]) -> f64 {
        self.integers()
            .map(|v| (x[v.0] - x[v.0].round()).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.variables.len();
        let bad = |s: String| Err(SolverError::InvalidModel(s));
        for v in &self.variables {
            if v.lb.is_nan() || v.ub.is_nan() || v.lb > v.ub {
                return bad(format!(
                    "variable {} has bounds [{}, {}]",
                    v.name, v.lb, v.ub
                ));
            }
            if v.kind == VarKind::Binary && (v.lb < 0.0 || v.ub > 1.0) {
                return bad(format!("binary {} has bounds [{}, {}]", v.name, v.lb, v.ub));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return bad(format!("row {} has non-finite rhs", c.tag));
            }
            for &(v, coef) in &c.terms {
                if v.0 >= n {
                    return bad(format!("row {} references undefined {v}", c.tag));
                }
                if !coef.is_finite() {
                    return bad(format!("row {} has a non-finite coefficient", c.tag));
                }
            }
        }
        for &(v, coef) in &self.objective {
            if v.0 >= n || !coef.is_finite() {
                return bad(format!("objective term on {v} is invalid"));
            }
        }
        for &(i, j, coef) in &self.quadratic_objective {
            if i.0 >= n || j.0 >= n || !coef.is_finite() {
                return bad("quadratic objective term is invalid".into());
            }
        }
        if !self.objective_constant.is_finite() {
            return bad("objective constant is not finite".into());
        }
        Ok(())
    }

    pub(crate) fn check_solvable(&self) -> Result<(), SolverError> {
        self.validate()?;
        if !self.quadratic_objective.is_empty() {
            return Err(SolverError::QuadraticObjective);
        }
        if let Some(v) = self
            .variables
            .iter()
            .find(|v| !v.lb.is_finite() || !v.ub.is_finite())
        {
            return Err(SolverError::InvalidModel(format!(
                "variable {} needs finite bounds",
                v.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Row and bound feasibility of returned assignments.
    pub feasibility: f64,
    /// Distance of a binary from 0/1 that still counts as integral.
    pub integrality: f64,
    /// Reduced-cost threshold for simplex optimality.
    pub optimality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-7,
            integrality: 1e-6,
            optimality: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpOptions {
    pub tolerances: Tolerances,
    /// Absolute optimality gap.
    pub gap_abs: f64,
    /// Relative optimality gap (fraction of the incumbent's magnitude).
    pub gap_rel: f64,
    pub node_limit: usize,
    /// Stop with [`SolveStatus::Feasible`] once an incumbent reaches this objective.
    pub objective_threshold: Option<f64>,
    /// Discard every node whose bound exceeds this value.
    pub cutoff: Option<f64>,
    pub time_limit: Option<Duration>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            gap_abs: 1e-5,
            gap_rel: 0.0,
            node_limit: 500_000,
            objective_threshold: None,
            cutoff: None,
            time_limit: None,
        }
    }
}

impl MilpOptions {
    pub fn exact() -> Self {
        Self {
            gap_abs: 1e-9,
            ..Self::default()
        }
    }

    /// Applies `key=value` overrides separated by commas or whitespace.
    /// Keys: `feasibility`, `integrality`, `optimality`, `gap`, `gap_rel`, `nodes`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), String> {
        for item in spec
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
        {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{item}`"))?;
            let num: f64 = value
                .parse()
                .map_err(|_| format!("bad number `{value}` for `{key}`"))?;
            if !(num.is_finite() && num >= 0.0) {
                return Err(format!("`{key}` must be a non-negative number"));
            }
            match key {
                "feasibility" => self.tolerances.feasibility = num,
                "integrality" => self.tolerances.integrality = num,
                "optimality" => self.tolerances.optimality = num,
                "gap" => self.gap_abs = num,
                "gap_rel" => self.gap_rel = num,
                "nodes" => self.node_limit = num as usize,
                other => return Err(format!("unknown tolerance key `{other}`")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Early stop: the incumbent crossed the objective threshold or a callback asked to stop.
    Feasible,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Present for `Optimal` and `Feasible`, and for `IterationLimit` when an incumbent exists.
    pub assignment: Option<Vec<f64>>,
    /// Objective of `assignment`, `+inf` without one.
    pub objective_value: f64,
    /// Lower bound proven on the optimum.
    pub best_bound: f64,
    /// Bound of the root relaxation.
    pub root_bound: f64,
    pub node_count: usize,
    pub lp_iterations: usize,
    pub gap: f64,
}

impl SolveOutcome {
    pub(crate) fn without_solution(status: SolveStatus) -> Self {
        Self {
            status,
            assignment: None,
            objective_value: f64::INFINITY,
            best_bound: f64::INFINITY,
            root_bound: f64::INFINITY,
            node_count: 0,
            lp_iterations: 0,
            gap: f64::INFINITY,
        }
    }

    pub fn has_solution(&self) -> bool {
        self.assignment.is_some()
    }
}

/// Solves the LP relaxation (binaries relaxed to their bounds).
pub fn solve_lp(model: &MilpModel, tolerances: &Tolerances) -> Result<SolveOutcome, SolverError> {
    model.check_solvable()?;
    let data = simplex::LpData::from_model(model);
    let lp = simplex::solve(&data, &data.lower, &data.upper, None, tolerances)?;
    Ok(lp.into_outcome(model))
}

/// LP relaxation solve that also returns the final basis for warm starts.
pub fn solve_lp_warm(
    model: &MilpModel,
    tolerances: &Tolerances,
    warm: Option<&Basis>,
) -> Result<(SolveOutcome, Option<Basis>), SolverError> {
    model.check_solvable()?;
    let data = simplex::LpData::from_model(model);
    let lp = simplex::solve(&data, &data.lower, &data.upper, warm, tolerances)?;
    let basis = lp.basis.clone();
    Ok((lp.into_outcome(model), basis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Optimal value of one variable over the model's feasible set: an LP when the model has
/// no binaries, an exact MILP otherwise.
pub fn optimize_variable(
    model: &MilpModel,
    var: VarId,
    direction: Direction,
) -> Result<f64, SolverError> {
    optimize_variable_warm(model, var, direction, &Tolerances::default(), None).map(|(v, _)| v)
}

/// [`optimize_variable`] for LP models with an optional starting basis; returns the final
/// basis so consecutive bound queries on one model reuse each other's work.
pub fn optimize_variable_warm(
    model: &MilpModel,
    var: VarId,
    direction: Direction,
    tolerances: &Tolerances,
    warm: Option<&Basis>,
) -> Result<(f64, Option<Basis>), SolverError> {
    let sign = match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    if var.0 >= model.num_vars() {
        return Err(SolverError::InvalidModel(format!("undefined {var}")));
    }
    let mut m = model.clone();
    m.set_objective(vec![(var, sign)], 0.0);
    let (outcome, basis) = if m.has_binaries() {
        let opts = MilpOptions {
            tolerances: *tolerances,
            ..MilpOptions::exact()
        };
        (solve_milp(&m, &opts)?, None)
    } else {
        solve_lp_warm(&m, tolerances, warm)?
    };
    match outcome.status {
        SolveStatus::Optimal => {
            let x = outcome.assignment.expect("optimal has assignment");
            Ok((x[var.0], basis))
        }
        SolveStatus::Infeasible => Err(SolverError::Infeasible),
        SolveStatus::Unbounded => Err(SolverError::Unbounded),
        _ => Err(SolverError::Limit),
    }
}
