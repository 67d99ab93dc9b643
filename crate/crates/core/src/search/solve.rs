//! One encoded solve: build the model for a distance shell or objective, run branch and
//! bound, and check the decoded point against the real network.

use std::time::Instant;

use super::{CfeQuery, SearchConfig, SearchError, ShellOutcome};
use crate::bounds::{
    lp_tightened_bounds_with, relu_states, tighten_input_box, BoundsError, InputBox,
};
use crate::encoder::{DistanceMode, EncodeError, EncodingArtifacts};
use crate::features::{
    distance, validate_actionability, validate_plausibility, Actionability, EncodedPoint,
    FeatureKind, Norm,
};
use crate::milp::{solve_milp, MilpModel, MilpOptions, SolveStatus};
use crate::network::Label;

/// Extra room added to the flip row on top of the margin. The solver's feasibility
/// tolerance can leave a point a hair on the wrong side; each failed forward check moves
/// to the next value.
const FLIP_OFFSETS: [f64; 4] = [1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Candidate {
    pub point: EncodedPoint<f64>,
    pub distance: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Attempt {
    Found(Candidate),
    Absent,
    /// Solver stopped early; a shell solve may still carry a valid point.
    Limit(Option<Candidate>, String),
    Failed(String),
}

impl Attempt {
    pub fn outcome(&self) -> ShellOutcome {
        match self {
            Attempt::Found(c) | Attempt::Limit(Some(c), _) => ShellOutcome::Found {
                distance: c.distance,
            },
            Attempt::Absent => ShellOutcome::Absent,
            Attempt::Limit(None, r) | Attempt::Failed(r) => {
                ShellOutcome::Failed { reason: r.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(super) struct AttemptStats {
    pub nodes: usize,
    pub lp_iterations: usize,
    pub offset_retries: usize,
}

pub(super) struct Job<'p> {
    pub mode: DistanceMode,
    pub previous: &'p [EncodedPoint<f64>],
    pub deadline: Option<Instant>,
}

enum Built {
    Model(EncodingArtifacts, usize),
    Absent,
}

fn build(q: &CfeQuery<'_>, cfg: &SearchConfig, job: &Job<'_>) -> Result<Built, SearchError> {
    let schema = q.schema;
    let mut enc = EncodingArtifacts::new(schema, &InputBox::from_schema(schema))?;
    enc.add_plausibility(schema);
    enc.add_actionability(schema, &q.factual)?;
    enc.add_distance(schema, &q.factual, cfg.norm, job.mode)?;
    if !job.previous.is_empty() {
        enc.add_diversity(schema, job.previous, cfg.delta_div, cfg.norm)?;
    }
    let absent = |e: BoundsError| match e {
        BoundsError::Infeasible => Ok(Built::Absent),
        e => Err(SearchError::Solver(e.to_string())),
    };
    let input = match tighten_input_box(&enc.milp, &enc.input_vars) {
        Ok(b) => b,
        Err(e) => return absent(e),
    };
    match enc.restrict_inputs(&input) {
        Ok(()) => {}
        Err(EncodeError::EmptyBox(_)) => return Ok(Built::Absent),
        Err(e) => return Err(e.into()),
    }
    let table = match lp_tightened_bounds_with(q.net, &enc.milp, &enc.input_vars) {
        Ok(t) => t,
        Err(e) => return absent(e),
    };
    let (lo, hi) = table.output();
    let unreachable = match q.target {
        Label::Positive => hi < FLIP_OFFSETS[0],
        Label::Negative => lo > -(cfg.margin + FLIP_OFFSETS[0]),
    };
    if unreachable {
        return Ok(Built::Absent);
    }
    enc.add_network_bounded(q.net, &table, &relu_states(&table))?;
    enc.add_counterfactual(&cfg.rule(q.target))?;
    let flip_row = enc.milp.num_constraints() - 1;
    Ok(Built::Model(enc, flip_row))
}

/// Moves scalar coordinates onto the factual where actionability pins them, removing
/// solver noise before validation.
fn repair(q: &CfeQuery<'_>, point: &mut EncodedPoint<f64>) {
    for (i, f) in q.schema.features().iter().enumerate() {
        if !matches!(
            f.kind,
            FeatureKind::Real { .. } | FeatureKind::Integer { .. }
        ) {
            continue;
        }
        let c = q.schema.block(i).start;
        let p = q.factual.values[c];
        let v = &mut point.values[c];
        let (lb, ub) = f.kind.scalar_range().expect("scalar kind");
        *v = v.clamp(lb, ub);
        if (*v - p).abs() <= 1e-9 * (ub - lb).max(1.0) {
            *v = p;
        }
        match f.actionability {
            Actionability::Fixed => *v = p,
            Actionability::IncreaseOnly => *v = v.max(p),
            Actionability::DecreaseOnly => *v = v.min(p),
            Actionability::Free => {}
        }
    }
}

enum Checked {
    Valid(Candidate),
    NotFlipped,
    Invalid(String),
}

fn check(
    q: &CfeQuery<'_>,
    cfg: &SearchConfig,
    enc: &EncodingArtifacts,
    x: &[f64],
) -> Result<Checked, SearchError> {
    let mut point = enc.decode_point(x);
    repair(q, &mut point);
    if let Some(v) = validate_plausibility(q.schema, &point).into_iter().next() {
        return Ok(Checked::Invalid(format!(
            "decoded point is not plausible: {v}"
        )));
    }
    if let Some(v) = validate_actionability(q.schema, &point, &q.factual)
        .into_iter()
        .next()
    {
        return Ok(Checked::Invalid(format!(
            "decoded point breaks actionability: {v}"
        )));
    }
    let output = q.net.output(&point.values)?;
    if !cfg.rule(q.target).is_flipped(output) {
        return Ok(Checked::NotFlipped);
    }
    let distance = distance(q.schema, &point, &q.factual, cfg.norm).map_err(EncodeError::from)?;
    Ok(Checked::Valid(Candidate {
        point,
        distance,
        output,
    }))
}

/// Builds and solves one model, retrying with larger flip offsets while the decoded
/// point fails the forward check.
pub(super) fn attempt(
    q: &CfeQuery<'_>,
    cfg: &SearchConfig,
    job: &Job<'_>,
) -> Result<(Attempt, AttemptStats), SearchError> {
    let mut stats = AttemptStats::default();
    let (mut enc, flip_row) = match build(q, cfg, job)? {
        Built::Model(enc, row) => (enc, row),
        Built::Absent => return Ok((Attempt::Absent, stats)),
    };
    let out = enc.output_var.expect("network encoded");
    let objective_mode = job.mode == DistanceMode::Objective;
    for (k, &extra) in FLIP_OFFSETS.iter().enumerate() {
        stats.offset_retries = k;
        let mut opts: MilpOptions = cfg.solver.clone();
        let row = &mut enc.milp.constraints[flip_row];
        let threshold = match q.target {
            Label::Positive => {
                row.rhs = extra;
                -extra
            }
            Label::Negative => {
                row.rhs = -(cfg.margin + extra);
                -(cfg.margin + extra)
            }
        };
        if objective_mode {
            opts.gap_abs = opts.gap_abs.min(cfg.epsilon);
        } else {
            // Any flipped point answers a shell; push the output away from the boundary.
            let sign = if q.target == Label::Positive {
                -1.0
            } else {
                1.0
            };
            enc.milp.set_objective(vec![(out, sign)], 0.0);
            opts.objective_threshold = Some(threshold);
        }
        if let Some(deadline) = job.deadline {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok((Attempt::Failed("timeout".into()), stats));
            }
            opts.time_limit = Some(opts.time_limit.map_or(left, |t| t.min(left)));
        }
        let sol = match solve_milp(&enc.milp, &opts) {
            Ok(s) => s,
            Err(e) => return Ok((Attempt::Failed(e.to_string()), stats)),
        };
        stats.nodes += sol.node_count;
        stats.lp_iterations += sol.lp_iterations;
        let limit_reason = || {
            if job.deadline.is_some_and(|d| Instant::now() >= d) {
                "timeout".to_string()
            } else {
                "solver limit reached".to_string()
            }
        };
        let x = match (sol.status, sol.assignment) {
            (SolveStatus::Infeasible, _) => return Ok((Attempt::Absent, stats)),
            (SolveStatus::Unbounded, _) => {
                return Ok((Attempt::Failed("unbounded relaxation".into()), stats))
            }
            (SolveStatus::IterationLimit, None) => {
                return Ok((Attempt::Limit(None, limit_reason()), stats))
            }
            (_, Some(x)) => x,
            (s, None) => {
                return Ok((
                    Attempt::Failed(format!("{s:?} without an assignment")),
                    stats,
                ))
            }
        };
        match check(q, cfg, &enc, &x)? {
            Checked::Valid(c) if sol.status == SolveStatus::IterationLimit && objective_mode => {
                return Ok((Attempt::Limit(Some(c), limit_reason()), stats))
            }
            Checked::Valid(c) => return Ok((Attempt::Found(c), stats)),
            Checked::Invalid(reason) => return Ok((Attempt::Failed(reason), stats)),
            Checked::NotFlipped => continue,
        }
    }
    Ok((
        Attempt::Failed("solver points stay on the factual side of the boundary".into()),
        stats,
    ))
}

/// The MIP-OBJ model for `q` with the flip row at its first offset, as handed to the
/// solver. Under L2 the objective becomes the quadratic export objective. `None` when
/// bound propagation already shows no counterfactual exists.
pub fn objective_model(
    q: &CfeQuery<'_>,
    cfg: &SearchConfig,
) -> Result<Option<MilpModel>, SearchError> {
    let mut linear = cfg.clone();
    if cfg.norm == Norm::L2 {
        linear.norm = Norm::L1;
    }
    linear.validate()?;
    let job = Job {
        mode: DistanceMode::Objective,
        previous: &[],
        deadline: None,
    };
    let (mut enc, flip_row) = match build(q, &linear, &job)? {
        Built::Model(enc, row) => (enc, row),
        Built::Absent => return Ok(None),
    };
    enc.milp.constraints[flip_row].rhs = match q.target {
        Label::Positive => FLIP_OFFSETS[0],
        Label::Negative => -(cfg.margin + FLIP_OFFSETS[0]),
    };
    if cfg.norm == Norm::L2 {
        enc.set_l2_export_objective(q.schema, &q.factual)?;
    }
    Ok(Some(enc.milp))
}
