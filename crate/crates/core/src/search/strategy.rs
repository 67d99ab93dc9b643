use std::time::Instant;

use super::solve::{attempt, Attempt, AttemptStats, Candidate, Job};
use super::{CfeQuery, CfeResult, CfeStatus, Phase, SearchConfig, SearchError, ShellRecord};
use crate::encoder::DistanceMode;
use crate::features::EncodedPoint;

struct Run<'q, 'a> {
    q: &'q CfeQuery<'a>,
    cfg: &'q SearchConfig,
    started: Instant,
    deadline: Option<Instant>,
    trace: Vec<ShellRecord>,
}

impl<'q, 'a> Run<'q, 'a> {
    fn new(q: &'q CfeQuery<'a>, cfg: &'q SearchConfig) -> Self {
        let started = Instant::now();
        Self {
            q,
            cfg,
            started,
            deadline: cfg.time_limit.map(|t| started + t),
            trace: Vec::new(),
        }
    }

    fn solve(
        &mut self,
        phase: Phase,
        mode: DistanceMode,
        previous: &[EncodedPoint<f64>],
    ) -> Result<Attempt, SearchError> {
        let job = Job {
            mode,
            previous,
            deadline: self.deadline,
        };
        let (a, stats): (Attempt, AttemptStats) = attempt(self.q, self.cfg, &job)?;
        let (lb, ub) = match mode {
            DistanceMode::Interval { lb, ub } => (lb, ub),
            DistanceMode::Objective => (0.0, 1.0),
        };
        self.trace.push(ShellRecord {
            phase,
            lb,
            ub,
            outcome: a.outcome(),
            nodes: stats.nodes,
            lp_iterations: stats.lp_iterations,
            offset_retries: stats.offset_retries,
        });
        Ok(a)
    }

    fn shell(&mut self, phase: Phase, lb: f64, ub: f64) -> Result<Attempt, SearchError> {
        self.solve(phase, DistanceMode::Interval { lb, ub }, &[])
    }

    fn finish(self, status: CfeStatus, best: Option<Candidate>) -> CfeResult {
        let (point, distance, output) = match best {
            Some(c) => (Some(c.point), Some(c.distance), Some(c.output)),
            None => (None, None, None),
        };
        CfeResult {
            status,
            point,
            distance,
            output,
            trace: self.trace,
            wall_time: self.started.elapsed(),
        }
    }
}

/// Looks for a counterfactual whose distance to the factual lies in `[lb, ub]`.
/// `Ok(None)` means the shell provably holds none.
pub fn find_cfe_shell(
    q: &CfeQuery<'_>,
    lb: f64,
    ub: f64,
    cfg: &SearchConfig,
) -> Result<Option<EncodedPoint<f64>>, SearchError> {
    cfg.validate()?;
    if !(0.0 <= lb && lb <= ub && ub <= 1.0) {
        return Err(SearchError::InvalidConfig(format!(
            "shell [{lb}, {ub}] outside [0, 1]"
        )));
    }
    match Run::new(q, cfg).shell(Phase::Expansion, lb, ub)? {
        Attempt::Found(c) | Attempt::Limit(Some(c), _) => Ok(Some(c.point)),
        Attempt::Absent => Ok(None),
        Attempt::Limit(None, r) | Attempt::Failed(r) => Err(SearchError::Solver(r)),
    }
}

/// Doubling shells `[0, ε], [ε, 2ε], ...` until one holds a counterfactual, then bisection
/// of that shell down to width `ε`.
pub fn generate_mip_exp(q: &CfeQuery<'_>, cfg: &SearchConfig) -> Result<CfeResult, SearchError> {
    cfg.validate()?;
    let mut run = Run::new(q, cfg);
    let (mut lb, mut ub) = (0.0, cfg.epsilon);
    let mut best = loop {
        if run.trace.len() >= cfg.max_expansions {
            return Ok(run.finish(CfeStatus::Failed("expansion cap exceeded".into()), None));
        }
        match run.shell(Phase::Expansion, lb, ub)? {
            Attempt::Found(c) | Attempt::Limit(Some(c), _) => break c,
            Attempt::Absent if ub >= 1.0 => {
                return Ok(run.finish(CfeStatus::NoCounterfactualInBox, None))
            }
            Attempt::Absent => {
                lb = ub;
                ub = (2.0 * ub).min(1.0);
            }
            Attempt::Limit(None, r) | Attempt::Failed(r) => {
                return Ok(run.finish(CfeStatus::Failed(r), None))
            }
        }
    };
    // Nothing below `lo`; `best` sits at or below `hi`.
    let mut lo = lb;
    let mut hi = best.distance.min(ub);
    // Relative slack so that halving a width of `2^j ε` stops after exactly `j` steps.
    while hi - lo > cfg.epsilon * (1.0 + 1e-9) {
        let mid = 0.5 * (lo + hi);
        match run.shell(Phase::Refinement, lo, mid)? {
            Attempt::Found(c) | Attempt::Limit(Some(c), _) => {
                hi = c.distance.min(mid);
                if c.distance < best.distance {
                    best = c;
                }
            }
            Attempt::Absent => lo = mid,
            Attempt::Limit(None, r) | Attempt::Failed(r) => {
                return Ok(run.finish(CfeStatus::Failed(r), Some(best)));
            }
        }
    }
    Ok(run.finish(CfeStatus::Found, Some(best)))
}

/// One MILP minimizing the distance, solved to an absolute gap of at most `ε`.
pub fn generate_mip_obj(q: &CfeQuery<'_>, cfg: &SearchConfig) -> Result<CfeResult, SearchError> {
    generate_mip_obj_excluding(q, cfg, &[])
}

/// MIP-OBJ with diversity rows against `previous`.
pub(super) fn generate_mip_obj_excluding(
    q: &CfeQuery<'_>,
    cfg: &SearchConfig,
    previous: &[EncodedPoint<f64>],
) -> Result<CfeResult, SearchError> {
    cfg.validate()?;
    let mut run = Run::new(q, cfg);
    Ok(
        match run.solve(Phase::Objective, DistanceMode::Objective, previous)? {
            Attempt::Found(c) => run.finish(CfeStatus::Found, Some(c)),
            Attempt::Absent => run.finish(CfeStatus::NoCounterfactualInBox, None),
            Attempt::Limit(c, r) => run.finish(CfeStatus::Failed(r), c),
            Attempt::Failed(r) => run.finish(CfeStatus::Failed(r), None),
        },
    )
}
