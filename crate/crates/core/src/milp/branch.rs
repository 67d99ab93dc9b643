//! Best-bound branch-and-bound over the integer variables of a [`MilpModel`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use super::simplex::{self, Basis, LpData};
use super::{MilpModel, MilpOptions, SolveOutcome, SolveStatus, SolverError};

/// A new incumbent, as reported to [`solve_milp_with_callback`].
#[derive(Debug, Clone, Copy)]
pub struct Incumbent<'a> {
    pub assignment: &'a [f64],
    pub objective: f64,
    pub best_bound: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchControl {
    Continue,
    Stop,
}

struct Node {
    id: u64,
    bound: f64,
    /// Bound changes `(var, lower, upper)` along the path from the root.
    fixes: Vec<(usize, f64, f64)>,
    basis: Option<Rc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Max-heap order: the smallest bound (then the oldest node) is the greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.id.cmp(&self.id))
    }
}

pub fn solve_milp(model: &MilpModel, options: &MilpOptions) -> Result<SolveOutcome, SolverError> {
    solve_milp_with_callback(model, options, |_| SearchControl::Continue)
}

/// Branch-and-bound that reports every improving incumbent to `on_incumbent`.
pub fn solve_milp_with_callback<F>(
    model: &MilpModel,
    options: &MilpOptions,
    mut on_incumbent: F,
) -> Result<SolveOutcome, SolverError>
where
    F: FnMut(&Incumbent<'_>) -> SearchControl,
{
    model.check_solvable()?;
    let started = Instant::now();
    let tol = &options.tolerances;
    let data = LpData::from_model(model);
    let integers: Vec<usize> = model.integers().map(|v| v.0).collect();

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        bound: f64::NEG_INFINITY,
        fixes: Vec::new(),
        basis: None,
    });
    let mut next_id = 1u64;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut out = SolveOutcome::without_solution(SolveStatus::Infeasible);
    out.root_bound = f64::NEG_INFINITY;
    let mut incomplete = false;
    let mut status = None;
    let gap_tol = |inc: f64| options.gap_abs.max(options.gap_rel * inc.abs());

    while let Some(node) = heap.peek() {
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - gap_tol(*inc) {
                break;
            }
        }
        if out.node_count >= options.node_limit
            || options.time_limit.is_some_and(|t| started.elapsed() >= t)
        {
            status = Some(SolveStatus::IterationLimit);
            break;
        }
        let node = heap.pop().expect("peeked");
        if options.cutoff.is_some_and(|c| node.bound > c) {
            continue;
        }
        let mut lower = data.lower.clone();
        let mut upper = data.upper.clone();
        for &(j, lo, hi) in &node.fixes {
            lower[j] = lower[j].max(lo);
            upper[j] = upper[j].min(hi);
        }
        let lp = simplex::solve(&data, &lower, &upper, node.basis.as_deref(), tol)?;
        out.node_count += 1;
        out.lp_iterations += lp.iterations;
        match lp.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                if node.id == 0 {
                    out.root_bound = f64::INFINITY;
                }
                continue;
            }
            SolveStatus::Unbounded => {
                // Finite bounds on every variable rule this out short of numerical trouble.
                return Err(SolverError::Numerical(
                    "LP relaxation reported unbounded".into(),
                ));
            }
            _ => {
                incomplete = true;
                continue;
            }
        }
        let bound = lp.objective.max(node.bound);
        if node.id == 0 {
            out.root_bound = bound;
        }
        if options.cutoff.is_some_and(|c| bound > c) {
            continue;
        }
        if let Some((inc, _)) = &incumbent {
            if bound >= inc - gap_tol(*inc) {
                continue;
            }
        }
        let most_fractional = |threshold: f64| {
            integers
                .iter()
                .copied()
                .filter(|&j| (lp.x[j] - lp.x[j].round()).abs() > threshold)
                .max_by(|&a, &b| {
                    let fa = lp.x[a] - lp.x[a].floor();
                    let fb = lp.x[b] - lp.x[b].floor();
                    fa.min(1.0 - fa)
                        .total_cmp(&fb.min(1.0 - fb))
                        .then(b.cmp(&a))
                })
        };
        let mut branch_var = most_fractional(tol.integrality);
        let mut polished = None;
        if branch_var.is_none() {
            polished = polish(
                &data,
                &lower,
                &upper,
                &integers,
                (lp.objective, &lp.x),
                lp.basis.as_ref(),
                tol,
            )?;
            if polished.is_none() {
                // Integral only within tolerance and the rounded point is infeasible.
                branch_var = most_fractional(0.0);
            }
        }
        match branch_var {
            None => {
                let lp = polished.unwrap_or(Polished {
                    objective: lp.objective,
                    x: lp.x,
                });
                if incumbent
                    .as_ref()
                    .is_none_or(|(inc, _)| lp.objective < *inc)
                {
                    let best_bound = heap
                        .peek()
                        .map_or(lp.objective, |n| n.bound.min(lp.objective));
                    let info = Incumbent {
                        assignment: &lp.x,
                        objective: lp.objective,
                        best_bound,
                        node_count: out.node_count,
                    };
                    let stop_threshold = options
                        .objective_threshold
                        .is_some_and(|t| lp.objective <= t);
                    let control = on_incumbent(&info);
                    incumbent = Some((lp.objective, lp.x));
                    if stop_threshold || control == SearchControl::Stop {
                        status = Some(SolveStatus::Feasible);
                        break;
                    }
                }
            }
            Some(j) => {
                let basis = lp.basis.map(Rc::new);
                let (down, up) = (lp.x[j].floor(), lp.x[j].ceil());
                for (lo, hi) in [(f64::NEG_INFINITY, down), (up, f64::INFINITY)] {
                    let mut fixes = node.fixes.clone();
                    fixes.push((j, lo, hi));
                    heap.push(Node {
                        id: next_id,
                        bound,
                        fixes,
                        basis: basis.clone(),
                    });
                    next_id += 1;
                }
            }
        }
    }

    let open_bound = heap.peek().map(|n| n.bound);
    match incumbent {
        Some((obj, x)) => {
            let best = open_bound.map_or(obj, |b| b.min(obj));
            out.status = status.unwrap_or(if incomplete {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Optimal
            });
            if out.status == SolveStatus::Optimal && incomplete {
                out.status = SolveStatus::IterationLimit;
            }
            out.objective_value = obj;
            out.best_bound = best;
            out.gap = (obj - best).max(0.0);
            out.assignment = Some(x);
        }
        None => {
            out.status = match status {
                Some(s) => s,
                None if incomplete => SolveStatus::IterationLimit,
                None => SolveStatus::Infeasible,
            };
            out.best_bound = open_bound.unwrap_or(f64::INFINITY);
        }
    }
    Ok(out)
}

struct Polished {
    objective: f64,
    x: Vec<f64>,
}

/// Rounds the integer variables of an integral-within-tolerance solution and re-solves
/// the continuous part, so the returned assignment satisfies the rows with exact
/// integers. `None` when the rounded LP is infeasible.
fn polish(
    data: &LpData,
    lower: &[f64],
    upper: &[f64],
    integers: &[usize],
    (objective, x): (f64, &[f64]),
    basis: Option<&Basis>,
    tol: &super::Tolerances,
) -> Result<Option<Polished>, SolverError> {
    if integers.iter().all(|&j| x[j] == x[j].round()) {
        return Ok(Some(Polished {
            objective,
            x: x.to_vec(),
        }));
    }
    let (mut lo, mut hi) = (lower.to_vec(), upper.to_vec());
    for &j in integers {
        let r = x[j].round().clamp(lower[j], upper[j]);
        lo[j] = r;
        hi[j] = r;
    }
    let lp = simplex::solve(data, &lo, &hi, basis, tol)?;
    Ok((lp.status == SolveStatus::Optimal).then_some(Polished {
        objective: lp.objective,
        x: lp.x,
    }))
}
