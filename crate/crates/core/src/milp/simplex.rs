//! Bounded-variable primal simplex on `A x - s = 0`, `l <= (x, s) <= u`.
//!
//! Each row gets a logical variable `s` whose bounds encode the row sense. The basis
//! inverse is kept dense and explicit; it is rebuilt from scratch periodically and
//! whenever optimality has to be confirmed, and basic values are refined against the row
//! residual after each rebuild. Phase 1 minimizes the sum of bound
//! infeasibilities of the basic variables, phase 2 the true objective; both share one loop.

use super::{MilpModel, Sense, SolveOutcome, SolveStatus, SolverError, Tolerances};

const PIVOT_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_STEPS_BEFORE_BLAND: usize = 50;

/// Column-wise copy of a model in computational form.
#[derive(Debug, Clone)]
pub(crate) struct LpData {
    pub m: usize,
    pub n: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub cost: Vec<f64>,
    pub constant: f64,
    /// Bounds of structurals followed by logicals.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpData {
    pub fn from_model(model: &MilpModel) -> Self {
        let n = model.num_vars();
        let m = model.num_constraints();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &model.variables {
            lower.push(v.lb);
            upper.push(v.ub);
        }
        for (r, c) in model.constraints.iter().enumerate() {
            for &(v, coef) in &c.terms {
                match cols[v.0].last_mut() {
                    Some((row, acc)) if *row == r => *acc += coef,
                    _ => cols[v.0].push((r, coef)),
                }
            }
            let (lo, up) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(up);
        }
        for col in &mut cols {
            col.retain(|&(_, c)| c != 0.0);
        }
        let mut cost = vec![0.0; n];
        for &(v, c) in &model.objective {
            cost[v.0] += c;
        }
        Self {
            m,
            n,
            cols,
            cost,
            constant: model.objective_constant,
            lower,
            upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarState {
    Basic,
    Lower,
    Upper,
}

/// A simplex basis, reusable as a warm start for the same model or one that only
/// appended variables and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    n: usize,
    m: usize,
    head: Vec<usize>,
    state: Vec<VarState>,
}

impl Basis {
    fn slack(n: usize, m: usize) -> Self {
        let mut state = vec![VarState::Lower; n];
        state.extend(std::iter::repeat_n(VarState::Basic, m));
        Self {
            n,
            m,
            head: (n..n + m).collect(),
            state,
        }
    }

    fn extended(&self, n: usize, m: usize) -> Option<Self> {
        if self.n > n || self.m > m || self.head.len() != self.m {
            return None;
        }
        let remap = |j: usize| if j < self.n { j } else { j - self.n + n };
        let mut state = vec![VarState::Lower; n + m];
        for (j, &s) in self.state.iter().enumerate() {
            state[remap(j)] = s;
        }
        let mut head: Vec<usize> = self.head.iter().map(|&j| remap(j)).collect();
        for r in self.m..m {
            head.push(n + r);
            state[n + r] = VarState::Basic;
        }
        Some(Self { n, m, head, state })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LpResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

impl LpResult {
    pub fn into_outcome(self, _model: &MilpModel) -> SolveOutcome {
        let mut out = SolveOutcome::without_solution(self.status);
        out.lp_iterations = self.iterations;
        if self.status == SolveStatus::Optimal {
            out.objective_value = self.objective;
            out.best_bound = self.objective;
            out.root_bound = self.objective;
            out.gap = 0.0;
            out.assignment = Some(self.x);
        }
        out
    }
}

/// Solves `data` under the given bounds (which may be tighter than the model's).
/// A warm start that runs into numerical trouble or the iteration limit is retried from
/// the slack basis.
pub(crate) fn solve(
    data: &LpData,
    lower: &[f64],
    upper: &[f64],
    warm: Option<&Basis>,
    tol: &Tolerances,
) -> Result<LpResult, SolverError> {
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(LpResult {
            status: SolveStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            iterations: 0,
            basis: None,
        });
    }
    let start = warm.and_then(|b| b.extended(data.n, data.m));
    match start {
        Some(b) => match Simplex::new(data, lower, upper, b, *tol).run() {
            Ok(r) if r.status != SolveStatus::IterationLimit => Ok(r),
            _ => Simplex::new(data, lower, upper, Basis::slack(data.n, data.m), *tol).run(),
        },
        None => Simplex::new(data, lower, upper, Basis::slack(data.n, data.m), *tol).run(),
    }
}

struct Simplex<'a> {
    d: &'a LpData,
    lo: &'a [f64],
    up: &'a [f64],
    tol: Tolerances,
    m: usize,
    head: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    /// Row `p` belongs to basis position `p`; `binv[p * m + i]`.
    binv: Vec<f64>,
    /// Primal tolerance used for phase decisions and the Harris ratio test.
    ptol: f64,
    iterations: usize,
}

struct Entering {
    j: usize,
    dir: f64,
}

impl<'a> Simplex<'a> {
    fn new(d: &'a LpData, lo: &'a [f64], up: &'a [f64], basis: Basis, tol: Tolerances) -> Self {
        let mut s = Self {
            d,
            lo,
            up,
            tol,
            m: d.m,
            head: basis.head,
            state: basis.state,
            x: vec![0.0; d.n + d.m],
            binv: Vec::new(),
            ptol: (tol.feasibility * 1e-2).max(1e-12),
            iterations: 0,
        };
        s.normalize_states();
        s
    }

    fn normalize_states(&mut self) {
        for j in 0..self.state.len() {
            match self.state[j] {
                VarState::Lower if !self.lo[j].is_finite() => self.state[j] = VarState::Upper,
                VarState::Upper if !self.up[j].is_finite() => self.state[j] = VarState::Lower,
                _ => {}
            }
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Upper => self.up[j],
            _ => self.lo[j],
        }
    }

    fn invert(&mut self) -> bool {
        let (m, n) = (self.m, self.d.n);
        let mut a = vec![0.0; m * m];
        for (p, &j) in self.head.iter().enumerate() {
            if j < n {
                for &(r, c) in &self.d.cols[j] {
                    a[r * m + p] = c;
                }
            } else {
                a[(j - n) * m + p] = -1.0;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&r, &s| a[r * m + col].abs().total_cmp(&a[s * m + col].abs()))
                .unwrap();
            if a[piv * m + col].abs() < SINGULAR_TOL {
                return false;
            }
            if piv != col {
                for k in 0..m {
                    a.swap(piv * m + k, col * m + k);
                    inv.swap(piv * m + k, col * m + k);
                }
            }
            let p = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= p;
                inv[col * m + k] /= p;
            }
            for r in 0..m {
                let f = a[r * m + col];
                if r == col || f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    a[r * m + k] -= f * a[col * m + k];
                    inv[r * m + k] -= f * inv[col * m + k];
                }
            }
        }
        self.binv = inv;
        true
    }

    /// Falls back to the all-logical basis, parking structurals at their nearest bound.
    fn reset_to_slack(&mut self) {
        let n = self.d.n;
        for j in 0..n {
            if self.state[j] == VarState::Basic {
                let v = self.x[j];
                self.state[j] = if (v - self.lo[j]).abs() <= (self.up[j] - v).abs() {
                    VarState::Lower
                } else {
                    VarState::Upper
                };
            }
        }
        for r in 0..self.m {
            self.state[n + r] = VarState::Basic;
        }
        self.head = (n..n + self.m).collect();
        self.normalize_states();
    }

    fn refactor(&mut self) -> Result<(), SolverError> {
        if !self.invert() {
            self.reset_to_slack();
            if !self.invert() {
                return Err(SolverError::Numerical("slack basis is singular".into()));
            }
        }
        self.recompute_x();
        Ok(())
    }

    fn recompute_x(&mut self) {
        let (m, n) = (self.m, self.d.n);
        let mut r = vec![0.0; m];
        for j in 0..n + m {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            self.x[j] = v;
            if v == 0.0 {
                continue;
            }
            if j < n {
                for &(row, c) in &self.d.cols[j] {
                    r[row] += c * v;
                }
            } else {
                r[j - n] -= v;
            }
        }
        for p in 0..m {
            let row = &self.binv[p * m..(p + 1) * m];
            self.x[self.head[p]] = -row.iter().zip(&r).map(|(b, v)| b * v).sum::<f64>();
        }
        // Iterative refinement against the inverse's rounding error.
        for _ in 0..2 {
            let mut res: Vec<f64> = (0..m).map(|row| -self.x[n + row]).collect();
            for j in 0..n {
                let v = self.x[j];
                if v != 0.0 {
                    for &(row, c) in &self.d.cols[j] {
                        res[row] += c * v;
                    }
                }
            }
            if res.iter().all(|v| v.abs() <= 1e-12) {
                break;
            }
            for p in 0..m {
                let row = &self.binv[p * m..(p + 1) * m];
                self.x[self.head[p]] -= row.iter().zip(&res).map(|(b, v)| b * v).sum::<f64>();
            }
        }
    }

    /// Phase-1 cost of each basic position, or `None` when the basis is primal feasible.
    fn infeasibility_costs(&self) -> Option<Vec<f64>> {
        let mut any = false;
        let c = self
            .head
            .iter()
            .map(|&j| {
                let v = self.x[j];
                if v < self.lo[j] - self.ptol {
                    any = true;
                    -1.0
                } else if v > self.up[j] + self.ptol {
                    any = true;
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        any.then_some(c)
    }

    fn max_infeasibility(&self) -> f64 {
        self.head
            .iter()
            .map(|&j| {
                (self.lo[j] - self.x[j])
                    .max(self.x[j] - self.up[j])
                    .max(0.0)
            })
            .fold(0.0, f64::max)
    }

    fn column_dot(&self, y: &[f64], j: usize) -> f64 {
        if j < self.d.n {
            self.d.cols[j].iter().map(|&(r, c)| y[r] * c).sum()
        } else {
            -y[j - self.d.n]
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let (m, n) = (self.m, self.d.n);
        (0..m)
            .map(|p| {
                let row = &self.binv[p * m..(p + 1) * m];
                if j < n {
                    self.d.cols[j].iter().map(|&(r, c)| row[r] * c).sum()
                } else {
                    -row[j - n]
                }
            })
            .collect()
    }

    fn price(&self, phase1: Option<&[f64]>, bland: bool) -> Option<Entering> {
        let (m, n) = (self.m, self.d.n);
        let cb: Vec<f64> = match phase1 {
            Some(c) => c.to_vec(),
            None => self
                .head
                .iter()
                .map(|&j| if j < n { self.d.cost[j] } else { 0.0 })
                .collect(),
        };
        let mut y = vec![0.0; m];
        for (p, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                for (yi, b) in y.iter_mut().zip(&self.binv[p * m..(p + 1) * m]) {
                    *yi += c * b;
                }
            }
        }
        let mut best: Option<(Entering, f64)> = None;
        for j in 0..n + m {
            let state = self.state[j];
            if state == VarState::Basic || self.up[j] - self.lo[j] <= 0.0 {
                continue;
            }
            let cj = if phase1.is_none() && j < n {
                self.d.cost[j]
            } else {
                0.0
            };
            let dj = cj - self.column_dot(&y, j);
            let dir = match state {
                VarState::Lower if dj < -self.tol.optimality => 1.0,
                VarState::Upper if dj > self.tol.optimality => -1.0,
                _ => continue,
            };
            if bland {
                return Some(Entering { j, dir });
            }
            if best.as_ref().is_none_or(|(_, s)| dj.abs() > *s) {
                best = Some((Entering { j, dir }, dj.abs()));
            }
        }
        best.map(|(e, _)| e)
    }

    /// Returns `(position, step, target bound of the leaving variable)`.
    fn ratio_test(&self, alpha: &[f64], dir: f64, bland: bool) -> Option<(usize, f64, f64)> {
        let mut cands: Vec<(usize, f64, f64, f64)> = Vec::new();
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let j = self.head[p];
            let rate = -dir * a;
            let (v, l, u) = (self.x[j], self.lo[j], self.up[j]);
            let (target, dist) = if rate < 0.0 {
                if v < l - self.ptol {
                    continue;
                } else if v > u + self.ptol {
                    (u, v - u)
                } else if l.is_finite() {
                    (l, (v - l).max(0.0))
                } else {
                    continue;
                }
            } else if v > u + self.ptol {
                continue;
            } else if v < l - self.ptol {
                (l, l - v)
            } else if u.is_finite() {
                (u, (u - v).max(0.0))
            } else {
                continue;
            };
            cands.push((p, dist, rate.abs(), target));
        }
        if cands.is_empty() {
            return None;
        }
        if bland {
            let tmin = cands
                .iter()
                .map(|c| c.1 / c.2)
                .fold(f64::INFINITY, f64::min);
            let (p, dist, r, target) = cands
                .iter()
                .filter(|c| c.1 / c.2 <= tmin + 1e-12)
                .min_by_key(|c| self.head[c.0])
                .copied()
                .unwrap();
            return Some((p, dist / r, target));
        }
        // Half the phase tolerance, so a Harris step never leaves a basic variable far
        // enough out of bounds to send the next iteration back to phase 1.
        let harris = 0.5 * self.ptol;
        let tmax = cands
            .iter()
            .map(|c| (c.1 + harris) / c.2)
            .fold(f64::INFINITY, f64::min);
        let (p, dist, r, target) = cands
            .iter()
            .filter(|c| c.1 / c.2 <= tmax)
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)))
            .copied()
            .unwrap();
        Some((p, dist / r, target))
    }

    fn pivot(&mut self, p: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[p];
        for k in 0..m {
            self.binv[p * m + k] /= piv;
        }
        for (i, &f) in alpha.iter().enumerate() {
            if i == p || f == 0.0 {
                continue;
            }
            for k in 0..m {
                self.binv[i * m + k] -= f * self.binv[p * m + k];
            }
        }
    }

    fn run(mut self) -> Result<LpResult, SolverError> {
        let n = self.d.n;
        let max_iterations = 20_000 + 100 * (n + self.m);
        self.refactor()?;
        let mut since_refactor = 0;
        let mut confirmed = false;
        let mut degenerate = 0;
        loop {
            if self.iterations >= max_iterations {
                return Ok(self.finish(SolveStatus::IterationLimit));
            }
            let costs = self.infeasibility_costs();
            let bland = degenerate > DEGENERATE_STEPS_BEFORE_BLAND;
            let Some(Entering { j, dir }) = self.price(costs.as_deref(), bland) else {
                if !confirmed {
                    self.refactor()?;
                    since_refactor = 0;
                    confirmed = true;
                    continue;
                }
                if costs.is_some() {
                    if self.max_infeasibility() <= self.tol.feasibility
                        && self.ptol < self.tol.feasibility
                    {
                        self.ptol = self.tol.feasibility;
                        continue;
                    }
                    return Ok(self.finish(SolveStatus::Infeasible));
                }
                return self.optimal();
            };
            confirmed = false;
            let alpha = self.ftran(j);
            let flip = self.up[j] - self.lo[j];
            let ratio = self.ratio_test(&alpha, dir, bland);
            let step = match ratio {
                Some((_, t, _)) if t < flip => t,
                _ if flip.is_finite() => flip,
                _ => {
                    if costs.is_some() {
                        return Err(SolverError::Numerical("unbounded phase-1 ray".into()));
                    }
                    return Ok(self.finish(SolveStatus::Unbounded));
                }
            };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.x[j] += dir * step;
            for (p, &a) in alpha.iter().enumerate() {
                self.x[self.head[p]] -= dir * a * step;
            }
            match ratio {
                Some((p, t, target)) if t < flip => {
                    let leaving = self.head[p];
                    self.x[leaving] = target;
                    self.state[leaving] = if target == self.lo[leaving] {
                        VarState::Lower
                    } else {
                        VarState::Upper
                    };
                    self.head[p] = j;
                    self.state[j] = VarState::Basic;
                    self.pivot(p, &alpha);
                }
                _ => {
                    self.state[j] = if dir > 0.0 {
                        VarState::Upper
                    } else {
                        VarState::Lower
                    };
                    self.x[j] = self.nonbasic_value(j);
                }
            }
            self.iterations += 1;
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
        }
    }

    fn optimal(mut self) -> Result<LpResult, SolverError> {
        let n = self.d.n;
        for j in 0..n {
            self.x[j] = self.x[j].clamp(self.lo[j], self.up[j]);
        }
        let mut activity = vec![0.0; self.m];
        // Largest term of each row; residuals are judged relative to it.
        let mut scale = vec![1.0f64; self.m];
        for j in 0..n {
            for &(r, c) in &self.d.cols[j] {
                activity[r] += c * self.x[j];
                scale[r] = scale[r].max((c * self.x[j]).abs());
            }
        }
        let worst = activity
            .iter()
            .enumerate()
            .map(|(r, &a)| (self.lo[n + r] - a).max(a - self.up[n + r]).max(0.0) / scale[r])
            .fold(0.0, f64::max);
        if worst > self.tol.feasibility {
            return Err(SolverError::Numerical(format!(
                "row residual {worst:e} after optimality"
            )));
        }
        Ok(self.finish(SolveStatus::Optimal))
    }

    fn finish(self, status: SolveStatus) -> LpResult {
        let n = self.d.n;
        let x = self.x[..n].to_vec();
        let objective =
            self.d.constant + x.iter().zip(&self.d.cost).map(|(v, c)| v * c).sum::<f64>();
        let basis = Basis {
            n,
            m: self.m,
            head: self.head,
            state: self.state,
        };
        LpResult {
            status,
            x,
            objective,
            iterations: self.iterations,
            basis: Some(basis),
        }
    }
}
