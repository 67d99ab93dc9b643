//! Distance rows: the distance variable to the factual point and diversity rows
//! against earlier counterfactuals.
//!
//! Block features (binary, ordinal, categorical) have exact linear per-feature distances
//! on plausible points. Real and integer features use `t >= |x - p| / r`; when a row
//! needs the distance from below as well, a side-selector binary closes the gap with
//! big-M 2 (normalized differences lie in `[-1, 1]`).

use super::{EncodeError, EncodingArtifacts};
use crate::features::{
    EncodedPoint, FeatureError, FeatureKind, FeatureSchema, Norm, L0_CHANGE_TOLERANCE,
};
use crate::milp::{Sense, VarId};

/// How the distance variable enters the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMode {
    /// `lb <= dist <= ub`.
    Interval { lb: f64, ub: f64 },
    /// Minimize `dist`.
    Objective,
}

const BIG_M: f64 = 2.0;

/// `terms + constant`.
#[derive(Debug, Clone, Default)]
struct LinExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinExpr {
    fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    fn add(&mut self, v: VarId, c: f64) {
        self.terms.push((v, c));
    }

    fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }
}

impl EncodingArtifacts {
    /// Per-feature normalized distance of the model's point to `q`. With `exact` the
    /// expression equals the distance on every feasible assignment; otherwise it bounds
    /// it from above and is tight when minimized.
    fn feature_distance(
        &mut self,
        schema: &FeatureSchema,
        q: &EncodedPoint<f64>,
        i: usize,
        l0: bool,
        exact: bool,
        tag: &str,
    ) -> LinExpr {
        let f = &schema.features()[i];
        let block = schema.block(i);
        let cols: Vec<VarId> = block.clone().map(|c| self.input_vars[c]).collect();
        let qv = &q.values[block];
        let name = &f.name;
        match f.kind {
            FeatureKind::Binary => {
                if qv[0] > 0.5 {
                    let mut e = LinExpr::constant(1.0);
                    e.add(cols[0], -1.0);
                    e
                } else {
                    LinExpr::var(cols[0])
                }
            }
            FeatureKind::Categorical { .. } => {
                let c = qv.iter().position(|&v| v > 0.5).expect("plausible one-hot");
                let mut e = LinExpr::constant(1.0);
                e.add(cols[c], -1.0);
                e
            }
            FeatureKind::Ordinal { k } => {
                let level = qv.iter().filter(|&&v| v > 0.5).count();
                let mut e = LinExpr::default();
                if l0 {
                    // Changed iff the level-th column drops or the next one rises.
                    e.constant += 1.0;
                    e.add(cols[level - 1], -1.0);
                    if level < k {
                        e.add(cols[level], 1.0);
                    }
                    e
                } else {
                    for (j, &v) in cols.iter().enumerate() {
                        if j < level {
                            e.constant += 1.0;
                            e.add(v, -1.0);
                        } else {
                            e.add(v, 1.0);
                        }
                    }
                    e.scaled(1.0 / k as f64)
                }
            }
            FeatureKind::Real { .. } | FeatureKind::Integer { .. } => {
                let (lb, ub) = f.kind.scalar_range().expect("scalar kind");
                let r = ub - lb;
                let p = qv[0];
                let x = cols[0];
                let s = 1.0 / r;
                if l0 {
                    let c = self.milp.add_binary(format!("{tag}/changed/{name}"));
                    self.milp.constrain(
                        format!("{tag}/change_up/{name}"),
                        vec![(x, s), (c, -1.0)],
                        Sense::Le,
                        p * s,
                    );
                    self.milp.constrain(
                        format!("{tag}/change_down/{name}"),
                        vec![(x, -s), (c, -1.0)],
                        Sense::Le,
                        -p * s,
                    );
                    if exact {
                        // Integer features move by whole units.
                        let tau = match f.kind {
                            FeatureKind::Integer { .. } => s,
                            _ => 2.0 * L0_CHANGE_TOLERANCE,
                        };
                        let sel = self.milp.add_binary(format!("{tag}/side/{name}"));
                        self.milp.constrain(
                            format!("{tag}/change_min_up/{name}"),
                            vec![(x, s), (c, -tau), (sel, -BIG_M)],
                            Sense::Ge,
                            p * s - BIG_M,
                        );
                        self.milp.constrain(
                            format!("{tag}/change_min_down/{name}"),
                            vec![(x, -s), (c, -tau), (sel, BIG_M)],
                            Sense::Ge,
                            -p * s,
                        );
                    }
                    LinExpr::var(c)
                } else {
                    let maxdev = ((ub - p).max(p - lb) * s).min(1.0);
                    let t = self
                        .milp
                        .add_continuous(format!("{tag}/abs/{name}"), 0.0, maxdev);
                    self.milp.constrain(
                        format!("{tag}/abs_up/{name}"),
                        vec![(t, 1.0), (x, -s)],
                        Sense::Ge,
                        -p * s,
                    );
                    self.milp.constrain(
                        format!("{tag}/abs_down/{name}"),
                        vec![(t, 1.0), (x, s)],
                        Sense::Ge,
                        p * s,
                    );
                    if exact {
                        let sel = self.milp.add_binary(format!("{tag}/side/{name}"));
                        self.milp.constrain(
                            format!("{tag}/abs_cap_up/{name}"),
                            vec![(t, 1.0), (x, -s), (sel, BIG_M)],
                            Sense::Le,
                            -p * s + BIG_M,
                        );
                        self.milp.constrain(
                            format!("{tag}/abs_cap_down/{name}"),
                            vec![(t, 1.0), (x, s), (sel, -BIG_M)],
                            Sense::Le,
                            p * s,
                        );
                    }
                    LinExpr::var(t)
                }
            }
        }
    }

    fn check_point(schema: &FeatureSchema, q: &EncodedPoint<f64>) -> Result<(), EncodeError> {
        if q.len() != schema.encoded_dim() {
            return Err(FeatureError::SchemaMismatch {
                expected: schema.encoded_dim(),
                got: q.len(),
            }
            .into());
        }
        if let Some(v) = crate::features::validate_plausibility(schema, q)
            .into_iter()
            .next()
        {
            return Err(FeatureError::Implausible(v.to_string()).into());
        }
        Ok(())
    }

    /// Adds the distance variable to `xf` under `norm`.
    pub fn add_distance(
        &mut self,
        schema: &FeatureSchema,
        xf: &EncodedPoint<f64>,
        norm: Norm,
        mode: DistanceMode,
    ) -> Result<VarId, EncodeError> {
        if norm == Norm::L2 {
            return Err(EncodeError::UnsupportedNorm(norm));
        }
        Self::check_point(schema, xf)?;
        let (lb, ub) = match mode {
            DistanceMode::Interval { lb, ub } => {
                if !(0.0 <= lb && lb <= ub && ub <= 1.0) {
                    return Err(EncodeError::InvalidInterval(lb, ub));
                }
                (lb, ub)
            }
            DistanceMode::Objective => (0.0, 1.0),
        };
        let exact = lb > 0.0;
        let l0 = norm == Norm::L0;
        let exprs: Vec<LinExpr> = (0..schema.len())
            .map(|i| self.feature_distance(schema, xf, i, l0, exact, "distance"))
            .collect();
        let d = self.milp.add_continuous("dist", lb, ub);
        let n = schema.len() as f64;
        match norm {
            Norm::L0 | Norm::L1 => {
                let mut terms = vec![(d, n)];
                let mut constant = 0.0;
                for e in &exprs {
                    terms.extend(e.terms.iter().map(|&(v, c)| (v, -c)));
                    constant += e.constant;
                }
                self.milp
                    .constrain("distance/aggregate", terms, Sense::Eq, constant);
            }
            Norm::Linf => {
                for (i, e) in exprs.iter().enumerate() {
                    let mut terms = vec![(d, 1.0)];
                    terms.extend(e.terms.iter().map(|&(v, c)| (v, -c)));
                    self.milp.constrain(
                        format!("distance/max/{}", schema.features()[i].name),
                        terms,
                        Sense::Ge,
                        e.constant,
                    );
                }
                if exact {
                    self.add_max_lower_bound(schema, &exprs, lb, "distance");
                }
            }
            Norm::L2 => unreachable!(),
        }
        if mode == DistanceMode::Objective {
            self.milp.set_objective(vec![(d, 1.0)], 0.0);
        }
        self.distance_var = Some(d);
        Ok(d)
    }

    /// `max_i e_i >= lb` through one selector per feature.
    fn add_max_lower_bound(
        &mut self,
        schema: &FeatureSchema,
        exprs: &[LinExpr],
        lb: f64,
        tag: &str,
    ) {
        let mut pick = Vec::with_capacity(exprs.len());
        for (i, e) in exprs.iter().enumerate() {
            let name = &schema.features()[i].name;
            let s = self.milp.add_binary(format!("{tag}/argmax/{name}"));
            let mut terms = e.terms.clone();
            terms.push((s, -lb));
            self.milp.constrain(
                format!("{tag}/max_lower/{name}"),
                terms,
                Sense::Ge,
                -e.constant,
            );
            pick.push((s, 1.0));
        }
        self.milp
            .constrain(format!("{tag}/argmax_any"), pick, Sense::Ge, 1.0);
    }

    /// Requires distance at least `threshold` from every point in `previous`.
    pub fn add_diversity(
        &mut self,
        schema: &FeatureSchema,
        previous: &[EncodedPoint<f64>],
        threshold: f64,
        norm: Norm,
    ) -> Result<(), EncodeError> {
        if norm == Norm::L2 {
            return Err(EncodeError::UnsupportedNorm(norm));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(EncodeError::InvalidThreshold(threshold));
        }
        let n = schema.len() as f64;
        for (p, q) in previous.iter().enumerate() {
            Self::check_point(schema, q)?;
            let tag = format!("diversity/{p}");
            let exprs: Vec<LinExpr> = (0..schema.len())
                .map(|i| self.feature_distance(schema, q, i, norm == Norm::L0, true, &tag))
                .collect();
            match norm {
                Norm::L0 | Norm::L1 => {
                    let mut terms = Vec::new();
                    let mut constant = 0.0;
                    for e in &exprs {
                        terms.extend(e.terms.iter().copied());
                        constant += e.constant;
                    }
                    self.milp.constrain(
                        format!("{tag}/separation"),
                        terms,
                        Sense::Ge,
                        n * threshold - constant,
                    );
                }
                Norm::Linf => self.add_max_lower_bound(schema, &exprs, threshold, &tag),
                Norm::L2 => unreachable!(),
            }
        }
        Ok(())
    }

    /// Objective for LP export under L2: the mean of squared per-feature distances
    /// (the square of the distance, same minimizer).
    pub fn set_l2_export_objective(
        &mut self,
        schema: &FeatureSchema,
        xf: &EncodedPoint<f64>,
    ) -> Result<(), EncodeError> {
        Self::check_point(schema, xf)?;
        let n = schema.len() as f64;
        let mut quad = Vec::new();
        for i in 0..schema.len() {
            let e = self.feature_distance(schema, xf, i, false, false, "distance");
            let name = &schema.features()[i].name;
            let q = self
                .milp
                .add_continuous(format!("distance/term/{name}"), 0.0, 1.0);
            let mut terms = vec![(q, 1.0)];
            terms.extend(e.terms.iter().map(|&(v, c)| (v, -c)));
            self.milp.constrain(
                format!("distance/term/{name}"),
                terms,
                Sense::Eq,
                e.constant,
            );
            quad.push((q, q, 1.0 / n));
        }
        self.milp.set_objective(Vec::new(), 0.0);
        self.milp.quadratic_objective = quad;
        Ok(())
    }
}
