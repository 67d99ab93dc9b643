use std::fmt;

use serde::{Deserialize, Serialize};

use super::{per_feature_distances, Actionability, EncodedPoint, FeatureKind, FeatureSchema};
use crate::scalar::Scalar;

/// Absolute slack for bound, integrality and binary checks.
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub feature: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.feature, self.detail)
    }
}

fn is_bit(v: f64) -> bool {
    v.abs() <= TOL || (v - 1.0).abs() <= TOL
}

/// Membership in the heterogeneous space; at most one violation per feature.
pub fn validate_plausibility<T: Scalar>(
    schema: &FeatureSchema,
    point: &EncodedPoint<T>,
) -> Vec<Violation> {
    if point.len() != schema.encoded_dim() {
        return vec![Violation {
            feature: "<point>".into(),
            detail: format!("dimension {} != {}", point.len(), schema.encoded_dim()),
        }];
    }
    let mut out = Vec::new();
    for (i, f) in schema.features().iter().enumerate() {
        let block: Vec<f64> = point.values[schema.block(i)]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let problem = match f.kind {
            FeatureKind::Real { lb, ub } => {
                let v = block[0];
                let slack = TOL * (1.0 + lb.abs().max(ub.abs()));
                (!(v >= lb - slack && v <= ub + slack)).then(|| format!("{v} outside [{lb}, {ub}]"))
            }
            FeatureKind::Integer { lb, ub } => {
                let v = block[0];
                if !(v >= lb as f64 - TOL && v <= ub as f64 + TOL) {
                    Some(format!("{v} outside [{lb}, {ub}]"))
                } else if (v - v.round()).abs() > TOL {
                    Some(format!("{v} is not integral"))
                } else {
                    None
                }
            }
            FeatureKind::Binary => (!is_bit(block[0])).then(|| format!("{} is not 0/1", block[0])),
            FeatureKind::Ordinal { .. } => {
                if !block.iter().all(|&v| is_bit(v)) {
                    Some("thermometer entries must be 0/1".into())
                } else if block[0] < 0.5 {
                    Some("level below 1".into())
                } else if block.windows(2).any(|w| w[1] > w[0] + TOL) {
                    Some(format!("thermometer not non-increasing: {block:?}"))
                } else {
                    None
                }
            }
            FeatureKind::Categorical { .. } => {
                if !block.iter().all(|&v| is_bit(v)) {
                    Some("one-hot entries must be 0/1".into())
                } else if (block.iter().sum::<f64>() - 1.0).abs() > TOL {
                    Some(format!("one-hot block does not sum to 1: {block:?}"))
                } else {
                    None
                }
            }
        };
        if let Some(detail) = problem {
            out.push(Violation {
                feature: f.name.clone(),
                detail,
            });
        }
    }
    out
}

/// Checks each feature's allowed change from `xf` to `x`.
pub fn validate_actionability<T: Scalar>(
    schema: &FeatureSchema,
    x: &EncodedPoint<T>,
    xf: &EncodedPoint<T>,
) -> Vec<Violation> {
    let per = match per_feature_distances(schema, x, xf) {
        Ok(p) => p,
        Err(e) => {
            return vec![Violation {
                feature: "<point>".into(),
                detail: e.to_string(),
            }]
        }
    };
    let mut out = Vec::new();
    for (i, f) in schema.features().iter().enumerate() {
        let r = schema.block(i);
        // Signed change in level units for ordinals, raw units otherwise.
        let delta = |r: std::ops::Range<usize>| -> f64 {
            let s = |p: &EncodedPoint<T>| {
                p.values[r.clone()]
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .sum::<f64>()
            };
            s(x) - s(xf)
        };
        let scale = match f.kind {
            FeatureKind::Real { lb, ub } => TOL * (ub - lb).max(1.0),
            _ => TOL,
        };
        let detail = match f.actionability {
            Actionability::Free => None,
            Actionability::Fixed => {
                (per[i].to_f64_lossy() > TOL).then(|| "fixed feature changed".to_string())
            }
            Actionability::IncreaseOnly => {
                let d = delta(r);
                (d < -scale).then(|| format!("increase-only feature decreased by {}", -d))
            }
            Actionability::DecreaseOnly => {
                let d = delta(r);
                (d > scale).then(|| format!("decrease-only feature increased by {d}"))
            }
        };
        if let Some(detail) = detail {
            out.push(Violation {
                feature: f.name.clone(),
                detail,
            });
        }
    }
    out
}
