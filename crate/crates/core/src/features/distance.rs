use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EncodedPoint, FeatureError, FeatureKind, FeatureSchema};
use crate::scalar::Scalar;

/// A feature counts as changed under L0 when its normalized distance exceeds this.
pub const L0_CHANGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L0,
    L1,
    L2,
    Linf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L0 => "l0",
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(Norm::L0),
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" | "l-inf" | "inf" => Ok(Norm::Linf),
            other => Err(format!(
                "unknown norm `{other}` (expected l0, l1, l2 or linf)"
            )),
        }
    }
}

/// Normalized distance of each feature, each in `[0, 1]` for in-domain points.
///
/// Scalar kinds use `|x - x'| / (ub - lb)`, ordinal blocks the level difference over
/// `k`, and categorical blocks `max_j |x_j - x'_j|` (1 when the category differs).
pub fn per_feature_distances<T: Scalar>(
    schema: &FeatureSchema,
    x: &EncodedPoint<T>,
    xf: &EncodedPoint<T>,
) -> Result<Vec<T>, FeatureError> {
    for p in [x, xf] {
        if p.len() != schema.encoded_dim() {
            return Err(FeatureError::SchemaMismatch {
                expected: schema.encoded_dim(),
                got: p.len(),
            });
        }
    }
    Ok(schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let r = schema.block(i);
            let (a, b) = (&x.values[r.clone()], &xf.values[r]);
            match f.kind {
                FeatureKind::Ordinal { k } => {
                    let sa: T = a.iter().copied().sum();
                    let sb: T = b.iter().copied().sum();
                    (sa - sb).abs() / T::from_usize(k).expect("small k")
                }
                FeatureKind::Categorical { .. } => a
                    .iter()
                    .zip(b)
                    .map(|(&p, &q)| (p - q).abs())
                    .fold(T::zero(), T::max),
                kind => {
                    let (lb, ub) = kind.scalar_range().expect("scalar kind");
                    (a[0] - b[0]).abs() / T::from_f64_lossy(ub - lb)
                }
            }
        })
        .collect())
}

/// Aggregate normalized distance: L1 mean, L0 fraction changed, Linf max, L2 root mean square.
pub fn distance<T: Scalar>(
    schema: &FeatureSchema,
    x: &EncodedPoint<T>,
    xf: &EncodedPoint<T>,
    norm: Norm,
) -> Result<T, FeatureError> {
    let d = per_feature_distances(schema, x, xf)?;
    let n = T::from_usize(d.len()).expect("feature count");
    Ok(match norm {
        Norm::L1 => d.iter().copied().sum::<T>() / n,
        Norm::L0 => {
            let tol = T::from_f64_lossy(L0_CHANGE_TOLERANCE);
            T::from_usize(d.iter().filter(|&&v| v > tol).count()).expect("count") / n
        }
        Norm::Linf => d.iter().copied().fold(T::zero(), T::max),
        Norm::L2 => (d.iter().map(|&v| v * v).sum::<T>() / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{encode, FeatureDescriptor, RawRecord};
    use super::*;
    use proptest::prelude::*;

    fn pt(v: &[f64]) -> EncodedPoint<f64> {
        EncodedPoint::new(v.to_vec())
    }

    #[test]
    fn single_feature_examples() {
        let real = FeatureSchema::new(vec![FeatureDescriptor::real("r", 0.0, 10.0)]).unwrap();
        assert!((distance(&real, &pt(&[5.0]), &pt(&[3.0]), Norm::L1).unwrap() - 0.2).abs() < 1e-15);

        let ord = FeatureSchema::new(vec![FeatureDescriptor::ordinal("o", 4)]).unwrap();
        let l2 = encode::<f64>(&ord, &RawRecord::new(vec![2.0])).unwrap();
        let l4 = encode::<f64>(&ord, &RawRecord::new(vec![4.0])).unwrap();
        assert_eq!(distance(&ord, &l2, &l4, Norm::L1).unwrap(), 0.5);

        let cat = FeatureSchema::new(vec![FeatureDescriptor::categorical("c", 3)]).unwrap();
        let c1 = pt(&[1.0, 0.0, 0.0]);
        let c2 = pt(&[0.0, 1.0, 0.0]);
        assert_eq!(distance(&cat, &c1, &c2, Norm::L1).unwrap(), 1.0);
        assert_eq!(distance(&cat, &c1, &c1, Norm::L1).unwrap(), 0.0);
    }

    #[test]
    fn mixed_schema_averages_per_feature() {
        let schema = FeatureSchema::new(vec![
            FeatureDescriptor::real("r", 0.0, 10.0),
            FeatureDescriptor::categorical("c", 3),
        ])
        .unwrap();
        let x = pt(&[5.0, 0.0, 1.0, 0.0]);
        let xf = pt(&[3.0, 0.0, 1.0, 0.0]);
        assert!((distance(&schema, &x, &xf, Norm::L1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(distance(&schema, &x, &xf, Norm::L0).unwrap(), 0.5);
        assert!((distance(&schema, &x, &xf, Norm::Linf).unwrap() - 0.2).abs() < 1e-15);
        let l2 = distance(&schema, &x, &xf, Norm::L2).unwrap();
        assert!((l2 - (0.04f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn schema_mismatch() {
        let real = FeatureSchema::new(vec![FeatureDescriptor::real("r", 0.0, 1.0)]).unwrap();
        assert!(distance(&real, &pt(&[0.0, 1.0]), &pt(&[0.0]), Norm::L1).is_err());
    }

    /// The printed categorical term `max_j (x_j - x'_j)` is asymmetric in general but
    /// matches the symmetric changed-indicator on valid one-hot pairs.
    #[test]
    fn categorical_indicator_matches_printed_form_on_one_hot_pairs() {
        for k in 2..=5 {
            let schema = FeatureSchema::new(vec![FeatureDescriptor::categorical("c", k)]).unwrap();
            for a in 1..=k {
                for b in 1..=k {
                    let x = encode::<f64>(&schema, &RawRecord::new(vec![a as f64])).unwrap();
                    let xf = encode::<f64>(&schema, &RawRecord::new(vec![b as f64])).unwrap();
                    let printed = x
                        .values
                        .iter()
                        .zip(&xf.values)
                        .map(|(p, q)| p - q)
                        .fold(f64::MIN, f64::max);
                    let ours = distance(&schema, &x, &xf, Norm::L1).unwrap();
                    assert_eq!(printed, ours);
                    assert_eq!(ours, if a == b { 0.0 } else { 1.0 });
                }
            }
        }
    }

    fn arb_pair() -> impl Strategy<Value = (FeatureSchema, EncodedPoint<f64>, EncodedPoint<f64>)> {
        (
            super::super::test_support::arb_schema(),
            prop::collection::vec(0.0f64..=1.0, 6),
            prop::collection::vec(0.0f64..=1.0, 6),
        )
            .prop_map(|(s, u, v)| {
                let x = encode(&s, &super::super::test_support::record_from_unit(&s, &u)).unwrap();
                let y = encode(&s, &super::super::test_support::record_from_unit(&s, &v)).unwrap();
                (s, x, y)
            })
    }

    proptest! {
        #[test]
        fn norms_are_symmetric_bounded_and_zero_on_diagonal((s, x, y) in arb_pair()) {
            let per = per_feature_distances(&s, &x, &y).unwrap();
            for norm in [Norm::L0, Norm::L1, Norm::L2, Norm::Linf] {
                let d = distance(&s, &x, &y, norm).unwrap();
                prop_assert_eq!(d, distance(&s, &y, &x, norm).unwrap());
                prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
                prop_assert_eq!(distance(&s, &x, &x, norm).unwrap(), 0.0);
            }
            let linf = distance(&s, &x, &y, Norm::Linf).unwrap();
            let l1 = distance(&s, &x, &y, Norm::L1).unwrap();
            prop_assert!(per.iter().all(|&p| p <= linf));
            prop_assert!(s.len() as f64 * l1 >= linf - 1e-12);
        }
    }
}
