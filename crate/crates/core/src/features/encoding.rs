use serde::{Deserialize, Serialize};

use super::{validate_plausibility, FeatureError, FeatureKind, FeatureSchema};
use crate::scalar::Scalar;

/// One record in raw units, one value per feature in schema order.
///
/// Real and integer features carry their value, binary features 0 or 1, ordinal
/// features the 1-based level and categorical features the 1-based category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub values: Vec<f64>,
}

impl RawRecord {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Orders `(name, value)` pairs by the schema; every feature must be present once.
    pub fn from_named<'a>(
        schema: &FeatureSchema,
        pairs: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, FeatureError> {
        let mut values = vec![None; schema.len()];
        for (name, v) in pairs {
            let i = schema
                .index_of(name)
                .ok_or_else(|| FeatureError::UnknownFeature(name.to_string()))?;
            values[i] = Some(v);
        }
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| FeatureError::MissingFeature(schema.features()[i].name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }
}

/// A point in the encoded input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedPoint<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> EncodedPoint<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn cast<U: Scalar>(&self) -> EncodedPoint<U> {
        EncodedPoint::new(
            self.values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        )
    }
}

fn out_of_domain(schema: &FeatureSchema, i: usize, v: f64) -> FeatureError {
    FeatureError::OutOfDomain {
        feature: schema.features()[i].name.clone(),
        value: v.to_string(),
    }
}

fn level_in(v: f64, k: usize) -> Option<usize> {
    (v.fract() == 0.0 && v >= 1.0 && v <= k as f64).then_some(v as usize)
}

pub fn encode<T: Scalar>(
    schema: &FeatureSchema,
    raw: &RawRecord,
) -> Result<EncodedPoint<T>, FeatureError> {
    if raw.values.len() != schema.len() {
        return Err(FeatureError::RecordLength {
            expected: schema.len(),
            got: raw.values.len(),
        });
    }
    let mut out = Vec::with_capacity(schema.encoded_dim());
    for (i, (f, &v)) in schema.features().iter().zip(&raw.values).enumerate() {
        match f.kind {
            FeatureKind::Real { lb, ub } => {
                if !(v >= lb && v <= ub) {
                    return Err(out_of_domain(schema, i, v));
                }
                out.push(T::from_f64_lossy(v));
            }
            FeatureKind::Integer { lb, ub } => {
                if v.fract() != 0.0 || v < lb as f64 || v > ub as f64 {
                    return Err(out_of_domain(schema, i, v));
                }
                out.push(T::from_f64_lossy(v));
            }
            FeatureKind::Binary => {
                if v != 0.0 && v != 1.0 {
                    return Err(out_of_domain(schema, i, v));
                }
                out.push(T::from_f64_lossy(v));
            }
            FeatureKind::Ordinal { k } => {
                let level = level_in(v, k).ok_or_else(|| out_of_domain(schema, i, v))?;
                out.extend((1..=k).map(|j| if j <= level { T::one() } else { T::zero() }));
            }
            FeatureKind::Categorical { k } => {
                let cat = level_in(v, k).ok_or_else(|| out_of_domain(schema, i, v))?;
                out.extend((1..=k).map(|j| if j == cat { T::one() } else { T::zero() }));
            }
        }
    }
    Ok(EncodedPoint::new(out))
}

pub fn decode<T: Scalar>(
    schema: &FeatureSchema,
    point: &EncodedPoint<T>,
) -> Result<RawRecord, FeatureError> {
    if point.len() != schema.encoded_dim() {
        return Err(FeatureError::SchemaMismatch {
            expected: schema.encoded_dim(),
            got: point.len(),
        });
    }
    if let Some(v) = validate_plausibility(schema, point).into_iter().next() {
        return Err(FeatureError::Implausible(v.to_string()));
    }
    let values = schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let block = &point.values[schema.block(i)];
            match f.kind {
                FeatureKind::Real { .. } => block[0].to_f64_lossy(),
                FeatureKind::Integer { .. } | FeatureKind::Binary => {
                    block[0].to_f64_lossy().round()
                }
                FeatureKind::Ordinal { .. } => {
                    block.iter().filter(|v| v.to_f64_lossy() > 0.5).count() as f64
                }
                FeatureKind::Categorical { .. } => {
                    (block
                        .iter()
                        .position(|v| v.to_f64_lossy() > 0.5)
                        .expect("plausible one-hot")
                        + 1) as f64
                }
            }
        })
        .collect();
    Ok(RawRecord::new(values))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{arb_schema, record_from_unit};
    use super::super::FeatureDescriptor;
    use super::*;
    use proptest::prelude::*;

    fn single(f: FeatureDescriptor) -> FeatureSchema {
        FeatureSchema::new(vec![f]).unwrap()
    }

    #[test]
    fn thermometer_and_one_hot() {
        let ord = single(FeatureDescriptor::ordinal("o", 4));
        let p: EncodedPoint<f64> = encode(&ord, &RawRecord::new(vec![2.0])).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0, 0.0, 0.0]);
        let cat = single(FeatureDescriptor::categorical("c", 3));
        let p: EncodedPoint<f64> = encode(&cat, &RawRecord::new(vec![3.0])).unwrap();
        assert_eq!(p.values, vec![0.0, 0.0, 1.0]);
        let real = single(FeatureDescriptor::real("r", 0.0, 10.0));
        let p: EncodedPoint<f64> = encode(&real, &RawRecord::new(vec![10.0])).unwrap();
        assert_eq!(p.values, vec![10.0]);
    }

    #[test]
    fn decode_inverts_and_rejects_broken_blocks() {
        let ord = single(FeatureDescriptor::ordinal("o", 4));
        assert_eq!(
            decode(&ord, &EncodedPoint::new(vec![1.0, 1.0, 0.0, 0.0]))
                .unwrap()
                .values,
            vec![2.0]
        );
        assert!(matches!(
            decode(&ord, &EncodedPoint::new(vec![0.0, 1.0, 1.0, 0.0])),
            Err(FeatureError::Implausible(_))
        ));
        let cat = single(FeatureDescriptor::categorical("c", 3));
        assert_eq!(
            decode(&cat, &EncodedPoint::new(vec![0.0, 0.0, 1.0]))
                .unwrap()
                .values,
            vec![3.0]
        );
    }

    #[test]
    fn out_of_domain_and_unknown_names() {
        let real = single(FeatureDescriptor::real("r", 0.0, 10.0));
        assert!(matches!(
            encode::<f64>(&real, &RawRecord::new(vec![10.5])),
            Err(FeatureError::OutOfDomain { .. })
        ));
        let ord = single(FeatureDescriptor::ordinal("o", 4));
        assert!(encode::<f64>(&ord, &RawRecord::new(vec![0.0])).is_err());
        assert!(encode::<f64>(&ord, &RawRecord::new(vec![5.0])).is_err());
        assert_eq!(
            RawRecord::from_named(&real, [("q", 1.0)]).unwrap_err(),
            FeatureError::UnknownFeature("q".into())
        );
        assert_eq!(
            RawRecord::from_named(&real, [("r", 1.0)]).unwrap().values,
            vec![1.0]
        );
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(schema in arb_schema(), u in prop::collection::vec(0.0f64..=1.0, 6)) {
            let raw = record_from_unit(&schema, &u);
            let p: EncodedPoint<f64> = encode(&schema, &raw).unwrap();
            prop_assert!(validate_plausibility(&schema, &p).is_empty());
            prop_assert_eq!(decode(&schema, &p).unwrap(), raw);
        }
    }
}
