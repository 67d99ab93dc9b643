//! Proptest strategies shared by the feature-space tests.

use proptest::prelude::*;

use super::{FeatureDescriptor, FeatureKind, FeatureSchema, RawRecord};

pub fn arb_descriptor(i: usize) -> impl Strategy<Value = FeatureDescriptor> {
    let name = format!("f{i}");
    prop_oneof![
        (-100.0f64..100.0, 0.1f64..50.0).prop_map({
            let n = name.clone();
            move |(lb, w)| FeatureDescriptor::real(n.clone(), lb, lb + w)
        }),
        (-20i64..20, 1i64..10).prop_map({
            let n = name.clone();
            move |(lb, w)| FeatureDescriptor::integer(n.clone(), lb, lb + w)
        }),
        Just(FeatureDescriptor::binary(name.clone())),
        (2usize..6).prop_map({
            let n = name.clone();
            move |k| FeatureDescriptor::ordinal(n.clone(), k)
        }),
        (2usize..6).prop_map(move |k| FeatureDescriptor::categorical(name.clone(), k)),
    ]
}

pub fn arb_schema() -> impl Strategy<Value = FeatureSchema> {
    (1usize..6)
        .prop_flat_map(|n| (0..n).map(arb_descriptor).collect::<Vec<_>>())
        .prop_map(|fs| FeatureSchema::new(fs).unwrap())
}

/// Uniform draw of a valid raw record, `u` supplies one unit-interval number per feature.
pub fn record_from_unit(schema: &FeatureSchema, u: &[f64]) -> RawRecord {
    let values = schema
        .features()
        .iter()
        .zip(u.iter().cycle())
        .map(|(f, &t)| match f.kind {
            FeatureKind::Real { lb, ub } => lb + t * (ub - lb),
            FeatureKind::Integer { lb, ub } => (lb as f64 + (t * (ub - lb) as f64)).round(),
            FeatureKind::Binary => t.round(),
            FeatureKind::Ordinal { k } | FeatureKind::Categorical { k } => {
                1.0 + (t * (k - 1) as f64).round()
            }
        })
        .collect();
    RawRecord::new(values)
}
