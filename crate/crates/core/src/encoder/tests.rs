use proptest::prelude::*;

use super::*;
use crate::bounds::{interval_bounds, lp_tightened_bounds_with, relu_states};
use crate::features::test_support::{arb_schema, record_from_unit};
use crate::features::{distance, encode, validate_plausibility, FeatureDescriptor, RawRecord};
use crate::milp::{solve_milp, MilpOptions, SolveStatus};
use crate::network::fixtures::three_input;
use crate::network::Layer;

fn reals(n: usize) -> FeatureSchema {
    FeatureSchema::new(
        (0..n)
            .map(|i| FeatureDescriptor::real(format!("x{i}"), 0.0, 1.0))
            .collect(),
    )
    .unwrap()
}

fn bounded(net: &FeedForwardNetwork<f64>, schema: &FeatureSchema) -> EncodingArtifacts {
    let b = InputBox::from_schema(schema);
    let mut enc = EncodingArtifacts::new(schema, &b).unwrap();
    enc.add_plausibility(schema);
    let t = interval_bounds(net, &b).unwrap();
    enc.add_network_bounded(net, &t, &relu_states(&t)).unwrap();
    enc
}

fn optimum(model: &MilpModel) -> Option<f64> {
    let out = solve_milp(model, &MilpOptions::exact()).unwrap();
    (out.status == SolveStatus::Optimal).then_some(out.objective_value)
}

#[test]
fn three_input_unit_box_has_two_binaries() {
    let enc = bounded(&three_input(), &reals(3));
    assert_eq!(enc.binary_count(), 2);
    assert_eq!(enc.deltas.len(), 2);
}

#[test]
fn always_active_network_needs_no_binaries() {
    let net = FeedForwardNetwork::relu(
        2,
        vec![(vec![vec![1.0, 2.0], vec![0.5, 0.5]], vec![0.1, 0.0])],
        vec![1.0, -1.0],
        0.0,
    )
    .unwrap();
    let enc = bounded(&net, &reals(2));
    assert_eq!(enc.binary_count(), 0);
}

#[test]
fn point_box_optimum_is_the_forward_output() {
    let net = three_input();
    let schema = reals(3);
    let x = [0.3, 0.8, 0.1];
    let b = InputBox::point(&x).unwrap();
    let mut enc = EncodingArtifacts::new(&schema, &b).unwrap();
    let t = interval_bounds(&net, &b).unwrap();
    let out = enc.add_network_bounded(&net, &t, &relu_states(&t)).unwrap();
    enc.milp.set_objective(vec![(out, 1.0)], 0.0);
    let v = optimum(&enc.milp).unwrap();
    assert!((v - net.output(&x).unwrap()).abs() < 1e-9);
}

#[test]
fn plausibility_rows() {
    let schema = FeatureSchema::new(vec![
        FeatureDescriptor::ordinal("o", 3),
        FeatureDescriptor::categorical("c", 4),
        FeatureDescriptor::binary("b"),
    ])
    .unwrap();
    let mut enc = EncodingArtifacts::new(&schema, &InputBox::from_schema(&schema)).unwrap();
    enc.add_plausibility(&schema);
    let rows: Vec<_> = enc.rows(Fragment::Plausibility).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].sense, Sense::Ge);
    assert_eq!(rows[2].terms.len(), 4);
    assert_eq!((rows[2].sense, rows[2].rhs), (Sense::Eq, 1.0));
    assert_eq!(enc.binary_count(), 3 + 4 + 1);
}

#[test]
fn actionability_rows() {
    let schema = FeatureSchema::new(vec![
        FeatureDescriptor::real("r", 0.0, 10.0).with_actionability(Actionability::Fixed),
        FeatureDescriptor::ordinal("o", 4).with_actionability(Actionability::IncreaseOnly),
        FeatureDescriptor::binary("b"),
    ])
    .unwrap();
    let xf = encode::<f64>(&schema, &RawRecord::new(vec![3.0, 2.0, 1.0])).unwrap();
    let mut enc = EncodingArtifacts::new(&schema, &InputBox::from_schema(&schema)).unwrap();
    enc.add_actionability(&schema, &xf).unwrap();
    let rows: Vec<_> = enc.rows(Fragment::Actionability).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].sense, rows[0].rhs), (Sense::Eq, 3.0));
    assert_eq!(
        (rows[1].sense, rows[1].rhs, rows[1].terms.len()),
        (Sense::Ge, 2.0, 4)
    );

    let free = reals(2);
    let mut enc = EncodingArtifacts::new(&free, &InputBox::from_schema(&free)).unwrap();
    enc.add_actionability(&free, &EncodedPoint::new(vec![0.5, 0.5]))
        .unwrap();
    assert_eq!(enc.rows(Fragment::Actionability).count(), 0);
}

#[test]
fn counterfactual_rows_and_margin_rule() {
    let schema = reals(3);
    let mut enc = bounded(&three_input(), &schema);
    enc.add_counterfactual(&FlipRule::new(Label::Positive, 1e-6))
        .unwrap();
    enc.add_counterfactual(&FlipRule::new(Label::Negative, 1e-6))
        .unwrap();
    let rows: Vec<_> = enc.rows(Fragment::Counterfactual).collect();
    assert_eq!((rows[0].sense, rows[0].rhs), (Sense::Ge, 0.0));
    assert_eq!((rows[1].sense, rows[1].rhs), (Sense::Le, -1e-6));
    let zero_margin = FlipRule::new(Label::Negative, 0.0);
    assert!(!zero_margin.is_flipped(0.0));
    assert!(FlipRule::new(Label::Positive, 1e-6).is_flipped(0.0));
}

fn solve_distance(
    schema: &FeatureSchema,
    xf: &EncodedPoint<f64>,
    norm: Norm,
    mode: DistanceMode,
    fix: Option<&[f64]>,
) -> Option<f64> {
    let b = match fix {
        Some(x) => InputBox::point(x).unwrap(),
        None => InputBox::from_schema(schema),
    };
    let mut enc = EncodingArtifacts::new(schema, &b).unwrap();
    enc.add_plausibility(schema);
    let d = enc.add_distance(schema, xf, norm, mode).unwrap();
    enc.milp.set_objective(vec![(d, 1.0)], 0.0);
    optimum(&enc.milp)
}

#[test]
fn distance_examples() {
    let one = FeatureSchema::new(vec![FeatureDescriptor::real("r", 0.0, 10.0)]).unwrap();
    let xf = EncodedPoint::new(vec![4.0]);
    assert_eq!(
        solve_distance(
            &one,
            &xf,
            Norm::L1,
            DistanceMode::Interval { lb: 0.0, ub: 0.3 },
            None
        ),
        Some(0.0)
    );

    let two = FeatureSchema::new(vec![
        FeatureDescriptor::real("r", 0.0, 10.0),
        FeatureDescriptor::categorical("c", 3),
    ])
    .unwrap();
    let xf = EncodedPoint::new(vec![3.0, 0.0, 1.0, 0.0]);
    let v = solve_distance(
        &two,
        &xf,
        Norm::L1,
        DistanceMode::Objective,
        Some(&[5.0, 0.0, 1.0, 0.0]),
    )
    .unwrap();
    assert!((v - 0.1).abs() < 1e-9);

    let three = reals(3);
    let xf = EncodedPoint::new(vec![0.5, 0.5, 0.5]);
    let v = solve_distance(
        &three,
        &xf,
        Norm::L0,
        DistanceMode::Objective,
        Some(&[0.5, 0.9, 0.5]),
    )
    .unwrap();
    assert!((v - 1.0 / 3.0).abs() < 1e-9);

    // A positive lower bound forces a real change.
    let v = solve_distance(
        &one,
        &EncodedPoint::new(vec![4.0]),
        Norm::L1,
        DistanceMode::Interval { lb: 0.25, ub: 1.0 },
        None,
    );
    assert!((v.unwrap() - 0.25).abs() < 1e-9);
    let v = solve_distance(
        &three,
        &xf,
        Norm::L0,
        DistanceMode::Interval { lb: 0.5, ub: 1.0 },
        None,
    );
    assert!((v.unwrap() - 2.0 / 3.0).abs() < 1e-9);
    let v = solve_distance(
        &three,
        &xf,
        Norm::Linf,
        DistanceMode::Interval { lb: 0.3, ub: 1.0 },
        None,
    );
    assert!((v.unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(
        solve_distance(
            &one,
            &EncodedPoint::new(vec![4.0]),
            Norm::L1,
            DistanceMode::Interval { lb: 0.7, ub: 1.0 },
            None
        ),
        None
    );
}

#[test]
fn distance_errors() {
    let one = reals(1);
    let mut enc = EncodingArtifacts::new(&one, &InputBox::from_schema(&one)).unwrap();
    let xf = EncodedPoint::new(vec![0.5]);
    assert_eq!(
        enc.add_distance(&one, &xf, Norm::L2, DistanceMode::Objective),
        Err(EncodeError::UnsupportedNorm(Norm::L2))
    );
    assert!(matches!(
        enc.add_distance(
            &one,
            &xf,
            Norm::L1,
            DistanceMode::Interval { lb: 0.5, ub: 0.2 }
        ),
        Err(EncodeError::InvalidInterval(..))
    ));
    assert!(enc
        .add_diversity(&one, std::slice::from_ref(&xf), 0.0, Norm::L1)
        .is_err());
    enc.set_l2_export_objective(&one, &xf).unwrap();
    assert_eq!(enc.milp.quadratic_objective.len(), 1);
}

#[test]
fn diversity_rows() {
    let one = FeatureSchema::new(vec![FeatureDescriptor::binary("b")]).unwrap();
    let mut enc = EncodingArtifacts::new(&one, &InputBox::from_schema(&one)).unwrap();
    enc.add_diversity(&one, &[], 0.01, Norm::L1).unwrap();
    assert_eq!(enc.rows(Fragment::Diversity).count(), 0);
    let prev = EncodedPoint::new(vec![1.0]);
    enc.add_diversity(&one, std::slice::from_ref(&prev), 1.0, Norm::L1)
        .unwrap();
    enc.milp.set_objective(vec![(enc.input_vars[0], -1.0)], 0.0);
    let out = solve_milp(&enc.milp, &MilpOptions::exact()).unwrap();
    assert_eq!(out.assignment.unwrap()[enc.input_vars[0].0].round(), 0.0);
    enc.add_diversity(&one, &[EncodedPoint::new(vec![0.0])], 1.0, Norm::L1)
        .unwrap();
    assert_eq!(optimum(&enc.milp), None);

    // Real feature, Linf: separation of at least 0.3 from 0.5 on [0, 1].
    let r = reals(2);
    for norm in [Norm::L1, Norm::Linf, Norm::L0] {
        let mut enc = EncodingArtifacts::new(&r, &InputBox::from_schema(&r)).unwrap();
        let xf = EncodedPoint::new(vec![0.5, 0.5]);
        enc.add_distance(&r, &xf, norm, DistanceMode::Objective)
            .unwrap();
        enc.add_diversity(&r, std::slice::from_ref(&xf), 0.3, norm)
            .unwrap();
        let out = solve_milp(&enc.milp, &MilpOptions::exact()).unwrap();
        let p = enc.decode_point(out.assignment.as_ref().unwrap());
        let got = distance(&r, &p, &xf, norm).unwrap();
        assert!(got >= 0.3 - 1e-6, "{norm}: {got}");
        // L0 can only separate by changing a whole feature.
        let want = if norm == Norm::L0 { 0.5 } else { 0.3 };
        assert!(
            (out.objective_value - want).abs() < 1e-7,
            "{norm}: {}",
            out.objective_value
        );
    }
}

#[test]
fn small_big_m_is_flagged() {
    let net = three_input();
    let b = InputBox::uniform(3, 0.0, 1.0).unwrap();
    assert_eq!(big_m_violations(&net, &b, 10.0, 2_000, 1), 0);
    assert!(big_m_violations(&net, &b, 0.5, 2_000, 1) > 0);
}

#[test]
fn linear_network_encodings_match_modulo_binaries() {
    let net = crate::network::fixtures::cancelling(Activation::Identity);
    let schema = FeatureSchema::new(vec![
        FeatureDescriptor::real("a", -1.0, 2.0),
        FeatureDescriptor::real("b", -1.0, 2.0),
    ])
    .unwrap();
    let b = InputBox::from_schema(&schema);
    let mut e1 = EncodingArtifacts::new(&schema, &b).unwrap();
    let t = interval_bounds(&net, &b).unwrap();
    e1.add_network_bounded(&net, &t, &relu_states(&t)).unwrap();
    let mut e2 = EncodingArtifacts::new(&schema, &b).unwrap();
    e2.add_network_unbounded(&net, 10.0).unwrap();
    assert_eq!(e1.binary_count(), 0);
    assert_eq!(e2.binary_count(), 0);
    assert_eq!(e1.milp.num_constraints(), e2.milp.num_constraints());
}

fn net_for(dim: usize) -> impl Strategy<Value = FeedForwardNetwork<f64>> {
    prop::collection::vec(1usize..=3, 1..=2).prop_flat_map(move |widths| {
        let mut dims = vec![dim];
        dims.extend(widths);
        dims.push(1);
        let strats: Vec<_> = dims
            .windows(2)
            .map(|d| {
                (
                    prop::collection::vec(prop::collection::vec(-1.5f64..1.5, d[0]), d[1]),
                    prop::collection::vec(-1.0f64..1.0, d[1]),
                )
            })
            .collect();
        strats.prop_map(move |ls| {
            let n = ls.len();
            let layers = ls
                .into_iter()
                .enumerate()
                .map(|(i, (w, b))| {
                    Layer::new(
                        w,
                        b,
                        if i + 1 == n {
                            Activation::Identity
                        } else {
                            Activation::Relu
                        },
                    )
                })
                .collect();
            FeedForwardNetwork::new(dim, layers).unwrap()
        })
    })
}

/// Schemas with unit-range scalars so network outputs stay O(1).
fn small_schema() -> impl Strategy<Value = FeatureSchema> {
    arb_schema().prop_map(|s| {
        let fs = s
            .features()
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Real { .. } => FeatureDescriptor::real(f.name.clone(), -1.0, 1.0),
                FeatureKind::Integer { lb, .. } => {
                    FeatureDescriptor::integer(f.name.clone(), 0, 1 + lb.rem_euclid(3))
                }
                _ => f.clone(),
            })
            .collect();
        FeatureSchema::new(fs).unwrap()
    })
}

fn case() -> impl Strategy<Value = (FeatureSchema, FeedForwardNetwork<f64>, Vec<f64>, Vec<f64>)> {
    small_schema().prop_flat_map(|s| {
        let d = s.encoded_dim();
        (
            Just(s),
            net_for(d),
            prop::collection::vec(0.0f64..=1.0, 6),
            prop::collection::vec(0.0f64..=1.0, 6),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bounded_and_big_m_encodings_agree((schema, net, _, _) in case(), maximize in any::<bool>()) {
        let b = InputBox::from_schema(&schema);
        let t = interval_bounds(&net, &b).unwrap();
        let big_m = t.layers.iter().flat_map(|l| l.lower.iter().chain(&l.upper)).fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
        let sign = if maximize { -1.0 } else { 1.0 };

        let mut e1 = EncodingArtifacts::new(&schema, &b).unwrap();
        e1.add_plausibility(&schema);
        let o1 = e1.add_network_bounded(&net, &t, &relu_states(&t)).unwrap();
        e1.milp.set_objective(vec![(o1, sign)], 0.0);

        let mut e2 = EncodingArtifacts::new(&schema, &b).unwrap();
        e2.add_plausibility(&schema);
        let o2 = e2.add_network_unbounded(&net, big_m).unwrap();
        e2.milp.set_objective(vec![(o2, sign)], 0.0);
        prop_assume!(e2.binary_count() <= 20);

        let v1 = optimum(&e1.milp).unwrap();
        let v2 = optimum(&e2.milp).unwrap();
        prop_assert!((v1 - v2).abs() <= 1e-6, "{} vs {}", v1, v2);
    }

    #[test]
    fn encoding_is_sound((schema, net, u, _) in case(), norm in prop_oneof![Just(Norm::L0), Just(Norm::L1), Just(Norm::Linf)]) {
        let xf = encode::<f64>(&schema, &record_from_unit(&schema, &u)).unwrap();
        let b = InputBox::from_schema(&schema);
        let mut enc = EncodingArtifacts::new(&schema, &b).unwrap();
        enc.add_plausibility(&schema);
        enc.add_actionability(&schema, &xf).unwrap();
        let d = enc.add_distance(&schema, &xf, norm, DistanceMode::Interval { lb: 0.0, ub: 1.0 }).unwrap();
        let t = lp_tightened_bounds_with(&net, &enc.milp, &enc.input_vars).unwrap();
        let out = enc.add_network_bounded(&net, &t, &relu_states(&t)).unwrap();
        enc.milp.set_objective(vec![(out, -1.0), (d, 0.5)], 0.0);
        let sol = solve_milp(&enc.milp, &MilpOptions::exact()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let x = sol.assignment.unwrap();
        let p = enc.decode_point(&x);
        let bad = validate_plausibility(&schema, &p);
        prop_assert!(bad.is_empty(), "{:?}", bad);
        let h = net.output(&p.values).unwrap();
        prop_assert!((h - x[out.0]).abs() <= 1e-6 * (1.0 + h.abs()), "{} vs {}", h, x[out.0]);
        let true_d = distance(&schema, &p, &xf, norm).unwrap();
        prop_assert!(true_d <= x[d.0] + 1e-6);
    }

    #[test]
    fn encoding_is_complete((schema, net, u, v) in case(), norm in prop_oneof![Just(Norm::L0), Just(Norm::L1), Just(Norm::Linf)]) {
        let xf = encode::<f64>(&schema, &record_from_unit(&schema, &u)).unwrap();
        let x = encode::<f64>(&schema, &record_from_unit(&schema, &v)).unwrap();
        let dist = distance(&schema, &x, &xf, norm).unwrap();
        let lb = (dist - 0.05).max(0.0);
        let ub = (dist + 0.05).min(1.0);
        let b = InputBox::from_schema(&schema);
        let mut enc = EncodingArtifacts::new(&schema, &b).unwrap();
        enc.add_plausibility(&schema);
        enc.add_distance(&schema, &xf, norm, DistanceMode::Interval { lb, ub }).unwrap();
        let t = lp_tightened_bounds_with(&net, &enc.milp, &enc.input_vars).unwrap();
        enc.add_network_bounded(&net, &t, &relu_states(&t)).unwrap();
        enc.restrict_inputs(&InputBox::point(&x.values).unwrap()).unwrap();
        let sol = solve_milp(&enc.milp, &MilpOptions::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
    }
}
