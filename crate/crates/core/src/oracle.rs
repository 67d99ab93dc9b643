//! Brute-force ground truth by grid enumeration, for checking the optimizing components
//! on small inputs.

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{BoundsTable, InputBox, LayerBounds};
use crate::encoder::FlipRule;
use crate::features::{
    decode, distance, Actionability, EncodedPoint, FeatureError, FeatureKind, FeatureSchema, Norm,
};
use crate::network::{FeedForwardNetwork, NetworkError};

pub const DEFAULT_GRID_CAP: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid has {size} points, cap is {cap}")]
    TooLarge { size: u128, cap: usize },
    #[error("continuous features need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("input has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Uniform samples per continuous feature, endpoints included.
    pub samples: usize,
    pub cap: usize,
}

impl GridSpec {
    pub fn new(samples: usize) -> Self {
        Self {
            samples,
            cap: DEFAULT_GRID_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn check(&self) -> Result<(), OracleError> {
        if self.samples < 2 {
            return Err(OracleError::TooFewSamples(self.samples));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHit {
    pub point: EncodedPoint<f64>,
    pub distance: f64,
    pub output: f64,
}

fn uniform(lb: f64, ub: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            if i + 1 == m {
                ub
            } else {
                lb + (ub - lb) * i as f64 / (m - 1) as f64
            }
        })
        .collect()
}

/// Encoded block of every admissible value of feature `i`.
fn feature_options(schema: &FeatureSchema, i: usize, factual_raw: f64, m: usize) -> Vec<Vec<f64>> {
    let f = &schema.features()[i];
    let mut raw: Vec<f64> = match f.kind {
        FeatureKind::Real { lb, ub } => {
            let mut v = uniform(lb, ub, m);
            v.push(factual_raw);
            v
        }
        FeatureKind::Integer { lb, ub } => (lb..=ub).map(|v| v as f64).collect(),
        FeatureKind::Binary => vec![0.0, 1.0],
        FeatureKind::Ordinal { k } | FeatureKind::Categorical { k } => {
            (1..=k).map(|v| v as f64).collect()
        }
    };
    raw.sort_by(f64::total_cmp);
    raw.dedup();
    raw.retain(|&v| match f.actionability {
        Actionability::Free => true,
        Actionability::Fixed => v == factual_raw,
        Actionability::IncreaseOnly => v >= factual_raw,
        Actionability::DecreaseOnly => v <= factual_raw,
    });
    raw.into_iter()
        .map(|v| match f.kind {
            FeatureKind::Ordinal { k } => (1..=k)
                .map(|j| if j as f64 <= v { 1.0 } else { 0.0 })
                .collect(),
            FeatureKind::Categorical { k } => (1..=k)
                .map(|j| if j as f64 == v { 1.0 } else { 0.0 })
                .collect(),
            _ => vec![v],
        })
        .collect()
}

fn grid_size<T>(options: &[Vec<T>], cap: usize) -> Result<usize, OracleError> {
    let size = options
        .iter()
        .fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128));
    if size > cap as u128 {
        return Err(OracleError::TooLarge { size, cap });
    }
    Ok(size as usize)
}

/// Mixed-radix decoding of a grid index, last coordinate fastest.
fn grid_coords(mut index: usize, radices: &[usize], out: &mut [usize]) {
    for (slot, &r) in out.iter_mut().zip(radices).rev() {
        *slot = index % r;
        index /= r;
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn better(a: &OracleHit, b: &OracleHit) -> bool {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| lex(&a.point.values, &b.point.values))
        == Ordering::Less
}

/// Nearest grid point on the `rule` side of the boundary, among the plausible points that
/// respect actionability. Continuous grids also contain the factual's own value. Ties go
/// to the lexicographically smallest encoded point.
pub fn brute_force_nearest(
    net: &FeedForwardNetwork<f64>,
    schema: &FeatureSchema,
    factual: &EncodedPoint<f64>,
    rule: FlipRule,
    norm: Norm,
    grid: GridSpec,
) -> Result<Option<OracleHit>, OracleError> {
    grid.check()?;
    if net.input_dim() != schema.encoded_dim() {
        return Err(OracleError::Dimension {
            expected: net.input_dim(),
            got: schema.encoded_dim(),
        });
    }
    let raw = decode(schema, factual)?;
    let options: Vec<Vec<Vec<f64>>> = (0..schema.len())
        .map(|i| feature_options(schema, i, raw.values[i], grid.samples))
        .collect();
    let size = grid_size(&options, grid.cap)?;
    let radices: Vec<usize> = options.iter().map(Vec::len).collect();
    let dim = schema.encoded_dim();

    let best = (0..size)
        .into_par_iter()
        .fold(
            || {
                (
                    None::<OracleHit>,
                    vec![0usize; radices.len()],
                    Vec::with_capacity(dim),
                )
            },
            |(mut best, mut coords, mut x), idx| {
                grid_coords(idx, &radices, &mut coords);
                x.clear();
                for (opts, &c) in options.iter().zip(&coords) {
                    x.extend_from_slice(&opts[c]);
                }
                let output = net.output(&x).expect("dimension checked");
                if rule.is_flipped(output) {
                    let point = EncodedPoint::new(x.clone());
                    let d = distance(schema, &point, factual, norm).expect("dimension checked");
                    let hit = OracleHit {
                        point,
                        distance: d,
                        output,
                    };
                    if best.as_ref().is_none_or(|b| better(&hit, b)) {
                        best = Some(hit);
                    }
                }
                (best, coords, x)
            },
        )
        .map(|(b, _, _)| b)
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
                (a, b) => a.or(b),
            },
        );
    Ok(best)
}

/// Most the distance to the factual can grow when each continuous coordinate moves to a
/// neighbouring grid value. Integer and block features are enumerated, so they add nothing.
pub fn grid_slack(schema: &FeatureSchema, norm: Norm, grid: &GridSpec) -> f64 {
    let n = schema.len().max(1) as f64;
    let reals = schema
        .features()
        .iter()
        .filter(|f| matches!(f.kind, FeatureKind::Real { .. }))
        .count() as f64;
    let step = 1.0 / (grid.samples.max(2) - 1) as f64;
    match norm {
        Norm::L0 => 0.0,
        Norm::L1 => reals * step / n,
        Norm::Linf if reals > 0.0 => step,
        Norm::Linf => 0.0,
        Norm::L2 => (reals / n).sqrt() * step,
    }
}

/// Empirical pre-activation range of every neuron over a uniform grid on `input`
/// (`samples` per dimension). Layers carry the network's activations so the result
/// compares directly against a claimed bounds table.
pub fn brute_force_reachable_range(
    net: &FeedForwardNetwork<f64>,
    input: &InputBox<f64>,
    grid: GridSpec,
) -> Result<BoundsTable<f64>, OracleError> {
    grid.check()?;
    if input.dim() != net.input_dim() {
        return Err(OracleError::Dimension {
            expected: net.input_dim(),
            got: input.dim(),
        });
    }
    let axes: Vec<Vec<f64>> = (0..input.dim())
        .map(|k| {
            let (l, u) = (input.lower[k], input.upper[k]);
            if l == u {
                vec![l]
            } else {
                uniform(l, u, grid.samples)
            }
        })
        .collect();
    let size = grid_size(&axes, grid.cap)?;
    let radices: Vec<usize> = axes.iter().map(Vec::len).collect();
    let empty = || -> Vec<(Vec<f64>, Vec<f64>)> {
        net.layers()
            .iter()
            .map(|l| {
                (
                    vec![f64::INFINITY; l.width()],
                    vec![f64::NEG_INFINITY; l.width()],
                )
            })
            .collect()
    };
    let merge = |mut a: Vec<(Vec<f64>, Vec<f64>)>, b: &[(Vec<f64>, Vec<f64>)]| {
        for ((al, au), (bl, bu)) in a.iter_mut().zip(b) {
            for j in 0..al.len() {
                al[j] = al[j].min(bl[j]);
                au[j] = au[j].max(bu[j]);
            }
        }
        a
    };
    let ranges = (0..size)
        .into_par_iter()
        .fold(
            || (empty(), vec![0usize; radices.len()]),
            |(mut acc, mut coords), idx| {
                grid_coords(idx, &radices, &mut coords);
                let x: Vec<f64> = coords.iter().zip(&axes).map(|(&c, a)| a[c]).collect();
                let trace = net.forward(&x).expect("dimension checked");
                for ((lo, hi), pre) in acc.iter_mut().zip(&trace.pre_activation) {
                    for j in 0..lo.len() {
                        lo[j] = lo[j].min(pre[j]);
                        hi[j] = hi[j].max(pre[j]);
                    }
                }
                (acc, coords)
            },
        )
        .map(|(acc, _)| acc)
        .reduce(empty, |a, b| merge(a, &b));
    Ok(BoundsTable {
        layers: ranges
            .into_iter()
            .zip(net.layers())
            .map(|((lower, upper), l)| LayerBounds {
                lower,
                upper,
                activation: l.activation,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{interval_bounds, lp_tightened_bounds, relu_states, ReluState};
    use crate::features::FeatureDescriptor;
    use crate::network::fixtures::{cancelling, three_input};
    use crate::network::{Activation, Label, Layer};

    fn linear(w: f64, b: f64) -> FeedForwardNetwork<f64> {
        FeedForwardNetwork::new(
            1,
            vec![Layer::new(vec![vec![w]], vec![b], Activation::Identity)],
        )
        .unwrap()
    }

    #[test]
    fn linear_threshold() {
        let net = linear(1.0, -0.5);
        let schema = FeatureSchema::new(vec![FeatureDescriptor::real("x", 0.0, 1.0)]).unwrap();
        let xf = EncodedPoint::new(vec![0.4]);
        let hit = brute_force_nearest(
            &net,
            &schema,
            &xf,
            FlipRule::new(Label::Positive, 1e-6),
            Norm::L1,
            GridSpec::new(101),
        )
        .unwrap()
        .unwrap();
        assert!((hit.distance - 0.1).abs() < 1e-12);
        assert!((hit.point.values[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_network_has_no_hit() {
        let schema = FeatureSchema::new(vec![FeatureDescriptor::real("x", 0.0, 1.0)]).unwrap();
        let r = brute_force_nearest(
            &linear(0.0, 1.0),
            &schema,
            &EncodedPoint::new(vec![0.4]),
            FlipRule::new(Label::Negative, 1e-6),
            Norm::L1,
            GridSpec::new(11),
        );
        assert_eq!(r, Ok(None));
    }

    #[test]
    fn categorical_scan_is_exact() {
        // Output is the weight of the chosen category.
        let net = FeedForwardNetwork::new(
            3,
            vec![Layer::new(
                vec![vec![-1.0, 2.0, 3.0]],
                vec![0.0],
                Activation::Identity,
            )],
        )
        .unwrap();
        let schema = FeatureSchema::new(vec![FeatureDescriptor::categorical("c", 3)]).unwrap();
        let xf = EncodedPoint::new(vec![1.0, 0.0, 0.0]);
        let hit = brute_force_nearest(
            &net,
            &schema,
            &xf,
            FlipRule::new(Label::Positive, 0.0),
            Norm::L1,
            GridSpec::new(2),
        )
        .unwrap()
        .unwrap();
        assert_eq!(hit.distance, 1.0);
        // Both other categories flip at distance 1; the lexicographically smaller wins.
        assert_eq!(hit.point.values, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn actionability_and_cap() {
        let net = FeedForwardNetwork::new(
            2,
            vec![Layer::new(
                vec![vec![1.0, 1.0]],
                vec![-1.5],
                Activation::Identity,
            )],
        )
        .unwrap();
        let schema = FeatureSchema::new(vec![
            FeatureDescriptor::real("a", 0.0, 1.0).with_actionability(Actionability::Fixed),
            FeatureDescriptor::integer("n", 0, 3).with_actionability(Actionability::IncreaseOnly),
        ])
        .unwrap();
        let xf = EncodedPoint::new(vec![0.3, 1.0]);
        let rule = FlipRule::new(Label::Positive, 0.0);
        let hit = brute_force_nearest(&net, &schema, &xf, rule, Norm::L1, GridSpec::new(5))
            .unwrap()
            .unwrap();
        assert_eq!(hit.point.values, vec![0.3, 2.0]);
        let err = brute_force_nearest(
            &net,
            &schema,
            &xf,
            rule,
            Norm::L1,
            GridSpec::new(5).with_cap(2),
        )
        .unwrap_err();
        assert_eq!(err, OracleError::TooLarge { size: 3, cap: 2 });
        assert!(brute_force_nearest(&net, &schema, &xf, rule, Norm::L1, GridSpec::new(1)).is_err());
    }

    #[test]
    fn cancelling_ranges_sit_inside_both_tables() {
        let net = cancelling(Activation::Identity);
        let b = InputBox::uniform(2, -1.0, 2.0).unwrap();
        let seen = brute_force_reachable_range(&net, &b, GridSpec::new(61)).unwrap();
        let ia = interval_bounds(&net, &b).unwrap();
        let lp = lp_tightened_bounds(&net, &b, &[]).unwrap();
        assert!(seen.within(&ia, 1e-9));
        assert!(seen.within(&lp, 1e-6));
        assert!(seen.output().0.abs() < 1e-12 && seen.output().1.abs() < 1e-12);
    }

    #[test]
    fn point_box_range_is_the_trace() {
        let net = three_input();
        let x = [0.3, 0.8, 0.1];
        let seen =
            brute_force_reachable_range(&net, &InputBox::point(&x).unwrap(), GridSpec::new(3))
                .unwrap();
        let trace = net.forward(&x).unwrap();
        for (l, pre) in seen.layers.iter().zip(&trace.pre_activation) {
            assert_eq!(&l.lower, pre);
            assert_eq!(&l.upper, pre);
        }
    }

    #[test]
    fn stable_neurons_agree_with_samples() {
        let net = three_input();
        let b = InputBox::uniform(3, 0.0, 1.0).unwrap();
        let seen = brute_force_reachable_range(&net, &b, GridSpec::new(21)).unwrap();
        let table = interval_bounds(&net, &b).unwrap();
        for (j, s) in relu_states(&table)[0].iter().enumerate() {
            let (lo, hi) = (seen.layers[0].lower[j], seen.layers[0].upper[j]);
            match s {
                ReluState::AlwaysActive => assert!(lo >= 0.0),
                ReluState::AlwaysInactive => assert!(hi <= 0.0),
                _ => {}
            }
        }
        assert!(seen.within(&table, 1e-9));
    }

    #[test]
    fn slack_counts_only_reals() {
        let schema = FeatureSchema::new(vec![
            FeatureDescriptor::real("a", 0.0, 1.0),
            FeatureDescriptor::integer("b", 0, 4),
            FeatureDescriptor::categorical("c", 3),
            FeatureDescriptor::real("d", -5.0, 5.0),
        ])
        .unwrap();
        let g = GridSpec::new(201);
        assert!((grid_slack(&schema, Norm::L1, &g) - 2.0 / (200.0 * 4.0)).abs() < 1e-15);
        assert!((grid_slack(&schema, Norm::Linf, &g) - 1.0 / 200.0).abs() < 1e-15);
        assert_eq!(grid_slack(&schema, Norm::L0, &g), 0.0);
        let discrete = FeatureSchema::new(vec![FeatureDescriptor::binary("e")]).unwrap();
        assert_eq!(grid_slack(&discrete, Norm::Linf, &g), 0.0);
    }
}
