//! Counterfactual search: exponential shell expansion with binary refinement, a single
//! distance-objective MILP, and diverse sets built on top of the latter.

mod diverse;
mod solve;
mod strategy;


use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::encoder::{EncodeError, FlipRule};
use crate::features::{validate_plausibility, EncodedPoint, FeatureSchema, Norm};
use crate::milp::MilpOptions;
use crate::network::{FeedForwardNetwork, Label, NetworkError};

pub use diverse::{diversity_metrics, generate_diverse, k_distance, k_diversity, DiversityMetrics};
pub use solve::objective_model;
pub use strategy::{find_cfe_shell, generate_mip_exp, generate_mip_obj};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("factual has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("factual is not plausible: {0}")]
    Implausible(String),
    #[error("factual already satisfies the target (output {output})")]
    AlreadyFlipped { output: f64 },
    #[error("{0} is undefined for this many counterfactuals")]
    UndefinedMetric(&'static str),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Initial shell width and binary-search precision (normalized distance units).
    pub epsilon: f64,
    pub norm: Norm,
    /// A negative output must reach `-margin` to count.
    pub margin: f64,
    /// Minimum distance between members of a diverse set.
    pub delta_div: f64,
    pub solver: MilpOptions,
    pub max_expansions: usize,
    /// Wall-clock budget of one search.
    pub time_limit: Option<Duration>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            norm: Norm::L1,
            margin: 1e-6,
            delta_div: 0.01,
            solver: MilpOptions {
                gap_abs: 1e-7,
                ..MilpOptions::default()
            },
            max_expansions: 64,
            time_limit: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |s: String| Err(SearchError::InvalidConfig(s));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon {} outside (0, 1]", self.epsilon));
        }
        if !(self.delta_div > 0.0 && self.delta_div <= 1.0) {
            return bad(format!("delta_div {} outside (0, 1]", self.delta_div));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!(
                "margin {} must be finite and non-negative",
                self.margin
            ));
        }
        if self.norm == Norm::L2 {
            return bad("l2 has no linear encoding; export it as an LP document instead".into());
        }
        if self.max_expansions == 0 {
            return bad("max_expansions must be positive".into());
        }
        Ok(())
    }

    fn rule(&self, target: Label) -> FlipRule {
        FlipRule::new(target, self.margin)
    }
}

/// A factual instance together with the side it should be moved to.
#[derive(Debug, Clone)]
pub struct CfeQuery<'a> {
    pub net: &'a FeedForwardNetwork<f64>,
    pub schema: &'a FeatureSchema,
    pub factual: EncodedPoint<f64>,
    pub target: Label,
}

impl<'a> CfeQuery<'a> {
    /// Targets the side opposite to the factual's predicted label.
    pub fn new(
        net: &'a FeedForwardNetwork<f64>,
        schema: &'a FeatureSchema,
        factual: EncodedPoint<f64>,
    ) -> Result<Self, SearchError> {
        Self::check(net, schema, &factual)?;
        let target = net.predicted_label(&factual.values)?.opposite();
        Ok(Self {
            net,
            schema,
            factual,
            target,
        })
    }

    /// Explicit target; rejects a factual that already satisfies it.
    pub fn with_target(
        net: &'a FeedForwardNetwork<f64>,
        schema: &'a FeatureSchema,
        factual: EncodedPoint<f64>,
        target: Label,
        margin: f64,
    ) -> Result<Self, SearchError> {
        Self::check(net, schema, &factual)?;
        let output = net.output(&factual.values)?;
        if FlipRule::new(target, margin).is_flipped(output) {
            return Err(SearchError::AlreadyFlipped { output });
        }
        Ok(Self {
            net,
            schema,
            factual,
            target,
        })
    }

    fn check(
        net: &FeedForwardNetwork<f64>,
        schema: &FeatureSchema,
        factual: &EncodedPoint<f64>,
    ) -> Result<(), SearchError> {
        if schema.encoded_dim() != net.input_dim() {
            return Err(SearchError::Dimension {
                expected: net.input_dim(),
                got: schema.encoded_dim(),
            });
        }
        if factual.len() != net.input_dim() {
            return Err(SearchError::Dimension {
                expected: net.input_dim(),
                got: factual.len(),
            });
        }
        if let Some(v) = validate_plausibility(schema, factual).into_iter().next() {
            return Err(SearchError::Implausible(v.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum CfeStatus {
    Found,
    NoCounterfactualInBox,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Expansion,
    Refinement,
    Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShellOutcome {
    Found { distance: f64 },
    Absent,
    Failed { reason: String },
}

/// One MILP solve of the search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShellRecord {
    pub phase: Phase,
    pub lb: f64,
    pub ub: f64,
    pub outcome: ShellOutcome,
    pub nodes: usize,
    pub lp_iterations: usize,
    /// Number of re-solves with a larger flip offset after a point failed the forward check.
    pub offset_retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfeResult {
    pub status: CfeStatus,
    pub point: Option<EncodedPoint<f64>>,
    /// Recomputed distance of `point` to the factual.
    pub distance: Option<f64>,
    /// Network output at `point`.
    pub output: Option<f64>,
    pub trace: Vec<ShellRecord>,
    pub wall_time: Duration,
}

impl CfeResult {
    pub fn is_found(&self) -> bool {
        self.status == CfeStatus::Found
    }

    pub fn shells(&self, phase: Phase) -> usize {
        self.trace.iter().filter(|r| r.phase == phase).count()
    }

    pub fn nodes(&self) -> usize {
        self.trace.iter().map(|r| r.nodes).sum()
    }
}
