//! Run reports: one record per explained row plus aggregates that can be recomputed
//! from the records.

use serde::Serialize;

use cfx_core::encoder::FlipRule;
use cfx_core::features::{
    decode, distance, validate_actionability, validate_plausibility, EncodedPoint, FeatureSchema,
    Norm,
};
use cfx_core::network::Label;
use cfx_core::search::{CfeResult, CfeStatus, DiversityMetrics, Phase};
use cfx_core::Network;

use crate::{Method, Side};

/// Relative slack when comparing a reported distance with its recomputation.
const DISTANCE_RECHECK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub schema: String,
    pub data: String,
    pub method: String,
    pub norm: Norm,
    pub epsilon: f64,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_div: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub side: Side,
    pub seed: u64,
    pub jobs: usize,
    pub timeout_s: f64,
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::MipObj => "mip-obj",
        Method::MipExp => "mip-exp",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ShellCounts {
    pub expansion: usize,
    pub refinement: usize,
    pub objective: usize,
}

impl ShellCounts {
    pub fn add(&mut self, r: &CfeResult) {
        self.expansion += r.shells(Phase::Expansion);
        self.refinement += r.shells(Phase::Refinement);
        self.objective += r.shells(Phase::Objective);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfeRecord {
    /// Raw feature values in schema order.
    pub raw: Vec<f64>,
    pub encoded: Vec<f64>,
    pub distance: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    /// 0-based dataset row.
    pub id: usize,
    pub factual: Vec<f64>,
    /// Network output at the factual.
    pub output: Option<f64>,
    pub target: Option<Label>,
    pub status: CfeStatus,
    /// Distance of the first counterfactual.
    pub distance: Option<f64>,
    pub wall_time_s: f64,
    pub shells: ShellCounts,
    pub nodes: usize,
    pub counterfactuals: Vec<CfeRecord>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityMetrics>,
}

impl InstanceRecord {
    pub fn failed(id: usize, factual: Vec<f64>, reason: String) -> Self {
        Self {
            id,
            factual,
            output: None,
            target: None,
            status: CfeStatus::Failed(reason),
            distance: None,
            wall_time_s: 0.0,
            shells: ShellCounts::default(),
            nodes: 0,
            counterfactuals: Vec::new(),
            diversity: None,
        }
    }

    pub fn is_found(&self) -> bool {
        self.status == CfeStatus::Found
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub instances: usize,
    pub found: usize,
    pub no_counterfactual: usize,
    pub failed: usize,
    /// Found over instances; `null` for an empty run.
    pub coverage: Option<f64>,
    pub norm: Norm,
    pub mean_distance: Option<f64>,
    pub median_distance: Option<f64>,
    pub mean_wall_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_k_diversity: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_k_distance: Option<Option<f64>>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

impl Aggregates {
    pub fn from_records(records: &[InstanceRecord], norm: Norm, diverse: bool) -> Self {
        let found = records.iter().filter(|r| r.is_found()).count();
        let none = records
            .iter()
            .filter(|r| r.status == CfeStatus::NoCounterfactualInBox)
            .count();
        let distances: Vec<f64> = records
            .iter()
            .filter(|r| r.is_found())
            .filter_map(|r| r.distance)
            .collect();
        let times: Vec<f64> = records.iter().map(|r| r.wall_time_s).collect();
        let metric = |f: fn(&DiversityMetrics) -> Option<f64>| {
            let v: Vec<f64> = records
                .iter()
                .filter_map(|r| r.diversity.as_ref().and_then(f))
                .collect();
            mean(&v)
        };
        Self {
            instances: records.len(),
            found,
            no_counterfactual: none,
            failed: records.len() - found - none,
            coverage: (!records.is_empty()).then(|| found as f64 / records.len() as f64),
            norm,
            mean_distance: mean(&distances),
            median_distance: median(&distances),
            mean_wall_time_s: mean(&times),
            mean_k_diversity: diverse.then(|| metric(|d| d.k_diversity)),
            mean_k_distance: diverse.then(|| metric(|d| d.k_distance)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    pub instances: Vec<InstanceRecord>,
    pub aggregates: Aggregates,
}

/// Everything needed to recheck a counterfactual independently of the search.
pub struct Checker<'a> {
    pub net: &'a Network,
    pub schema: &'a FeatureSchema,
    pub margin: f64,
    pub norm: Norm,
}

impl Checker<'_> {
    /// Plausibility, actionability, flip with margin, and the claimed distance.
    pub fn revalidate(
        &self,
        factual: &EncodedPoint<f64>,
        target: Label,
        point: &EncodedPoint<f64>,
        claimed: f64,
    ) -> Result<CfeRecord, String> {
        if let Some(v) = validate_plausibility(self.schema, point).into_iter().next() {
            return Err(format!("revalidation: not plausible: {v}"));
        }
        if let Some(v) = validate_actionability(self.schema, point, factual)
            .into_iter()
            .next()
        {
            return Err(format!("revalidation: breaks actionability: {v}"));
        }
        let output = self.net.output(&point.values).map_err(|e| e.to_string())?;
        if !FlipRule::new(target, self.margin).is_flipped(output) {
            return Err(format!(
                "revalidation: output {output} is not on the {target:?} side"
            ));
        }
        let d = distance(self.schema, point, factual, self.norm).map_err(|e| e.to_string())?;
        if (d - claimed).abs() > DISTANCE_RECHECK * (1.0 + d.abs()) {
            return Err(format!(
                "revalidation: distance {claimed} recomputes to {d}"
            ));
        }
        let raw = decode(self.schema, point).map_err(|e| e.to_string())?;
        Ok(CfeRecord {
            raw: raw.values,
            encoded: point.values.clone(),
            distance: d,
            output,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |d| format!("{d:.6}"))
}

fn status_text(s: &CfeStatus) -> String {
    match s {
        CfeStatus::Found => "found".into(),
        CfeStatus::NoCounterfactualInBox => "none".into(),
        CfeStatus::Failed(r) => format!("failed ({r})"),
    }
}

pub fn print_run(report: &RunReport) {
    println!(
        "{:>5}  {:>9}  {:>10}  {:>9}  {:>9}  {:>7}  status",
        "row", "target", "distance", "time_s", "e/r/o", "nodes"
    );
    for r in &report.instances {
        let target = r
            .target
            .map_or("-".into(), |t| format!("{t:?}").to_lowercase());
        let shells = format!(
            "{}/{}/{}",
            r.shells.expansion, r.shells.refinement, r.shells.objective
        );
        let mut status = status_text(&r.status);
        if r.counterfactuals.len() > 1 {
            status.push_str(&format!(" x{}", r.counterfactuals.len()));
        }
        println!(
            "{:>5}  {:>9}  {:>10}  {:>9.3}  {:>9}  {:>7}  {}",
            r.id,
            target,
            opt(r.distance),
            r.wall_time_s,
            shells,
            r.nodes,
            status
        );
    }
    let a = &report.aggregates;
    println!();
    println!(
        "instances {}  found {}  none {}  failed {}  coverage {}",
        a.instances,
        a.found,
        a.no_counterfactual,
        a.failed,
        a.coverage
            .map_or("null".into(), |c| format!("{:.1}%", 100.0 * c))
    );
    println!(
        "{} distance mean {}  median {}  mean time {} s",
        a.norm,
        opt(a.mean_distance),
        opt(a.median_distance),
        opt(a.mean_wall_time_s)
    );
    if let (Some(div), Some(dist)) = (a.mean_k_diversity, a.mean_k_distance) {
        println!(
            "mean k_diversity {}  mean k_distance {}",
            opt(div),
            opt(dist)
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn empty_run_has_null_coverage() {
        let a = Aggregates::from_records(&[], Norm::L1, false);
        assert_eq!(a.coverage, None);
        let json = serde_json::to_value(&a).unwrap();
        assert!(json["coverage"].is_null());
        assert!(json.get("mean_k_diversity").is_none());
    }
}
