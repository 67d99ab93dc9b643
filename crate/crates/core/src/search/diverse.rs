use serde::Serialize;

use super::strategy::generate_mip_obj_excluding;
use super::{CfeQuery, CfeResult, CfeStatus, SearchConfig, SearchError};
use crate::encoder::EncodeError;
use crate::features::{distance, EncodedPoint, FeatureSchema, Norm};

/// Up to `k` counterfactuals, each the nearest one at least `delta_div` away from every
/// earlier one. Stops at the first round without a counterfactual; a failed round is
/// kept as the last entry.
pub fn generate_diverse(
    q: &CfeQuery<'_>,
    k: usize,
    cfg: &SearchConfig,
) -> Result<Vec<CfeResult>, SearchError> {
    cfg.validate()?;
    if k == 0 {
        return Err(SearchError::InvalidConfig("k must be at least 1".into()));
    }
    let mut found: Vec<EncodedPoint<f64>> = Vec::new();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let r = generate_mip_obj_excluding(q, cfg, &found)?;
        match &r.status {
            CfeStatus::Found => {
                found.push(r.point.clone().expect("found result has a point"));
                out.push(r);
            }
            CfeStatus::NoCounterfactualInBox => break,
            CfeStatus::Failed(_) => {
                out.push(r);
                break;
            }
        }
    }
    Ok(out)
}

/// Mean pairwise distance among the counterfactuals.
pub fn k_diversity(
    schema: &FeatureSchema,
    points: &[EncodedPoint<f64>],
    norm: Norm,
) -> Result<f64, SearchError> {
    if points.len() < 2 {
        return Err(SearchError::UndefinedMetric("k_diversity"));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            sum += distance(schema, &points[i], &points[j], norm).map_err(EncodeError::from)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Mean distance of the counterfactuals to the factual.
pub fn k_distance(
    schema: &FeatureSchema,
    points: &[EncodedPoint<f64>],
    factual: &EncodedPoint<f64>,
    norm: Norm,
) -> Result<f64, SearchError> {
    if points.is_empty() {
        return Err(SearchError::UndefinedMetric("k_distance"));
    }
    let mut sum = 0.0;
    for p in points {
        sum += distance(schema, p, factual, norm).map_err(EncodeError::from)?;
    }
    Ok(sum / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiversityMetrics {
    /// `None` with fewer than two counterfactuals.
    pub k_diversity: Option<f64>,
    /// `None` without counterfactuals.
    pub k_distance: Option<f64>,
}

/// Both metrics over the found members of `results`.
pub fn diversity_metrics(
    schema: &FeatureSchema,
    results: &[CfeResult],
    factual: &EncodedPoint<f64>,
    norm: Norm,
) -> Result<DiversityMetrics, SearchError> {
    let points: Vec<EncodedPoint<f64>> = results
        .iter()
        .filter(|r| r.is_found())
        .filter_map(|r| r.point.clone())
        .collect();
    let defined = |r: Result<f64, SearchError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(SearchError::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(DiversityMetrics {
        k_diversity: defined(k_diversity(schema, &points, norm))?,
        k_distance: defined(k_distance(schema, &points, factual, norm))?,
    })
}
