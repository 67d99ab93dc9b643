//! Heterogeneous tabular input space.
//!
//! A [`FeatureSchema`] lists features in order. Scalar kinds (real, integer, binary)
//! occupy one encoded column; ordinal features use a thermometer block of `k` columns
//! and categorical features a one-hot block of `k` columns. Encoded points keep real and
//! integer features in raw units; distances normalize per feature.

mod dataset;
mod distance;
mod encoding;
mod schema_file;
#[cfg(test)]
pub(crate) mod test_support;
mod validate;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{read_dataset, write_dataset};
pub use distance::{distance, per_feature_distances, Norm, L0_CHANGE_TOLERANCE};
pub use encoding::{decode, encode, EncodedPoint, RawRecord};
pub use schema_file::{load_schema, save_schema, SCHEMA_FORMAT_VERSION};
pub use validate::{validate_actionability, validate_plausibility, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("invalid feature `{feature}`: {detail}")]
    InvalidDescriptor { feature: String, detail: String },
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("schema has no features")]
    EmptySchema,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("missing value for feature `{0}`")]
    MissingFeature(String),
    #[error("value {value} out of domain for feature `{feature}`")]
    OutOfDomain { feature: String, value: String },
    #[error("record has {got} values, schema has {expected} features")]
    RecordLength { expected: usize, got: usize },
    #[error("point has dimension {got}, schema encodes {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("implausible point: {0}")]
    Implausible(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Real { lb: f64, ub: f64 },
    Integer { lb: i64, ub: i64 },
    Binary,
    Ordinal { k: usize },
    Categorical { k: usize },
}

impl FeatureKind {
    pub fn encoded_width(&self) -> usize {
        match *self {
            FeatureKind::Ordinal { k } | FeatureKind::Categorical { k } => k,
            _ => 1,
        }
    }

    /// Range used to normalize scalar features; `None` for block kinds.
    pub fn scalar_range(&self) -> Option<(f64, f64)> {
        match *self {
            FeatureKind::Real { lb, ub } => Some((lb, ub)),
            FeatureKind::Integer { lb, ub } => Some((lb as f64, ub as f64)),
            FeatureKind::Binary => Some((0.0, 1.0)),
            _ => None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, FeatureKind::Real { .. } | FeatureKind::Integer { .. })
    }
}

/// Allowed direction of change for a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actionability {
    #[default]
    Free,
    Fixed,
    IncreaseOnly,
    DecreaseOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    pub actionability: Actionability,
    /// Optional level/category names for ordinal and categorical features.
    pub labels: Vec<String>,
}

impl FeatureDescriptor {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
            actionability: Actionability::Free,
            labels: Vec::new(),
        }
    }

    pub fn real(name: impl Into<String>, lb: f64, ub: f64) -> Self {
        Self::new(name, FeatureKind::Real { lb, ub })
    }

    pub fn integer(name: impl Into<String>, lb: i64, ub: i64) -> Self {
        Self::new(name, FeatureKind::Integer { lb, ub })
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self::new(name, FeatureKind::Binary)
    }

    pub fn ordinal(name: impl Into<String>, k: usize) -> Self {
        Self::new(name, FeatureKind::Ordinal { k })
    }

    pub fn categorical(name: impl Into<String>, k: usize) -> Self {
        Self::new(name, FeatureKind::Categorical { k })
    }

    pub fn with_actionability(mut self, actionability: Actionability) -> Self {
        self.actionability = actionability;
        self
    }

    pub fn with_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> Result<(), FeatureError> {
        let bad = |detail: &str| FeatureError::InvalidDescriptor {
            feature: self.name.clone(),
            detail: detail.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("empty name"));
        }
        match self.kind {
            FeatureKind::Real { lb, ub } => {
                if !(lb.is_finite() && ub.is_finite()) {
                    return Err(bad("bounds must be finite"));
                }
                if lb >= ub {
                    return Err(bad("lb must be below ub"));
                }
            }
            FeatureKind::Integer { lb, ub } => {
                if lb >= ub {
                    return Err(bad("lb must be below ub"));
                }
            }
            FeatureKind::Binary => {}
            FeatureKind::Ordinal { k } | FeatureKind::Categorical { k } => {
                if k < 2 {
                    return Err(bad("needs at least two levels"));
                }
                if !self.labels.is_empty() && self.labels.len() != k {
                    return Err(bad("label count differs from k"));
                }
            }
        }
        if matches!(self.kind, FeatureKind::Categorical { .. })
            && matches!(
                self.actionability,
                Actionability::IncreaseOnly | Actionability::DecreaseOnly
            )
        {
            return Err(bad("categorical features have no order"));
        }
        if matches!(
            self.kind,
            FeatureKind::Real { .. } | FeatureKind::Integer { .. } | FeatureKind::Binary
        ) && !self.labels.is_empty()
        {
            return Err(bad("labels only apply to ordinal and categorical features"));
        }
        Ok(())
    }

    /// Resolves a level/category name or 1-based index.
    pub fn level_index(&self, token: &str) -> Option<usize> {
        if let Some(pos) = self.labels.iter().position(|l| l == token) {
            return Some(pos + 1);
        }
        token.trim().parse::<usize>().ok()
    }
}

/// Feature counts per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KindCounts {
    pub n_real: usize,
    pub n_int: usize,
    pub n_bin: usize,
    pub n_ord: usize,
    pub n_cat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    features: Vec<FeatureDescriptor>,
    offsets: Vec<usize>,
    encoded_dim: usize,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDescriptor>) -> Result<Self, FeatureError> {
        if features.is_empty() {
            return Err(FeatureError::EmptySchema);
        }
        let mut offsets = Vec::with_capacity(features.len());
        let mut encoded_dim = 0;
        for (i, f) in features.iter().enumerate() {
            f.validate()?;
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(FeatureError::DuplicateName(f.name.clone()));
            }
            offsets.push(encoded_dim);
            encoded_dim += f.kind.encoded_width();
        }
        Ok(Self {
            features,
            offsets,
            encoded_dim,
        })
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn encoded_dim(&self) -> usize {
        self.encoded_dim
    }

    /// Encoded columns of feature `i`.
    pub fn block(&self, i: usize) -> Range<usize> {
        let start = self.offsets[i];
        start..start + self.features[i].kind.encoded_width()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn counts(&self) -> KindCounts {
        let mut c = KindCounts::default();
        for f in &self.features {
            match f.kind {
                FeatureKind::Real { .. } => c.n_real += 1,
                FeatureKind::Integer { .. } => c.n_int += 1,
                FeatureKind::Binary => c.n_bin += 1,
                FeatureKind::Ordinal { .. } => c.n_ord += 1,
                FeatureKind::Categorical { .. } => c.n_cat += 1,
            }
        }
        c
    }

    /// Box of the encoded space: scalar bounds, `[0, 1]` for block entries.
    pub fn encoded_bounds(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.encoded_dim);
        for f in &self.features {
            match f.kind.scalar_range() {
                Some(r) => out.push(r),
                None => {
                    let k = f.kind.encoded_width();
                    // The first thermometer column is always set.
                    if matches!(f.kind, FeatureKind::Ordinal { .. }) {
                        out.push((1.0, 1.0));
                        out.extend(std::iter::repeat_n((0.0, 1.0), k - 1));
                    } else {
                        out.extend(std::iter::repeat_n((0.0, 1.0), k));
                    }
                }
            }
        }
        out
    }
}
