//! JSON schema files.
//!
//! ```json
//! {
//!   "format": 1,
//!   "features": [
//!     {"name": "age", "kind": "real", "lb": 18, "ub": 90, "actionability": "increase_only"},
//!     {"name": "priors", "kind": "integer", "lb": 0, "ub": 30},
//!     {"name": "sex", "kind": "binary", "actionability": "fixed"},
//!     {"name": "degree", "kind": "categorical", "categories": ["F", "M"]},
//!     {"name": "score", "kind": "ordinal", "k": 3}
//!   ]
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::{Actionability, FeatureDescriptor, FeatureError, FeatureKind, FeatureSchema};

pub const SCHEMA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SchemaDocument {
    format: u32,
    features: Vec<FeatureDocument>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Real,
    Integer,
    Binary,
    Ordinal,
    Categorical,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureDocument {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default)]
    actionability: Actionability,
}

impl FeatureDocument {
    fn into_descriptor(self) -> Result<FeatureDescriptor, FeatureError> {
        let bad = |detail: &str| FeatureError::InvalidDescriptor {
            feature: self.name.clone(),
            detail: detail.into(),
        };
        let bounds = || -> Result<(f64, f64), FeatureError> {
            match (self.lb, self.ub) {
                (Some(lb), Some(ub)) => Ok((lb, ub)),
                _ => Err(bad("lb and ub are required")),
            }
        };
        let (kind, labels) = match self.kind {
            KindTag::Real => {
                let (lb, ub) = bounds()?;
                (FeatureKind::Real { lb, ub }, Vec::new())
            }
            KindTag::Integer => {
                let (lb, ub) = bounds()?;
                if lb.fract() != 0.0 || ub.fract() != 0.0 {
                    return Err(bad("integer bounds must be integral"));
                }
                (
                    FeatureKind::Integer {
                        lb: lb as i64,
                        ub: ub as i64,
                    },
                    Vec::new(),
                )
            }
            KindTag::Binary => (FeatureKind::Binary, Vec::new()),
            KindTag::Ordinal | KindTag::Categorical => {
                let names = if matches!(self.kind, KindTag::Ordinal) {
                    &self.levels
                } else {
                    &self.categories
                };
                let labels = names.clone().unwrap_or_default();
                let k = match (self.k, labels.len()) {
                    (Some(k), 0) => k,
                    (None, 0) => return Err(bad("k or a label list is required")),
                    (None, n) => n,
                    (Some(k), n) if k == n => k,
                    _ => return Err(bad("k disagrees with label list")),
                };
                let kind = if matches!(self.kind, KindTag::Ordinal) {
                    FeatureKind::Ordinal { k }
                } else {
                    FeatureKind::Categorical { k }
                };
                (kind, labels)
            }
        };
        Ok(FeatureDescriptor {
            name: self.name,
            kind,
            actionability: self.actionability,
            labels,
        })
    }

    fn from_descriptor(f: &FeatureDescriptor) -> Self {
        let mut doc = FeatureDocument {
            name: f.name.clone(),
            kind: KindTag::Binary,
            lb: None,
            ub: None,
            k: None,
            levels: None,
            categories: None,
            actionability: f.actionability,
        };
        let labels = (!f.labels.is_empty()).then(|| f.labels.clone());
        match f.kind {
            FeatureKind::Real { lb, ub } => {
                doc.kind = KindTag::Real;
                (doc.lb, doc.ub) = (Some(lb), Some(ub));
            }
            FeatureKind::Integer { lb, ub } => {
                doc.kind = KindTag::Integer;
                (doc.lb, doc.ub) = (Some(lb as f64), Some(ub as f64));
            }
            FeatureKind::Binary => {}
            FeatureKind::Ordinal { k } => {
                doc.kind = KindTag::Ordinal;
                doc.k = Some(k);
                doc.levels = labels;
            }
            FeatureKind::Categorical { k } => {
                doc.kind = KindTag::Categorical;
                doc.k = Some(k);
                doc.categories = labels;
            }
        }
        doc
    }
}

pub fn load_schema(document: &str) -> Result<FeatureSchema, FeatureError> {
    let doc: SchemaDocument =
        serde_json::from_str(document).map_err(|e| FeatureError::Parse(e.to_string()))?;
    if doc.format != SCHEMA_FORMAT_VERSION {
        return Err(FeatureError::Parse(format!(
            "unsupported schema format {}",
            doc.format
        )));
    }
    let features = doc
        .features
        .into_iter()
        .map(FeatureDocument::into_descriptor)
        .collect::<Result<_, _>>()?;
    FeatureSchema::new(features)
}

pub fn save_schema(schema: &FeatureSchema) -> String {
    let doc = SchemaDocument {
        format: SCHEMA_FORMAT_VERSION,
        features: schema
            .features()
            .iter()
            .map(FeatureDocument::from_descriptor)
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("schema serializes")
}
