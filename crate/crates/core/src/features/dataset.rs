//! CSV datasets: a header row with the schema's feature names (any order), one record per row.
//!
//! Ordinal and categorical cells accept a label from the schema or a 1-based index;
//! binary cells accept `0`, `1`, `true` or `false`.

use std::io::{Read, Write};

use super::{FeatureError, FeatureKind, FeatureSchema, RawRecord};

fn dataset_err(e: impl std::fmt::Display) -> FeatureError {
    FeatureError::Dataset(e.to_string())
}

pub fn read_dataset<R: Read>(
    schema: &FeatureSchema,
    reader: R,
) -> Result<Vec<RawRecord>, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(dataset_err)?.clone();
    let mut column_of = vec![None; schema.len()];
    for (col, name) in headers.iter().enumerate() {
        let i = schema
            .index_of(name)
            .ok_or_else(|| FeatureError::UnknownFeature(name.to_string()))?;
        column_of[i] = Some(col);
    }
    let column_of = column_of
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| FeatureError::MissingFeature(schema.features()[i].name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(dataset_err)?;
        let values = schema
            .features()
            .iter()
            .zip(&column_of)
            .map(|(f, &col)| {
                let cell = rec.get(col).unwrap_or("");
                let parsed = match f.kind {
                    FeatureKind::Ordinal { .. } | FeatureKind::Categorical { .. } => {
                        f.level_index(cell).map(|v| v as f64)
                    }
                    FeatureKind::Binary => match cell.to_ascii_lowercase().as_str() {
                        "true" => Some(1.0),
                        "false" => Some(0.0),
                        other => other.parse().ok(),
                    },
                    _ => cell.parse().ok(),
                };
                parsed.ok_or_else(|| {
                    FeatureError::Dataset(format!(
                        "row {}: cannot parse `{cell}` for `{}`",
                        row + 1,
                        f.name
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RawRecord::new(values));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(
    schema: &FeatureSchema,
    records: &[RawRecord],
    writer: W,
) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.features().iter().map(|f| f.name.as_str()))
        .map_err(dataset_err)?;
    for r in records {
        let cells: Vec<String> = schema
            .features()
            .iter()
            .zip(&r.values)
            .map(|(f, &v)| match f.kind {
                FeatureKind::Ordinal { .. } | FeatureKind::Categorical { .. }
                    if !f.labels.is_empty() =>
                {
                    f.labels[(v as usize).saturating_sub(1).min(f.labels.len() - 1)].clone()
                }
                _ => v.to_string(),
            })
            .collect();
        wtr.write_record(&cells).map_err(dataset_err)?;
    }
    wtr.flush().map_err(dataset_err)
}
