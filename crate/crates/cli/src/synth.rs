//! Seeded synthetic rows drawn uniformly from a schema's domain.

use anyhow::{Context, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use cfx_core::features::{encode, write_dataset, FeatureKind, FeatureSchema, RawRecord};
use cfx_core::Network;

use crate::inputs::{config_error, ensure_writable, load_features, load_model};
use crate::{Side, SynthArgs};

/// Draws per accepted row before giving up on a side filter.
const MAX_DRAWS_PER_ROW: usize = 1000;

pub fn sample_row(schema: &FeatureSchema, rng: &mut impl Rng) -> RawRecord {
    let values = schema
        .features()
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Real { lb, ub } => {
                let v: f64 = rng.gen_range(lb..=ub);
                ((v * 1e4).round() / 1e4).clamp(lb, ub)
            }
            FeatureKind::Integer { lb, ub } => rng.gen_range(lb..=ub) as f64,
            FeatureKind::Binary => rng.gen_range(0..=1) as f64,
            FeatureKind::Ordinal { k } | FeatureKind::Categorical { k } => {
                rng.gen_range(1..=k) as f64
            }
        })
        .collect();
    RawRecord::new(values)
}

/// `rows` records; with a model and a side, only records the model puts on that side.
pub fn synthesize(
    schema: &FeatureSchema,
    filter: Option<(&Network, Side)>,
    rows: usize,
    seed: u64,
) -> Result<Vec<RawRecord>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rows);
    let mut draws = 0usize;
    while out.len() < rows {
        if draws
            >= rows
                .saturating_mul(MAX_DRAWS_PER_ROW)
                .max(MAX_DRAWS_PER_ROW)
        {
            return Err(config_error(format!(
                "only {} of {rows} draws landed on the requested side",
                out.len()
            )));
        }
        draws += 1;
        let r = sample_row(schema, &mut rng);
        if let Some((net, side)) = filter {
            let x = encode::<f64>(schema, &r).context("encoding a sampled row")?;
            let out = net.output(&x.values).context("evaluating a sampled row")?;
            let keep = match side {
                Side::Any => true,
                Side::Negative => out < 0.0,
                Side::Positive => out >= 0.0,
            };
            if !keep {
                continue;
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn run(args: &SynthArgs) -> Result<bool> {
    let schema = load_features(&args.schema)?;
    let net = args.model.as_deref().map(load_model).transpose()?;
    if let Some(n) = &net {
        if n.input_dim() != schema.encoded_dim() {
            return Err(config_error(format!(
                "model takes {} inputs but the schema encodes to {}",
                n.input_dim(),
                schema.encoded_dim()
            )));
        }
    } else if args.side != Side::Any {
        return Err(config_error("--side needs --model"));
    }
    ensure_writable(&args.out, args.force)?;
    let rows = synthesize(
        &schema,
        net.as_ref().map(|n| (n, args.side)),
        args.rows,
        args.seed,
    )?;
    let mut buf = Vec::new();
    write_dataset(&schema, &rows, &mut buf).context("writing rows")?;
    std::fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(true)
}
