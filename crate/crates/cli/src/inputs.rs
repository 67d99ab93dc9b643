//! Loading and validating everything a command needs before it runs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use cfx_core::features::{load_schema, read_dataset, FeatureSchema, Norm, RawRecord};
use cfx_core::network::load_network;
use cfx_core::search::SearchConfig;
use cfx_core::Network;

use crate::{ModelArgs, SearchArgs};

/// Default solver tolerances, as `key=value` pairs (see `MilpOptions::apply_overrides`).
pub const TOLERANCE_ENV: &str = "CFX_SOLVER_TOLERANCES";

/// A problem with the command line or its input files. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<Network> {
    load_network(&read(path)?).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn load_features(path: &Path) -> Result<FeatureSchema> {
    load_schema(&read(path)?).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Network and schema, checked against each other.
pub fn load_pair(args: &ModelArgs) -> Result<(Network, FeatureSchema)> {
    let net = load_model(&args.model)?;
    let schema = load_features(&args.schema)?;
    if net.input_dim() != schema.encoded_dim() {
        return Err(config_error(format!(
            "model takes {} inputs but the schema encodes to {}",
            net.input_dim(),
            schema.encoded_dim()
        )));
    }
    Ok((net, schema))
}

pub fn load_rows(schema: &FeatureSchema, path: &Path) -> Result<Vec<RawRecord>> {
    let file = fs::File::open(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    read_dataset(schema, file).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Search settings from the flags, with solver tolerances from the environment.
pub fn search_config(args: &SearchArgs, allow_l2: bool) -> Result<SearchConfig> {
    let mut cfg = SearchConfig {
        epsilon: args.epsilon,
        norm: args.norm,
        margin: args.margin,
        ..SearchConfig::default()
    };
    if let Ok(spec) = std::env::var(TOLERANCE_ENV) {
        cfg.solver
            .apply_overrides(&spec)
            .map_err(|e| config_error(format!("{TOLERANCE_ENV}: {e}")))?;
    }
    if !(args.timeout_s >= 0.0 && args.timeout_s.is_finite()) {
        return Err(config_error(format!(
            "--timeout-s {} must be a non-negative number",
            args.timeout_s
        )));
    }
    cfg.time_limit = (args.timeout_s > 0.0).then(|| Duration::from_secs_f64(args.timeout_s));
    let mut check = cfg.clone();
    if allow_l2 && check.norm == Norm::L2 {
        check.norm = Norm::L1;
    }
    check.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")
}

pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(config_error(format!(
            "{} exists; pass --force to overwrite it",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_file(path: &Path, contents: &str, force: bool) -> Result<()> {
    ensure_writable(path, force)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
