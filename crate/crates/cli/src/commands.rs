use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use cfx_core::bounds::{
    interval_bounds, lp_tightened_bounds, relu_state, sample_bounds_check, InputBox, ReluState,
};
use cfx_core::encoder::FlipRule;
use cfx_core::features::{encode, EncodedPoint, FeatureSchema, RawRecord};
use cfx_core::milp;
use cfx_core::network::Label;
use cfx_core::oracle::{brute_force_nearest, grid_slack, GridSpec, OracleError};
use cfx_core::search::{
    generate_diverse, generate_mip_exp, generate_mip_obj, k_distance, k_diversity, objective_model,
    CfeQuery, CfeResult, CfeStatus, DiversityMetrics, SearchConfig,
};
use cfx_core::{BoundsTable, Network};

use crate::inputs::{
    config_error, ensure_writable, load_features, load_model, load_pair, load_rows, search_config,
    thread_pool, write_file,
};
use crate::report::{
    method_name, print_run, Aggregates, Checker, InstanceRecord, RunConfig, RunReport, ShellCounts,
};
use crate::{
    BoundsArgs, DataArgs, DiverseArgs, ExportArgs, GenerateArgs, Method, ModelArgs, OracleArgs,
    SearchArgs, Side,
};

/// A dataset row ready for explanation, or the reason it cannot be explained.
struct Factual {
    id: usize,
    raw: RawRecord,
    encoded: Result<EncodedPoint<f64>, String>,
}

fn wanted(side: Side, label: Label) -> bool {
    match side {
        Side::Any => true,
        Side::Negative => label == Label::Negative,
        Side::Positive => label == Label::Positive,
    }
}

/// Rows on the requested side. Rows that fail to encode are kept so they show up as failures.
fn select_rows(
    net: &Network,
    schema: &FeatureSchema,
    rows: Vec<RawRecord>,
    side: Side,
) -> Vec<Factual> {
    rows.into_iter()
        .enumerate()
        .filter_map(|(id, raw)| {
            let encoded = encode::<f64>(schema, &raw).map_err(|e| e.to_string());
            if let Ok(x) = &encoded {
                let label = net.predicted_label(&x.values).ok()?;
                if !wanted(side, label) {
                    return None;
                }
            }
            Some(Factual { id, raw, encoded })
        })
        .collect()
}

fn run_config(model: &ModelArgs, data: &DataArgs, search: &SearchArgs, method: &str) -> RunConfig {
    RunConfig {
        model: model.model.display().to_string(),
        schema: model.schema.display().to_string(),
        data: data.data.display().to_string(),
        method: method.to_string(),
        norm: search.norm,
        epsilon: search.epsilon,
        margin: search.margin,
        delta_div: None,
        k: None,
        side: data.side,
        seed: data.seed,
        jobs: data.jobs,
        timeout_s: search.timeout_s,
    }
}

fn emit(report: &RunReport, out: Option<&Path>, force: bool) -> Result<()> {
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(report).context("serializing report")?;
        write_file(path, &json, force)?;
    }
    print_run(report);
    Ok(())
}

/// Common part of one explained row: the query, or a failed record.
fn query<'a>(
    net: &'a Network,
    schema: &'a FeatureSchema,
    f: &Factual,
) -> Result<CfeQuery<'a>, InstanceRecord> {
    let fail = |reason: String| InstanceRecord::failed(f.id, f.raw.values.clone(), reason);
    let x = f.encoded.clone().map_err(fail)?;
    CfeQuery::new(net, schema, x).map_err(|e| fail(e.to_string()))
}

fn base_record(f: &Factual, q: &CfeQuery<'_>, results: &[CfeResult]) -> InstanceRecord {
    let mut shells = ShellCounts::default();
    results.iter().for_each(|r| shells.add(r));
    InstanceRecord {
        id: f.id,
        factual: f.raw.values.clone(),
        output: q.net.output(&q.factual.values).ok(),
        target: Some(q.target),
        status: CfeStatus::NoCounterfactualInBox,
        distance: None,
        wall_time_s: results.iter().map(|r| r.wall_time.as_secs_f64()).sum(),
        shells,
        nodes: results.iter().map(CfeResult::nodes).sum(),
        counterfactuals: Vec::new(),
        diversity: None,
    }
}

fn explain(
    checker: &Checker<'_>,
    cfg: &SearchConfig,
    method: Method,
    f: &Factual,
) -> InstanceRecord {
    let q = match query(checker.net, checker.schema, f) {
        Ok(q) => q,
        Err(rec) => return rec,
    };
    let result = match method {
        Method::MipObj => generate_mip_obj(&q, cfg),
        Method::MipExp => generate_mip_exp(&q, cfg),
    };
    let r = match result {
        Ok(r) => r,
        Err(e) => return InstanceRecord::failed(f.id, f.raw.values.clone(), e.to_string()),
    };
    let mut rec = base_record(f, &q, std::slice::from_ref(&r));
    rec.status = r.status.clone();
    if r.status == CfeStatus::Found {
        let point = r.point.as_ref().expect("found result has a point");
        match checker.revalidate(&q.factual, q.target, point, r.distance.unwrap_or(f64::NAN)) {
            Ok(c) => {
                rec.distance = Some(c.distance);
                rec.counterfactuals.push(c);
            }
            Err(reason) => rec.status = CfeStatus::Failed(reason),
        }
    }
    rec
}

pub fn generate(args: &GenerateArgs) -> Result<bool> {
    let (net, schema) = load_pair(&args.model)?;
    let cfg = search_config(&args.search, false)?;
    if let Some(out) = &args.output.out {
        ensure_writable(out, args.output.force)?;
    }
    let rows = select_rows(
        &net,
        &schema,
        load_rows(&schema, &args.data.data)?,
        args.data.side,
    );
    let checker = Checker {
        net: &net,
        schema: &schema,
        margin: cfg.margin,
        norm: cfg.norm,
    };
    let instances: Vec<InstanceRecord> = thread_pool(args.data.jobs)?.install(|| {
        rows.par_iter()
            .map(|f| explain(&checker, &cfg, args.method, f))
            .collect()
    });
    let report = RunReport {
        command: "generate".into(),
        config: run_config(
            &args.model,
            &args.data,
            &args.search,
            method_name(args.method),
        ),
        aggregates: Aggregates::from_records(&instances, cfg.norm, false),
        instances,
    };
    emit(&report, args.output.out.as_deref(), args.output.force)?;
    Ok(true)
}

fn explain_diverse(
    checker: &Checker<'_>,
    cfg: &SearchConfig,
    k: usize,
    f: &Factual,
) -> InstanceRecord {
    let q = match query(checker.net, checker.schema, f) {
        Ok(q) => q,
        Err(rec) => return rec,
    };
    let results = match generate_diverse(&q, k, cfg) {
        Ok(r) => r,
        Err(e) => return InstanceRecord::failed(f.id, f.raw.values.clone(), e.to_string()),
    };
    let mut rec = base_record(f, &q, &results);
    for r in &results {
        match &r.status {
            CfeStatus::Found => {
                let point = r.point.as_ref().expect("found result has a point");
                match checker.revalidate(
                    &q.factual,
                    q.target,
                    point,
                    r.distance.unwrap_or(f64::NAN),
                ) {
                    Ok(c) => rec.counterfactuals.push(c),
                    Err(reason) => {
                        rec.status = CfeStatus::Failed(reason);
                        break;
                    }
                }
            }
            other => {
                rec.status = other.clone();
                break;
            }
        }
    }
    if !rec.counterfactuals.is_empty() {
        rec.status = CfeStatus::Found;
        rec.distance = Some(rec.counterfactuals[0].distance);
    }
    let points: Vec<EncodedPoint<f64>> = rec
        .counterfactuals
        .iter()
        .map(|c| EncodedPoint::new(c.encoded.clone()))
        .collect();
    rec.diversity = Some(DiversityMetrics {
        k_diversity: k_diversity(checker.schema, &points, checker.norm).ok(),
        k_distance: k_distance(checker.schema, &points, &q.factual, checker.norm).ok(),
    });
    rec
}

pub fn diverse(args: &DiverseArgs) -> Result<bool> {
    let (net, schema) = load_pair(&args.model)?;
    let mut cfg = search_config(&args.search, false)?;
    cfg.delta_div = args.delta_div;
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    if args.k == 0 {
        return Err(config_error("--k must be at least 1"));
    }
    if let Some(out) = &args.output.out {
        ensure_writable(out, args.output.force)?;
    }
    let rows = select_rows(
        &net,
        &schema,
        load_rows(&schema, &args.data.data)?,
        args.data.side,
    );
    let checker = Checker {
        net: &net,
        schema: &schema,
        margin: cfg.margin,
        norm: cfg.norm,
    };
    let instances: Vec<InstanceRecord> = thread_pool(args.data.jobs)?.install(|| {
        rows.par_iter()
            .map(|f| explain_diverse(&checker, &cfg, args.k, f))
            .collect()
    });
    let mut config = run_config(&args.model, &args.data, &args.search, "diverse");
    config.delta_div = Some(args.delta_div);
    config.k = Some(args.k);
    let report = RunReport {
        command: "diverse".into(),
        config,
        aggregates: Aggregates::from_records(&instances, cfg.norm, true),
        instances,
    };
    emit(&report, args.output.out.as_deref(), args.output.force)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct NeuronBounds {
    name: String,
    layer: usize,
    neuron: usize,
    interval: [f64; 2],
    lp: [f64; 2],
    interval_state: ReluState,
    lp_state: ReluState,
}

#[derive(Debug, Serialize)]
struct BoundsReport {
    lower: Vec<f64>,
    upper: Vec<f64>,
    neurons: Vec<NeuronBounds>,
    samples: usize,
    interval_violations: usize,
    lp_violations: usize,
}

fn neuron_rows(interval: &BoundsTable, lp: &BoundsTable) -> Vec<NeuronBounds> {
    let mut out = Vec::new();
    for (i, (a, b)) in interval.layers.iter().zip(&lp.layers).enumerate() {
        for j in 0..a.width() {
            let (il, iu) = a.pre(j);
            let (ll, lu) = b.pre(j);
            out.push(NeuronBounds {
                name: format!("z{}", out.len() + 1),
                layer: i + 1,
                neuron: j + 1,
                interval: [il, iu],
                lp: [ll, lu],
                interval_state: relu_state(a.activation, il, iu),
                lp_state: relu_state(b.activation, ll, lu),
            });
        }
    }
    out
}

/// Six decimals, with LP noise around zero printed as zero.
fn interval_text([l, u]: [f64; 2]) -> String {
    let clean = |v: f64| if v.abs() < 5e-7 { 0.0 } else { v };
    format!("[{:.6}, {:.6}]", clean(l), clean(u))
}

pub fn bounds(args: &BoundsArgs) -> Result<bool> {
    let net = load_model(&args.model)?;
    let input = match (&args.schema, &args.point) {
        (Some(path), None) => {
            let schema = load_features(path)?;
            if schema.encoded_dim() != net.input_dim() {
                return Err(config_error(format!(
                    "model takes {} inputs but the schema encodes to {}",
                    net.input_dim(),
                    schema.encoded_dim()
                )));
            }
            InputBox::from_schema(&schema)
        }
        (None, Some(x)) => InputBox::point(x).map_err(|e| config_error(e.to_string()))?,
        _ => {
            return Err(config_error(
                "pass --schema or --point to define the input box",
            ))
        }
    };
    if input.dim() != net.input_dim() {
        return Err(config_error(format!(
            "model takes {} inputs, the box has {}",
            net.input_dim(),
            input.dim()
        )));
    }
    if let Some(out) = &args.output.out {
        ensure_writable(out, args.output.force)?;
    }
    let interval = interval_bounds(&net, &input).context("interval bounds")?;
    let lp = lp_tightened_bounds(&net, &input, &[]).context("LP-tightened bounds")?;
    let neurons = neuron_rows(&interval, &lp);
    let (iv, lv) = if args.samples > 0 {
        (
            sample_bounds_check(&net, &input, &interval, args.samples, args.seed).len(),
            sample_bounds_check(&net, &input, &lp, args.samples, args.seed).len(),
        )
    } else {
        (0, 0)
    };
    let report = BoundsReport {
        lower: input.lower.clone(),
        upper: input.upper.clone(),
        neurons,
        samples: args.samples,
        interval_violations: iv,
        lp_violations: lv,
    };
    if let Some(out) = &args.output.out {
        write_file(
            out,
            &serde_json::to_string_pretty(&report)?,
            args.output.force,
        )?;
    }
    println!(
        "{:>6}  {:>5}  {:>26}  {:>26}",
        "neuron", "layer", "interval", "lp-tightened"
    );
    for n in &report.neurons {
        println!(
            "{:>6}  {:>5}  {:>26}  {:>26}",
            n.name,
            n.layer,
            interval_text(n.interval),
            interval_text(n.lp)
        );
    }
    if args.samples > 0 {
        println!();
        println!(
            "{} samples: {iv} outside interval bounds, {lv} outside lp-tightened bounds",
            args.samples
        );
    }
    Ok(true)
}

pub fn export_lp(args: &ExportArgs) -> Result<bool> {
    let (net, schema) = load_pair(&args.model)?;
    let cfg = search_config(&args.search, true)?;
    ensure_writable(&args.out, args.force)?;
    let rows = load_rows(&schema, &args.data)?;
    let raw = rows.get(args.row).ok_or_else(|| {
        config_error(format!(
            "row {} is out of range ({} rows)",
            args.row,
            rows.len()
        ))
    })?;
    let x =
        encode::<f64>(&schema, raw).map_err(|e| config_error(format!("row {}: {e}", args.row)))?;
    let q = CfeQuery::new(&net, &schema, x)
        .map_err(|e| config_error(format!("row {}: {e}", args.row)))?;
    let Some(model) = objective_model(&q, &cfg).context("building the model")? else {
        println!(
            "row {}: no counterfactual exists in the input box; nothing written",
            args.row
        );
        return Ok(true);
    };
    write_file(&args.out, &milp::export_lp(&model), args.force)?;
    println!(
        "wrote {} ({} variables, {} constraints, {} integer)",
        args.out.display(),
        model.num_vars(),
        model.num_constraints(),
        model.integers().count()
    );
    if !model.quadratic_objective.is_empty() {
        eprintln!("note: the l2 objective is quadratic; the built-in solver cannot optimize it, use an external MIQP solver");
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
struct OracleRecord {
    id: usize,
    verdict: Verdict,
    method_status: Option<CfeStatus>,
    method_distance: Option<f64>,
    oracle_distance: Option<f64>,
    /// Largest method distance that still passes.
    allowed: Option<f64>,
    reason: Option<String>,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    command: String,
    config: RunConfig,
    samples: usize,
    grid_cap: usize,
    slack: f64,
    instances: Vec<OracleRecord>,
    passed: usize,
    failed: usize,
    skipped: usize,
}

fn check_one(
    net: &Network,
    schema: &FeatureSchema,
    cfg: &SearchConfig,
    method: Method,
    grid: GridSpec,
    f: &Factual,
) -> OracleRecord {
    let mut rec = OracleRecord {
        id: f.id,
        verdict: Verdict::Fail,
        method_status: None,
        method_distance: None,
        oracle_distance: None,
        allowed: None,
        reason: None,
    };
    let q = match query(net, schema, f) {
        Ok(q) => q,
        Err(r) => {
            rec.verdict = Verdict::Skip;
            rec.reason = match r.status {
                CfeStatus::Failed(reason) => Some(reason),
                _ => None,
            };
            return rec;
        }
    };
    let oracle = match brute_force_nearest(
        net,
        schema,
        &q.factual,
        FlipRule::new(q.target, cfg.margin),
        cfg.norm,
        grid,
    ) {
        Ok(h) => h,
        Err(e @ OracleError::TooLarge { .. }) => {
            rec.verdict = Verdict::Skip;
            rec.reason = Some(e.to_string());
            return rec;
        }
        Err(e) => {
            rec.reason = Some(e.to_string());
            return rec;
        }
    };
    rec.oracle_distance = oracle.as_ref().map(|h| h.distance);
    let result = match method {
        Method::MipObj => generate_mip_obj(&q, cfg),
        Method::MipExp => generate_mip_exp(&q, cfg),
    };
    let r = match result {
        Ok(r) => r,
        Err(e) => {
            rec.reason = Some(e.to_string());
            return rec;
        }
    };
    rec.method_status = Some(r.status.clone());
    rec.method_distance = r.distance;
    let slack = grid_slack(schema, cfg.norm, &grid);
    let (verdict, reason) = match (&r.status, &oracle) {
        (CfeStatus::Found, Some(h)) => {
            let allowed = h.distance + cfg.epsilon + slack;
            rec.allowed = Some(allowed);
            let d = r.distance.unwrap_or(f64::INFINITY);
            if d <= allowed + 1e-9 {
                (Verdict::Pass, None)
            } else {
                (
                    Verdict::Fail,
                    Some(format!(
                        "method distance {d} exceeds oracle bound {allowed}"
                    )),
                )
            }
        }
        (CfeStatus::Found, None) => (Verdict::Pass, Some("grid holds no flipped point".into())),
        (CfeStatus::NoCounterfactualInBox, None) => (Verdict::Pass, None),
        (CfeStatus::NoCounterfactualInBox, Some(h)) => (
            Verdict::Fail,
            Some(format!(
                "method found nothing; oracle found distance {}",
                h.distance
            )),
        ),
        (CfeStatus::Failed(reason), _) => (Verdict::Fail, Some(reason.clone())),
    };
    rec.verdict = verdict;
    rec.reason = reason;
    rec
}

/// Returns `false` when any instance fails.
pub fn oracle_check(args: &OracleArgs) -> Result<bool> {
    let (net, schema) = load_pair(&args.model)?;
    let cfg = search_config(&args.search, false)?;
    if args.samples < 2 {
        return Err(config_error("--samples must be at least 2"));
    }
    if let Some(out) = &args.output.out {
        ensure_writable(out, args.output.force)?;
    }
    let grid = GridSpec::new(args.samples).with_cap(args.grid_cap);
    let rows = select_rows(
        &net,
        &schema,
        load_rows(&schema, &args.data.data)?,
        args.data.side,
    );
    let instances: Vec<OracleRecord> = thread_pool(args.data.jobs)?.install(|| {
        rows.par_iter()
            .map(|f| check_one(&net, &schema, &cfg, args.method, grid, f))
            .collect()
    });
    let count = |v: Verdict| instances.iter().filter(|r| r.verdict == v).count();
    let report = OracleReport {
        command: "oracle-check".into(),
        config: run_config(
            &args.model,
            &args.data,
            &args.search,
            method_name(args.method),
        ),
        samples: args.samples,
        grid_cap: args.grid_cap,
        slack: grid_slack(&schema, cfg.norm, &grid),
        passed: count(Verdict::Pass),
        failed: count(Verdict::Fail),
        skipped: count(Verdict::Skip),
        instances,
    };
    if let Some(out) = &args.output.out {
        write_file(
            out,
            &serde_json::to_string_pretty(&report)?,
            args.output.force,
        )?;
    }
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |d| format!("{d:.6}"));
    println!(
        "{:>5}  {:>7}  {:>10}  {:>10}  {:>10}  note",
        "row", "verdict", "method", "oracle", "allowed"
    );
    for r in &report.instances {
        println!(
            "{:>5}  {:>7}  {:>10}  {:>10}  {:>10}  {}",
            r.id,
            format!("{:?}", r.verdict).to_lowercase(),
            opt(r.method_distance),
            opt(r.oracle_distance),
            opt(r.allowed),
            r.reason.as_deref().unwrap_or("")
        );
    }
    println!();
    println!(
        "passed {}  failed {}  skipped {}",
        report.passed, report.failed, report.skipped
    );
    Ok(report.failed == 0)
}
