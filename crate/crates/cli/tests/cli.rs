use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use cfx_core::features::{distance, encode, load_schema, read_dataset, EncodedPoint};
use cfx_core::milp::{import_lp, solve_milp, MilpOptions};

fn cfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(args)
        .env_remove("CFX_SOLVER_TOLERANCES")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cfx(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
        .display()
        .to_string()
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &str) -> String {
        let p = self.path(name);
        fs::write(&p, contents).unwrap();
        p.display().to_string()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }

    fn out(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

const UNIT_SQUARE: &str = r#"{"format": 1, "features": [
  {"name": "x1", "kind": "real", "lb": 0, "ub": 1},
  {"name": "x2", "kind": "real", "lb": 0, "ub": 1}]}"#;

/// `h = x1 + x2 - 1`: every point of the square can reach the other side.
const LINEAR: &str =
    r#"{"format": 1, "input_dim": 2, "layers": [{"weights": [[1, 1]], "biases": [-1]}]}"#;

const LINEAR_ROWS: &str = "x1,x2\n0.1,0.2\n0.3,0.3\n0.4,0.5\n0.05,0.05\n0.2,0.6\n0.9,0.8\n0.7,0.6\n0.55,0.5\n1,1\n0.6,0.9\n";

/// Positive below 0.2 and above 0.8 on one input.
const TWO_REGIONS: &str = r#"{"format": 1, "input_dim": 1, "layers": [
  {"weights": [[-1], [1]], "biases": [0.2, -0.8]},
  {"weights": [[10, 10]], "biases": [-0.01]}]}"#;

const UNIT_LINE: &str =
    r#"{"format": 1, "features": [{"name": "x", "kind": "real", "lb": 0, "ub": 1}]}"#;

fn linear_case() -> (Case, String, String, String) {
    let c = Case::new();
    let m = c.write("model.json", LINEAR);
    let s = c.write("schema.json", UNIT_SQUARE);
    let d = c.write("data.csv", LINEAR_ROWS);
    (c, m, s, d)
}

fn distances(report: &Value) -> Vec<Option<f64>> {
    report["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["distance"].as_f64())
        .collect()
}

/// Recomputes every counterfactual of a report against the schema and the margin rule.
fn revalidate(report: &Value, schema_path: &str, model: &cfx_core::Network, margin: f64) {
    let schema = load_schema(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let norm = report["config"]["norm"].as_str().unwrap().parse().unwrap();
    for inst in report["instances"].as_array().unwrap() {
        let factual: Vec<f64> = serde_json::from_value(inst["factual"].clone()).unwrap();
        let xf = encode::<f64>(&schema, &cfx_core::features::RawRecord::new(factual)).unwrap();
        for c in inst["counterfactuals"].as_array().unwrap() {
            let x = EncodedPoint::new(
                serde_json::from_value::<Vec<f64>>(c["encoded"].clone()).unwrap(),
            );
            assert!(cfx_core::features::validate_plausibility(&schema, &x).is_empty());
            assert!(cfx_core::features::validate_actionability(&schema, &x, &xf).is_empty());
            let out = model.output(&x.values).unwrap();
            match inst["target"].as_str().unwrap() {
                "positive" => assert!(out >= 0.0),
                _ => assert!(out <= -margin),
            }
            let d = distance(&schema, &x, &xf, norm).unwrap();
            assert!((d - c["distance"].as_f64().unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn generate_covers_a_linear_model_and_methods_agree() {
    let (c, m, s, d) = linear_case();
    let (obj, exp) = (c.out("obj.json"), c.out("exp.json"));
    let table = ok(&[
        "generate", "--model", &m, "--schema", &s, "--data", &d, "--out", &obj,
    ]);
    assert!(table.contains("coverage 100.0%"));
    ok(&[
        "generate", "--model", &m, "--schema", &s, "--data", &d, "--method", "mip-exp", "--out",
        &exp,
    ]);
    let (a, b) = (c.json("obj.json"), c.json("exp.json"));
    assert_eq!(a["aggregates"]["coverage"], 1.0);
    assert_eq!(b["aggregates"]["coverage"], 1.0);
    assert_eq!(a["instances"].as_array().unwrap().len(), 10);
    for (x, y) in distances(&a).into_iter().zip(distances(&b)) {
        assert!((x.unwrap() - y.unwrap()).abs() <= 0.02 + 1e-9);
    }
    let net = cfx_core::network::load_network(LINEAR).unwrap();
    revalidate(&a, &s, &net, 1e-6);
    revalidate(&b, &s, &net, 1e-6);

    // Aggregates recompute from the records.
    let found: Vec<f64> = distances(&a).into_iter().flatten().collect();
    let mean = found.iter().sum::<f64>() / found.len() as f64;
    assert!((a["aggregates"]["mean_distance"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn side_filter_and_empty_dataset() {
    let (c, m, s, d) = linear_case();
    ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--side",
        "negative",
        "--out",
        &c.out("n.json"),
    ]);
    let r = c.json("n.json");
    assert!(r["instances"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["target"] == "positive"));
    assert_eq!(r["aggregates"]["instances"], 5);

    let empty = c.write("empty.csv", "x1,x2\n");
    let table = ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &empty,
        "--out",
        &c.out("e.json"),
    ]);
    assert!(table.contains("coverage null"));
    let r = c.json("e.json");
    assert!(r["aggregates"]["coverage"].is_null());
    assert!(r["instances"].as_array().unwrap().is_empty());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let (c, m, s, _) = linear_case();
    let d = c.out("synth.csv");
    ok(&[
        "synth", "--schema", &s, "--rows", "24", "--seed", "5", "--out", &d,
    ]);
    let strip = |mut v: Value| {
        for i in v["instances"].as_array_mut().unwrap() {
            i["wall_time_s"] = Value::Null;
        }
        v["aggregates"]["mean_wall_time_s"] = Value::Null;
        v["config"]["jobs"] = Value::Null;
        v
    };
    ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--jobs",
        "1",
        "--out",
        &c.out("a.json"),
    ]);
    ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--jobs",
        "4",
        "--out",
        &c.out("b.json"),
    ]);
    assert_eq!(strip(c.json("a.json")), strip(c.json("b.json")));
}

#[test]
fn implausible_rows_fail_individually() {
    let (c, m, s, _) = linear_case();
    let d = c.write("bad.csv", "x1,x2\n0.1,0.2\n1.5,0.2\n");
    ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--out",
        &c.out("r.json"),
    ]);
    let r = c.json("r.json");
    assert_eq!(r["instances"][0]["status"]["kind"], "found");
    assert_eq!(r["instances"][1]["status"]["kind"], "failed");
    assert_eq!(r["aggregates"]["failed"], 1);
}

#[test]
fn diverse_sets_on_two_regions() {
    let c = Case::new();
    let m = c.write("model.json", TWO_REGIONS);
    let s = c.write("schema.json", UNIT_LINE);
    let d = c.write("data.csv", "x\n0.5\n");
    ok(&[
        "diverse",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--k",
        "2",
        "--out",
        &c.out("k2.json"),
    ]);
    let r = c.json("k2.json");
    let cf = r["instances"][0]["counterfactuals"].as_array().unwrap();
    assert_eq!(cf.len(), 2);
    let xs: Vec<f64> = cf
        .iter()
        .map(|c| c["encoded"][0].as_f64().unwrap())
        .collect();
    assert!((xs[0] - xs[1]).abs() >= 0.01 - 1e-6);
    assert!(
        xs.iter().any(|&x| x < 0.2) && xs.iter().any(|&x| x > 0.8),
        "{xs:?}"
    );
    let kd = r["instances"][0]["k_diversity"].as_f64().unwrap();
    assert!((kd - (xs[0] - xs[1]).abs()).abs() < 1e-9);
    revalidate(
        &r,
        &s,
        &cfx_core::network::load_network(TWO_REGIONS).unwrap(),
        1e-6,
    );

    ok(&[
        "diverse",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--k",
        "1",
        "--out",
        &c.out("k1.json"),
    ]);
    let r = c.json("k1.json");
    let inst = &r["instances"][0];
    assert!(inst["k_diversity"].is_null());
    assert_eq!(inst["k_distance"], inst["counterfactuals"][0]["distance"]);
    assert!(r["aggregates"]["mean_k_diversity"].is_null());
}

#[test]
fn larger_separation_never_lowers_k_distance() {
    let c = Case::new();
    let m = c.write("model.json", TWO_REGIONS);
    let s = c.write("schema.json", UNIT_LINE);
    let d = c.write("data.csv", "x\n0.5\n0.4\n");
    // A larger separation can drop the farthest member, so compare equal-size sets only.
    let mut last = [(0usize, 0.0); 2];
    for delta in ["0.01", "0.05", "0.1", "0.2", "0.3"] {
        let out = c.out(&format!("d{delta}.json"));
        ok(&[
            "diverse",
            "--model",
            &m,
            "--schema",
            &s,
            "--data",
            &d,
            "--k",
            "3",
            "--delta-div",
            delta,
            "--out",
            &out,
        ]);
        let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        for (i, inst) in r["instances"].as_array().unwrap().iter().enumerate() {
            let kd = inst["k_distance"].as_f64().unwrap();
            let n = inst["counterfactuals"].as_array().unwrap().len();
            if n == last[i].0 {
                assert!(
                    kd >= last[i].1 - 1e-9,
                    "delta {delta}: {kd} < {}",
                    last[i].1
                );
            }
            last[i] = (n, kd);
        }
    }
}

#[test]
fn bounds_of_the_cancelling_network() {
    let c = Case::new();
    let m = fixture("cancelling/model.json");
    let out = c.out("b.json");
    let table = ok(&[
        "bounds",
        "--model",
        &m,
        "--schema",
        &fixture("cancelling/schema.json"),
        "--samples",
        "2000",
        "--out",
        &out,
    ]);
    assert!(table.contains("[-6.000000, 6.000000]"));
    assert!(table.contains("[0.000000, 0.000000]"));
    let r = c.json("b.json");
    let z3 = &r["neurons"][2];
    assert_eq!(z3["name"], "z3");
    assert!((z3["interval"][0].as_f64().unwrap() + 6.0).abs() < 1e-6);
    assert!(
        z3["lp"][0].as_f64().unwrap().abs() < 1e-6 && z3["lp"][1].as_f64().unwrap().abs() < 1e-6
    );
    assert_eq!(r["interval_violations"], 0);
    assert_eq!(r["lp_violations"], 0);
    for n in r["neurons"].as_array().unwrap() {
        assert!(n["lp"][0].as_f64().unwrap() >= n["interval"][0].as_f64().unwrap() - 1e-6);
        assert!(n["lp"][1].as_f64().unwrap() <= n["interval"][1].as_f64().unwrap() + 1e-6);
    }

    let out = c.out("p.json");
    ok(&[
        "bounds",
        "--model",
        &fixture("three_input/model.json"),
        "--point",
        "0.2,-0.5,0.7",
        "--out",
        &out,
    ]);
    for n in c.json("p.json")["neurons"].as_array().unwrap() {
        for k in 0..2 {
            assert!(
                (n["lp"][k].as_f64().unwrap() - n["interval"][k].as_f64().unwrap()).abs() < 1e-9
            );
        }
    }
}

#[test]
fn export_round_trips_to_the_mip_obj_optimum() {
    let (c, m, s, d) = linear_case();
    let lp = c.out("row.lp");
    ok(&[
        "export-lp",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--row",
        "2",
        "--epsilon",
        "1e-4",
        "--out",
        &lp,
    ]);
    let model = import_lp(&fs::read_to_string(&lp).unwrap()).unwrap();
    let opt = solve_milp(&model, &MilpOptions::exact())
        .unwrap()
        .objective_value;
    ok(&[
        "generate",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--epsilon",
        "1e-4",
        "--out",
        &c.out("g.json"),
    ]);
    let d2 = c.json("g.json")["instances"][2]["distance"]
        .as_f64()
        .unwrap();
    assert!((opt - d2).abs() < 1e-4 + 1e-6, "{opt} vs {d2}");

    let again = cfx(&[
        "export-lp",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--out",
        &lp,
    ]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let l2 = cfx(&[
        "export-lp",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--norm",
        "l2",
        "--out",
        &lp,
        "--force",
    ]);
    assert!(l2.status.success());
    assert!(String::from_utf8_lossy(&l2.stderr).contains("quadratic"));
    let text = fs::read_to_string(&lp).unwrap();
    assert!(text.contains("^ 2"));
    assert!(import_lp(&text).unwrap().quadratic_objective.len() == 2);
}

#[test]
fn oracle_check_passes_and_skips() {
    let (c, m, s, d) = linear_case();
    for norm in ["l1", "linf", "l0"] {
        let out = cfx(&[
            "oracle-check",
            "--model",
            &m,
            "--schema",
            &s,
            "--data",
            &d,
            "--norm",
            norm,
            "--samples",
            "101",
        ]);
        assert!(
            out.status.success(),
            "{norm}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    let out = cfx(&[
        "oracle-check",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--grid-cap",
        "100",
        "--out",
        &c.out("o.json"),
    ]);
    assert!(out.status.success());
    let r = c.json("o.json");
    assert_eq!(r["skipped"], 10);
    assert!(r["instances"][0]["reason"]
        .as_str()
        .unwrap()
        .contains("cap"));

    let schema = fixture("compas_like/schema.json");
    let model = fixture("compas_like/model.json");
    let rows = c.out("compas.csv");
    ok(&[
        "synth", "--schema", &schema, "--rows", "3", "--seed", "2", "--out", &rows,
    ]);
    // Only the real feature is gridded; everything else is enumerated exactly.
    let out = cfx(&[
        "oracle-check",
        "--model",
        &model,
        "--schema",
        &schema,
        "--data",
        &rows,
        "--samples",
        "3",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success() || text.contains("skipped"), "{text}");
}

#[test]
fn oracle_check_is_exact_on_discrete_schemas() {
    let c = Case::new();
    let s = c.write(
        "schema.json",
        r#"{"format": 1, "features": [
          {"name": "grade", "kind": "ordinal", "levels": ["low", "mid", "high"]},
          {"name": "n", "kind": "integer", "lb": 0, "ub": 4},
          {"name": "flag", "kind": "binary"}]}"#,
    );
    let m = c.write(
        "model.json",
        r#"{"format": 1, "input_dim": 5, "layers": [
          {"weights": [[1, 1, 1, 0.5, -1], [0, -1, 0, 1, 2]], "biases": [-2, -1]},
          {"weights": [[1, -1]], "biases": [-0.25]}]}"#,
    );
    let d = c.write(
        "data.csv",
        "grade,n,flag\nlow,0,0\nmid,2,1\nhigh,4,0\nlow,3,1\n",
    );
    let out = cfx(&[
        "oracle-check",
        "--model",
        &m,
        "--schema",
        &s,
        "--data",
        &d,
        "--samples",
        "2",
        "--out",
        &c.out("o.json"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let r = c.json("o.json");
    assert_eq!(r["slack"], 0.0);
    for i in r["instances"].as_array().unwrap() {
        if let (Some(a), Some(b)) = (i["method_distance"].as_f64(), i["oracle_distance"].as_f64()) {
            assert!(a <= b + 0.01 + 1e-9);
        }
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let (c, m, s, d) = linear_case();
    let missing = c.out("nope.json");
    assert_eq!(
        cfx(&["generate", "--model", &missing, "--schema", &s, "--data", &d])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        cfx(&["generate", "--model", &m, "--schema", &s, "--data", &d, "--norm", "l2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        cfx(&[
            "generate",
            "--model",
            &m,
            "--schema",
            &s,
            "--data",
            &d,
            "--epsilon",
            "0"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        cfx(&["generate", "--model", &m, "--schema", &s, "--data", &d, "--norm", "l3"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(cfx(&["bounds", "--model", &m]).status.code(), Some(2));
    let wrong = c.write("wrong.json", UNIT_LINE);
    assert_eq!(
        cfx(&["generate", "--model", &m, "--schema", &wrong, "--data", &d])
            .status
            .code(),
        Some(2)
    );
    let bad_header = c.write("h.csv", "x1,zz\n0.1,0.2\n");
    assert_eq!(
        cfx(&[
            "generate",
            "--model",
            &m,
            "--schema",
            &s,
            "--data",
            &bad_header
        ])
        .status
        .code(),
        Some(2)
    );

    let env = Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(["generate", "--model", &m, "--schema", &s, "--data", &d])
        .env("CFX_SOLVER_TOLERANCES", "gap=oops")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
    let env = Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(["generate", "--model", &m, "--schema", &s, "--data", &d])
        .env("CFX_SOLVER_TOLERANCES", "gap=1e-8,feasibility=1e-8")
        .output()
        .unwrap();
    assert!(env.status.success());
}

#[test]
fn synth_is_seeded_and_respects_the_side_filter() {
    let c = Case::new();
    let s = fixture("compas_like/schema.json");
    let m = fixture("compas_like/model.json");
    let (a, b) = (c.out("a.csv"), c.out("b.csv"));
    ok(&[
        "synth", "--schema", &s, "--rows", "30", "--seed", "11", "--out", &a,
    ]);
    ok(&[
        "synth", "--schema", &s, "--rows", "30", "--seed", "11", "--out", &b,
    ]);
    assert_eq!(
        fs::read_to_string(&a).unwrap(),
        fs::read_to_string(&b).unwrap()
    );
    assert_eq!(
        cfx(&["synth", "--schema", &s, "--out", &a]).status.code(),
        Some(2)
    );

    ok(&[
        "synth", "--schema", &s, "--model", &m, "--side", "negative", "--rows", "15", "--out", &a,
        "--force",
    ]);
    let schema = load_schema(&fs::read_to_string(&s).unwrap()).unwrap();
    let net = cfx_core::network::load_network(&fs::read_to_string(&m).unwrap()).unwrap();
    let rows = read_dataset(&schema, fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(rows.len(), 15);
    for r in rows {
        let x = encode::<f64>(&schema, &r).unwrap();
        assert!(net.output(&x.values).unwrap() < 0.0);
    }
}

#[test]
fn shipped_compas_like_fixture_runs_end_to_end() {
    let c = Case::new();
    let s = fixture("compas_like/schema.json");
    let m = fixture("compas_like/model.json");
    let d = fixture("compas_like/data.csv");
    for method in ["mip-obj", "mip-exp"] {
        let out = c.out(&format!("{method}.json"));
        ok(&[
            "generate", "--model", &m, "--schema", &s, "--data", &d, "--method", method, "--out",
            &out,
        ]);
        let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(r["aggregates"]["failed"], 0, "{method}");
        revalidate(
            &r,
            &s,
            &cfx_core::network::load_network(&fs::read_to_string(&m).unwrap()).unwrap(),
            1e-6,
        );
    }
    let (a, b) = (c.json("mip-obj.json"), c.json("mip-exp.json"));
    for (x, y) in distances(&a).into_iter().zip(distances(&b)) {
        assert_eq!(x.is_some(), y.is_some());
        if let (Some(x), Some(y)) = (x, y) {
            assert!((x - y).abs() <= 0.02 + 1e-9);
        }
    }
}
