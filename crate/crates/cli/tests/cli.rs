use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ntcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntcp")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TOY: &str = "\
id,x,y,g1,g2,g3,g4
a,0,0,1,0.6,0.2,0
b,1,1,1,0.9,0.7,0.3
c,0,1,1,0.8,0.5,0.1
";

struct Case {
    dir: tempfile::TempDir,
}

impl Case {
    /// Temporary folder holding `cohort.csv` and `config.json`.
    fn new(cohort: &str, config: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cohort.csv"), cohort).unwrap();
        let mut cfg = json!({
            "input": "cohort.csv",
            "grid": { "n_bins": 4, "d_min": 0.0, "d_max": 40.0 },
            "mcmc": { "iterations": 200, "burn_in": 100, "surface_steps": 2 },
            "seed": 3
        });
        merge(&mut cfg, config);
        std::fs::write(dir.path().join("config.json"), cfg.to_string()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Output {
        let config = self.path("config.json");
        let out = self.path(out);
        let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        ntcp(&args)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Every file the manifest lists exists with the recorded size.
fn check_manifest(out: &Path) -> Vec<String> {
    let m = read_json(out.join("manifest.json"));
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let path = f["path"].as_str().unwrap().to_string();
            let len = std::fs::metadata(out.join(&path)).unwrap().len();
            assert_eq!(len, f["bytes"].as_u64().unwrap(), "{path}");
            path
        })
        .collect()
}

#[test]
fn fit_writes_declared_files() {
    let case = Case::new(TOY, json!({}));
    let o = case.run("fit", "fit", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let files = check_manifest(&case.path("fit"));
    for f in ["resolved_config.json", "fit_summary.json", "draws.jsonl", "metrics.json", "surface.csv"] {
        assert!(files.iter().any(|p| p == f), "{f} missing from {files:?}");
    }
    let surface = std::fs::read_to_string(case.path("fit/surface.csv")).unwrap();
    assert!(surface.starts_with("d_gy,volume,lambda,ntcp\n"));
    assert_eq!(surface.lines().count(), 1 + 4 * 21);
    let summary = read_json(case.path("fit/fit_summary.json"));
    assert_eq!(summary["family"], "bivariable_monotone");
    assert_eq!(summary["retained_draws"], 100);
}

#[test]
fn grid_mismatch_exits_2_naming_both_counts() {
    let case = Case::new(TOY, json!({ "grid": { "n_bins": 5 } }));
    let o = case.run("fit", "fit", &[]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("4 volume columns") && err.contains("5 dose bins"), "{err}");
    assert!(!case.path("fit/manifest.json").exists());
}

#[test]
fn bad_configs_exit_2() {
    let case = Case::new(TOY, json!({ "modle": {} }));
    assert_eq!(code(&case.run("fit", "a", &[])), 2);
    let case = Case::new(TOY, json!({ "mcmc": { "iterations": 10, "burn_in": 10 } }));
    assert_eq!(code(&case.run("fit", "a", &[])), 2);
    let case = Case::new(TOY, json!({ "model": { "covariates": ["age"] } }));
    assert_eq!(code(&case.run("fit", "a", &[])), 2);
    let case = Case::new(TOY, json!({}));
    assert_eq!(code(&case.run("bootstrap", "a", &[])), 2, "bootstrap without an intervention");
    assert_eq!(code(&case.run("simulate", "a", &[])), 2, "simulate without a design");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let case = Case::new(TOY, json!({}));
    for out in ["a", "b"] {
        assert_eq!(code(&case.run("fit", out, &[])), 0);
    }
    let a = std::fs::read(case.path("a/fit_summary.json")).unwrap();
    assert_eq!(a, std::fs::read(case.path("b/fit_summary.json")).unwrap());
    assert_eq!(
        std::fs::read(case.path("a/draws.jsonl")).unwrap(),
        std::fs::read(case.path("b/draws.jsonl")).unwrap()
    );
    assert_eq!(code(&case.run("fit", "c", &["--seed", "4"])), 0);
    assert_ne!(a, std::fs::read(case.path("c/fit_summary.json")).unwrap());
}

#[test]
fn identity_and_full_truncation_agree() {
    let identity = Case::new(TOY, json!({ "intervention": { "kind": { "type": "identity", "d_bin": 2 } } }));
    let full = Case::new(TOY, json!({ "intervention": { "kind": { "type": "truncate_upper", "d_bin": 2, "q": 1.0 } } }));
    let mut values = Vec::new();
    for case in [&identity, &full] {
        let o = case.run("estimate", "est", &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let e = read_json(case.path("est/estimands.json"));
        assert_eq!(e["stochastic"]["risk_ratio"], 1.0);
        values.push(e["stochastic"]["ntcp"].clone());
        check_manifest(&case.path("est"));
    }
    assert_eq!(values[0], values[1]);
    assert_eq!(
        std::fs::read(identity.path("est/pointwise.csv")).unwrap(),
        std::fs::read(full.path("est/pointwise.csv")).unwrap()
    );
}

#[test]
fn estimate_reuses_a_saved_fit() {
    let case = Case::new(TOY, json!({ "intervention": { "kind": { "type": "truncate_upper", "d_bin": 3, "q": 0.6 } } }));
    assert_eq!(code(&case.run("fit", "fit", &[])), 0);
    let fit_dir = case.path("fit");
    let o = case.run("estimate", "saved", &["--fit", fit_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&case.run("estimate", "inline", &[])), 0);
    assert_eq!(
        std::fs::read(case.path("saved/estimands.json")).unwrap(),
        std::fs::read(case.path("inline/estimands.json")).unwrap()
    );
    let manifest = read_json(case.path("saved/manifest.json"));
    let inputs: Vec<&str> = manifest["inputs"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert!(inputs.iter().any(|p| p.ends_with("draws.jsonl")));
}

#[test]
fn strict_positivity_exits_4() {
    let cfg = json!({
        "intervention": { "kind": { "type": "truncate_upper", "d_bin": 3, "q": 0.3 } },
        "estimator": { "positivity_threshold": 1.5 }
    });
    let case = Case::new(TOY, cfg);
    let o = case.run("estimate", "est", &["--strict-positivity"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!case.path("est/manifest.json").exists());
    let o = case.run("estimate", "est", &[]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("positivity"));
}

#[test]
fn bootstrap_smoke_is_ordered_and_deterministic() {
    let cfg = json!({
        "intervention": { "kind": { "type": "truncate_upper", "d_bin": 3, "q": 0.6 } },
        "bootstrap": { "n_boot": 10 }
    });
    let case = Case::new(TOY, cfg);
    for out in ["a", "b"] {
        let o = case.run("bootstrap", out, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let b = read_json(case.path("a/bootstrap.json"));
    for ci in ["ntcp_ci", "observed_ntcp_ci", "risk_ratio_ci"] {
        assert!(b[ci]["lower"].as_f64().unwrap() <= b[ci]["upper"].as_f64().unwrap(), "{ci}");
    }
    let reps = std::fs::read_to_string(case.path("a/replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 11);
    for f in ["bootstrap.json", "replicates.csv"] {
        assert_eq!(std::fs::read(case.path(&format!("a/{f}"))).unwrap(), std::fs::read(case.path(&format!("b/{f}"))).unwrap());
    }
    assert_eq!(code(&case.run("bootstrap", "c", &["--workers", "3"])), 0);
    assert_eq!(
        std::fs::read(case.path("a/bootstrap.json")).unwrap(),
        std::fs::read(case.path("c/bootstrap.json")).unwrap()
    );
}

#[test]
fn simulate_smoke_reuses_truth_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = json!({
        "mcmc": {},
        "simulate": {
            "design": { "design": "sim1" },
            "experiment": { "replicates": 2, "n": 100, "mcmc": { "iterations": 200, "burn_in": 100 } },
            "cache_dir": cache,
            "write_cohorts": true
        },
        "seed": 1
    });
    let config = dir.path().join("sim.json");
    std::fs::write(&config, cfg.to_string()).unwrap();
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let out = dir.path().join(out);
        let o = ntcp(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        runs.push(stderr(&o));
        check_manifest(&out);
    }
    assert!(runs[0].contains("computing") && runs[1].contains("cache hit"), "{runs:?}");
    let table = std::fs::read_to_string(dir.path().join("a/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(dir.path().join("a/cohorts/replicate_0002.csv").exists());
    for f in ["table.csv", "grid.csv", "report.json", "truth.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn export_contours_from_saved_fit() {
    let case = Case::new(TOY, json!({ "contour_grid": { "n_d": 11, "n_g": 6 } }));
    assert_eq!(code(&case.run("fit", "fit", &[])), 0);
    let fit_dir = case.path("fit");
    let o = case.run("export-contours", "contours", &["--fit", fit_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(case.path("contours/contours.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 11 * 6);
    assert!(text.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn print_schema_is_json() {
    let o = ntcp(&["--print-schema"]);
    assert_eq!(code(&o), 0);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema["properties"]["simulate"].is_object());
}
