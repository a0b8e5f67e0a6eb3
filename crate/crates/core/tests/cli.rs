use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(config: &Value, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.with_extension("config.json");
    std::fs::write(&cfg, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_momentmap"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

fn p1_target() -> Value {
    json!({ "m": 2, "group": "traceless_torus", "space": { "kind": "projective" } })
}

fn small_config() -> Value {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    json!({
        "seed": 11,
        "scenarios": [
            {
                "command": "psi",
                "name": "p1",
                "target": p1_target(),
                "inputs": {
                    "points": [[[[h, 0.0]], [[h, 0.0]]]],
                    "generators": [[[[0.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, -1.0]]]]
                }
            },
            {
                "command": "moment",
                "name": "flag-moments",
                "target": { "m": 3, "space": { "kind": "flag", "ranks": [1, 2], "taus": [1.0, 0.5] } },
                "inputs": { "random_points": 2, "random_generators": 2 }
            },
            {
                "command": "stability",
                "name": "grassmann",
                "target": { "m": 4, "group": "traceless_torus", "space": { "kind": "grassmann", "k": 2, "tau": 1.0 } },
                "inputs": { "random_points": 2 }
            },
            {
                "command": "filt",
                "name": "rank2",
                "instances": [{
                    "bundle": { "rank": 2, "degree": 0 },
                    "filtration": { "steps": [{ "rank": 1, "degree": -1, "tau": "1" }] }
                }],
                "bounds": { "ambient_semistable": true, "pin_members": true }
            },
            {
                "command": "vortex",
                "name": "flat",
                "lattice": { "n": 16, "l": 4.0 },
                "d": 0,
                "c": 0.5,
                "refinement": [16, 32],
                "dump": true
            }
        ]
    })
}

#[test]
fn psi_and_filt_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&small_config(), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let sc = r["scenarios"].as_array().unwrap();
    assert_eq!(sc.len(), 5);

    let psi = sc[0]["result"]["rows"][0]["value"].as_f64().unwrap();
    let closed = 0.5 * (2.0f64).cosh().ln();
    assert!((psi - closed).abs() < 1e-9, "{psi} vs {closed}");
    assert!(out.join("p1_lambda.csv").exists());

    assert_eq!(sc[3]["result"]["rows"][0]["verdict"], "strict_pass");
    assert_eq!(sc[3]["result"]["rows"][0]["equivalence"]["holds"], true);

    let v = &sc[4]["result"];
    assert_eq!(v["outcome"], "solution");
    assert!(v["residuals"]["equation"].as_f64().unwrap() < 1e-12);
    assert!(out.join("flat_state.bin").exists() && out.join("flat_state.json").exists());
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&small_config(), &a, &["--jobs", "1"]).status.success());
    assert!(run(&small_config(), &b, &["--jobs", "4"]).status.success());
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    assert_eq!(ra, rb);

    let c = dir.path().join("c");
    assert!(run(&small_config(), &c, &["--seed", "12"]).status.success());
    assert_ne!(ra, std::fs::read(c.join("report.json")).unwrap());
}

#[test]
fn empty_scenario_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = run(&json!({ "scenarios": [] }), &out, &[]);
    assert!(o.status.success());
    assert_eq!(report(&out)["scenarios"], json!([]));
}

fn error_of(o: &Output) -> Value {
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    let v: Value = serde_json::from_str(line.trim()).expect("error is JSON");
    v["error"].clone()
}

#[test]
fn validation_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");

    let o = run(&json!({ "scenarios": [], "extra": true }), &out, &[]);
    assert_eq!(error_of(&o)["kind"], "config");
    assert_eq!(o.status.code(), Some(2));

    let unknown = json!({ "scenarios": [{
        "command": "psi", "name": "x", "target": p1_target(), "quad": 1.0
    }]});
    assert_eq!(error_of(&run(&unknown, &out, &[]))["kind"], "config");

    let bad_target = json!({ "scenarios": [{
        "command": "moment", "name": "x",
        "target": { "m": 3, "space": { "kind": "grassmann", "k": 4, "tau": 1.0 } }
    }]});
    let e = error_of(&run(&bad_target, &out, &[]));
    assert_eq!(e["kind"], "validation");
    assert_eq!(e["scenario"], "x");

    let not_skew = json!({ "scenarios": [{
        "command": "moment", "name": "y", "target": p1_target(),
        "inputs": { "random_points": 1, "generators": [[[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]] }
    }]});
    let e = error_of(&run(&not_skew, &out, &[]));
    assert_eq!(e["scenario"], "y");

    let small_lattice = json!({ "scenarios": [{
        "command": "vortex", "name": "z", "lattice": { "n": 4, "l": 1.0 }, "d": 0, "c": 1.0
    }]});
    assert_eq!(error_of(&run(&small_lattice, &out, &[]))["kind"], "validation");
}
