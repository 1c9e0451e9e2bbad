use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn idhand(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idhand"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = idhand(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", "run"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

const MODEL: &str = "run/model.json";
const PRED: &str = "run/predictions.json";
const GT: &str = "run/ground_truth.json";

fn shape_of(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(a.path(), &["--seed", "7", "--n-records", "4", "--noise-px", "1"]);
    synth(b.path(), &["--seed", "7", "--n-records", "4", "--noise-px", "1"]);
    for f in [MODEL, PRED, GT, "run/meshes/s000-r0003.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn outputs_carry_version_and_invocation() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "2"]);
    let p = json(&d.path().join(PRED));
    assert_eq!(p["format_version"], 1);
    assert_eq!(p["kind"], "prediction_records");
    let inv: Vec<&str> = p["invocation"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(&inv[1..], ["synth", "--out", "run", "--n-records", "2"]);
}

#[test]
fn shape_noise_matches_generator_variance() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--seed", "3", "--n-records", "20", "--shape-noise", "0.5", "--no-meshes"]);
    ok(d.path(), &["eval", "--model", MODEL, "--pred", PRED, "--gt", GT, "--out", "e.json"]);
    let e = json(&d.path().join("e.json"));
    let v: Vec<f64> = e["report"]["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["mse_mano"].as_f64().unwrap())
        .collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    assert!((mean - 0.25).abs() < 3.0 * se, "{mean} vs 0.25 ± 3·{se}");
}

#[test]
fn zero_iterations_return_input_params() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "3", "--no-meshes"]);
    ok(
        d.path(),
        &["fit", "--model", MODEL, "--records", PRED, "--out", "fit.json", "--stage1-iters", "0", "--stage2-iters", "0"],
    );
    let pred = json(&d.path().join(PRED));
    let fit = json(&d.path().join("fit.json"));
    for (p, f) in pred["records"].as_array().unwrap().iter().zip(fit["records"].as_array().unwrap()) {
        assert_eq!(p["record_id"], f["record_id"]);
        assert_eq!(p["shape_hat"], f["params"]["shape"]);
        assert_eq!(p["pose_hat"], f["params"]["pose"]);
        assert_eq!(p["root_hat"], f["params"]["root"]);
    }
}

#[test]
fn noiseless_set_converges_with_longer_second_stage() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--seed", "2", "--n-records", "10", "--shape-noise", "0", "--no-meshes"]);
    ok(
        d.path(),
        &["fit", "--model", MODEL, "--records", PRED, "--out", "fit.json", "--shape-source", "gt", "--stage2-iters", "200"],
    );
    for r in json(&d.path().join("fit.json"))["records"].as_array().unwrap() {
        let e = r["energy_final"].as_f64().unwrap();
        assert!(e < 0.5, "{}: {e}", r["record_id"]);
        assert!(e <= r["energy_initial"].as_f64().unwrap());
    }
}

#[test]
fn fit_output_sorted_and_independent_of_jobs() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "6", "--subjects", "2", "--no-meshes"]);
    let base = ["fit", "--model", MODEL, "--records", PRED, "--stage1-iters", "20", "--stage2-iters", "5"];
    ok(d.path(), &[&base[..], &["--out", "a.json", "--jobs", "1"]].concat());
    ok(d.path(), &[&base[..], &["--out", "b.json", "--jobs", "4"]].concat());
    let (a, b) = (json(&d.path().join("a.json")), json(&d.path().join("b.json")));
    assert_eq!(a["records"], b["records"]);
    let ids: Vec<&str> = a["records"].as_array().unwrap().iter().map(|r| r["record_id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn missing_model_names_the_path() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "1", "--no-meshes"]);
    let out = idhand(d.path(), &["fit", "--model", "no/such/model.json", "--records", PRED, "--out", "f.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/model.json"));
}

#[test]
fn usage_errors_exit_one() {
    let d = TempDir::new().unwrap();
    assert_eq!(idhand(d.path(), &["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(idhand(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(idhand(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn failed_records_give_partial_exit() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "3", "--no-meshes"]);
    let path = d.path().join(PRED);
    let mut p = json(&path);
    p["records"][1].as_object_mut().unwrap().remove("shape_gt");
    std::fs::write(&path, p.to_string()).unwrap();
    let out = idhand(
        d.path(),
        &["fit", "--model", MODEL, "--records", PRED, "--out", "f.json", "--shape-source", "gt", "--stage1-iters", "5", "--stage2-iters", "0"],
    );
    assert_eq!(out.status.code(), Some(2));
    let f = json(&d.path().join("f.json"));
    assert_eq!(f["summary"]["ok"], 2);
    assert_eq!(f["records"][1]["status"], "failed");
}

#[test]
fn single_record_subject_keeps_its_prediction() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "1", "--subjects", "3", "--no-meshes"]);
    ok(d.path(), &["calibrate", "--model", MODEL, "--records", PRED, "--out", "cal.json"]);
    let cal = json(&d.path().join("cal.json"));
    for r in json(&d.path().join(PRED))["records"].as_array().unwrap() {
        let s = &cal["subjects"][r["subject_id"].as_str().unwrap()];
        assert_eq!(shape_of(&s["shape"]), shape_of(&r["shape_hat"]));
        assert_eq!(s["weights"], serde_json::json!([1.0]));
    }
}

#[test]
fn attention_requires_confidence() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "3", "--no-meshes"]);
    let path = d.path().join(PRED);
    let mut p = json(&path);
    p["records"][0].as_object_mut().unwrap().remove("confidence");
    std::fs::write(&path, p.to_string()).unwrap();
    let out = idhand(d.path(), &["calibrate", "--model", MODEL, "--records", PRED, "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("confidence required"));
    ok(d.path(), &["calibrate", "--model", MODEL, "--records", PRED, "--out", "c.json", "--uniform"]);
}

#[test]
fn eval_identity_and_missing_meshes() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "3"]);
    ok(d.path(), &["eval", "--model", MODEL, "--pred", GT, "--gt", GT, "--out", "e.json"]);
    let r = &json(&d.path().join("e.json"))["report"];
    for k in ["mpjpe_mm", "mpvpe_mm", "mse_mano", "w_error_mm", "l_error_mm"] {
        assert_eq!(r[k], 0.0, "{k}");
    }

    let e = TempDir::new().unwrap();
    synth(e.path(), &["--n-records", "3", "--no-meshes"]);
    ok(e.path(), &["eval", "--model", MODEL, "--pred", PRED, "--gt", GT, "--out", "e.json"]);
    let r = &json(&e.path().join("e.json"))["report"];
    assert!(r["mpvpe_mm"].is_null());
    assert!(r["records"][0]["mpvpe_mm"].is_null());
    for k in ["mpjpe_mm", "mse_mano", "w_error_mm", "l_error_mm"] {
        assert!(r[k].as_f64().unwrap() > 0.0, "{k}");
    }
}

#[test]
fn calibrate_fit_eval_pipeline() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--seed", "4", "--n-records", "5", "--subjects", "2"]);
    ok(d.path(), &["calibrate", "--model", MODEL, "--records", PRED, "--out", "cal.json"]);
    ok(
        d.path(),
        &["fit", "--model", MODEL, "--records", PRED, "--out", "fit.json", "--shape-source", "calibrated-file", "--calibration", "cal.json"],
    );
    let cal = json(&d.path().join("cal.json"));
    for r in json(&d.path().join("fit.json"))["records"].as_array().unwrap() {
        let expect = &cal["subjects"][r["subject_id"].as_str().unwrap()]["shape"];
        let got = &r["params"]["shape"];
        let bits = |v: &Value| shape_of(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(got), bits(expect));
    }

    ok(d.path(), &["eval", "--model", MODEL, "--pred", PRED, "--gt", GT, "--out", "before.json"]);
    ok(d.path(), &["eval", "--model", MODEL, "--pred", "fit.json", "--gt", GT, "--out", "after.json"]);
    let before = json(&d.path().join("before.json"))["report"]["mpjpe_mm"].as_f64().unwrap();
    let after = json(&d.path().join("after.json"))["report"]["mpjpe_mm"].as_f64().unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn calibration_without_file_is_usage_error() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "1", "--no-meshes"]);
    let out = idhand(d.path(), &["fit", "--model", MODEL, "--records", PRED, "--out", "f.json", "--shape-source", "calibrated-file"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn model_info_reports_counts() {
    let d = TempDir::new().unwrap();
    synth(d.path(), &["--n-records", "1", "--no-meshes"]);
    let out = ok(d.path(), &["model-info", "--model", MODEL]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["joints"], 16);
    assert_eq!(v["shape_coeffs"], 10);
    assert!(v["rest_length_mm"].as_f64().unwrap() > 100.0);
}
