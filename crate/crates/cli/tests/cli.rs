use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfr")).args(args).env("RFR_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rfr(args);
    assert!(out.status.success(), "rfr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &[&str] = &[
    "--set", "system.n_train=3000",
    "--set", "system.n_heldout=3000",
    "--set", "system.transient=50",
    "--set", "fit.n_samples=800",
    "--set", "fit.delta=1.0",
    "--set", "evaluate.model_length=20",
    "--set", "evaluate.forecast_inits=2",
    "--set", "evaluate.forecast_horizon=2",
];

fn small_run(dir: &Path) -> Output {
    let mut args = vec!["run", "--system", "ks", "--seed", "3", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    rfr(&args)
}

#[test]
fn run_is_byte_reproducible_and_manifest_lists_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = small_run(d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["model.rfr", "delay_error.csv", "density.csv", "valid_times.csv", "forecast_error.csv", "prediction.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_array().unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["simulate", "observe", "embed", "fit", "predict", "evaluate"]);
    for out in stages.iter().flat_map(|s| s["outputs"].as_array().unwrap()) {
        let bytes = fs::read(a.join(out["path"].as_str().unwrap())).unwrap();
        let digest: String = sha2_hex(&bytes);
        assert_eq!(out["sha256"].as_str().unwrap(), digest);
    }
    assert!(manifest["config"].as_str().unwrap().contains("n_train = 3000"));
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn off_grid_tau_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfr(&["run", "--system", "ks", "--set", "embed.tau=0.125", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("series.csv").exists());
}

#[test]
fn unknown_override_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rfr(&["run", "--system", "mg", "--set", "fit.bogus=1", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = rfr(&[
        "fit", "--in", missing.to_str().unwrap(), "--grid", "1", "--lambda", "1e-7", "--n-samples", "10",
        "--out", tmp.path().join("m.rfr").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn corrupt_model_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.rfr");
    fs::write(&model, b"RFR1 definitely not a model").unwrap();
    let out = rfr(&[
        "predict", "--model", model.to_str().unwrap(), "--x0", "0,0,0", "--horizon", "1",
        "--out", tmp.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn stagewise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    ok(&["simulate", "--system", "cr", "--T", "600", "--transient", "100", "--seed", "1", "--out", &p("s.csv")]);
    let series = fs::read_to_string(p("s.csv")).unwrap();
    assert!(series.starts_with("t,w1,w2\n"));
    assert_eq!(series.lines().count(), 6001);

    ok(&["embed", "--in", &p("s.csv"), "--dim", "6", "--tau", "0.4", "--out", &p("e.csv")]);
    let header = fs::read_to_string(p("e.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,X1,X2,X3,X4,X5,X6,dX1,dX2,dX3,dX4,dX5,dX6");
    assert!(Path::new(&p("e.csv.json")).exists());

    let fit = ok(&["fit", "--in", &p("e.csv"), "--grid", "1.0", "--lambda", "1e-6", "--n-samples", "1500", "--out", &p("m.rfr")]);
    assert!(String::from_utf8_lossy(&fit.stdout).starts_with("J = "));

    ok(&["predict", "--model", &p("m.rfr"), "--init-from", &p("e.csv"), "--row", "100", "--horizon", "5", "--out", &p("pred.csv")]);
    let pred = fs::read_to_string(p("pred.csv")).unwrap();
    assert!(pred.starts_with("t,X1,X2,X3,X4,X5,X6,X1_destd\n"));
    assert_eq!(pred.lines().count(), 52);

    let out_dir = p("eval");
    let eval = ok(&[
        "evaluate", "--model", &p("m.rfr"), "--actual", &p("e.csv"), "--prediction", &p("pred.csv"),
        "--inits", "2", "--horizon", "2", "--report", &out_dir,
    ]);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("valid times"));
    for f in ["delay_error.csv", "density.csv", "valid_times.csv"] {
        assert!(Path::new(&out_dir).join(f).exists(), "{f}");
    }

    ok(&[
        "saddle", "--model", &p("m.rfr"), "--init-from", &p("e.csv"), "--segment-length", "2", "--keep-length", "1",
        "--length", "5", "--out", &p("sad.csv"),
    ]);
    assert_eq!(fs::read(p("sad.csv")).unwrap().is_empty(), false);
    assert!(Path::new(&p("sad_segments.csv")).exists());
}

#[test]
fn deriv_scan_writes_a_row_per_stride() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scan.csv");
    let run = ok(&[
        "deriv-scan", "--samples", "5000", "--max-stride", "4", "--out", out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("l,error_std\n"));
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(String::from_utf8_lossy(&run.stdout).contains("best stride"));
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_rfr"))
        .args(["deriv-scan", "--out", "/dev/null"])
        .env("RFR_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
