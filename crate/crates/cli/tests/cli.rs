use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn plasmorph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plasmorph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn gen(preset: &str, dir: &Path) {
    let o = plasmorph(&["gen-synthetic", "--preset", preset, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
}

fn fit(dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let mut args = vec![
        "--threads".to_string(),
        "2".into(),
        "fit".into(),
        "--mesh".into(),
        p("mesh.node"),
        p("mesh.ele"),
        "--markers".into(),
        p("markers.jsonl"),
        "--config".into(),
        p("config.json"),
        "--out".into(),
        out.to_str().unwrap().into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    plasmorph(&refs)
}

/// Smaller budget so the smoke tests stay quick.
fn shorten_config(dir: &Path) {
    let p = dir.join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    v["solve"]["max_outer_iterations"] = 3.into();
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn fit_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("cube");
    gen("cube", &case);
    shorten_config(&case);
    for f in ["mesh.node", "mesh.ele", "markers.jsonl", "ground_truth.node", "ground_truth_field.bin", "case.json"] {
        assert!(case.join(f).exists(), "{f}");
    }

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = fit(&case, out, &["--unattached"]);
        assert!(o.status.success(), "{}", text(&o));
    }
    for f in [
        "deformed.node",
        "plastic_field.bin",
        "plastic_field.csv",
        "report.json",
        "error_histogram.csv",
        "dihedral.csv",
    ] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    assert!(a.join("timing.json").exists());

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let term = report["termination"].as_str().unwrap();
    assert!(["max_iter", "icp_error_met", "eta_small"].contains(&term), "{term}");

    let o = plasmorph(&["report", a.join("report.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("termination"));
}

#[test]
fn attached_fit_with_embedded_obj() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("beam");
    gen("beam", &case);
    shorten_config(&case);
    let obj = tmp.path().join("probe.obj");
    fs::write(&obj, "# probe\nv 0.2 0.05 0.05\nv 0.3 0.05 0.05\nv 0.3 0.06 0.05\nf 1 2 3\n").unwrap();
    let out = tmp.path().join("out");
    let o = fit(&case, &out, &["--obj", obj.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let deformed = fs::read_to_string(out.join("deformed_embedded.obj")).unwrap();
    assert!(deformed.starts_with("# probe\n"));
    assert!(deformed.ends_with("f 1 2 3\n"));

    // an attached case cannot be run as unattached
    let o = fit(&case, &tmp.path().join("bad"), &["--unattached"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("attachments"));
}

#[test]
fn missing_marker_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("cube");
    gen("cube", &case);
    fs::remove_file(case.join("markers.jsonl")).unwrap();
    let o = fit(&case, &tmp.path().join("out"), &["--unattached"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("markers.jsonl"), "{}", text(&o));
}

#[test]
fn bad_inputs_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = plasmorph(&["gen-synthetic", "--preset", "teapot", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("beam"));

    let empty = tmp.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    let o = plasmorph(&["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = plasmorph(&["fit"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_derivatives_passes() {
    let o = plasmorph(&["check-derivatives", "--seed", "4", "--trials", "5"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    for block in ["dE/dx", "d2E/dxds", "dR/dF", "sylvester residual"] {
        assert!(out.contains(block), "{out}");
    }
    assert!(!out.contains("FAIL"));
}

#[test]
fn report_flags_iteration_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("cube");
    gen("cube", &case);
    let p = case.join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    v["solve"]["max_outer_iterations"] = 1.into();
    v["solve"]["icp_stop_mm"] = 1e-9.into();
    v["solve"]["eta_min"] = 0.0.into();
    fs::write(&p, v.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = fit(&case, &out, &["--unattached"]);
    assert!(o.status.success(), "{}", text(&o));
    let o = plasmorph(&["report", out.join("report.json").to_str().unwrap()]);
    assert!(text(&o).contains("WARN"), "{}", text(&o));
}
