use std::process::Command;

fn layerpot(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_layerpot")).args(args).output().expect("binary runs")
}

#[test]
fn greens_test_writes_one_file_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("greens.csv");
    let o = layerpot(&["greens-test", "--resolutions", "12x48,16x64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["merkel_stag", "merkel_nostag", "pou"] {
        let text = std::fs::read_to_string(dir.path().join(format!("greens_{s}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("Nu,Nv,tol,iters,error"));
        assert_eq!(lines.count(), 2);
    }
}

#[test]
fn reports_are_reproducible() {
    let args = ["greens-test", "--scheme", "pou", "--resolutions", "12x48", "--format", "json"];
    let a = layerpot(&args);
    let b = layerpot(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["fitted_order"].is_null());
}

#[test]
fn gnuplot_output() {
    let o = layerpot(&["greens-test", "--scheme", "merkel_stag", "--resolutions", "8x32", "--format", "gnuplot"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].split_whitespace().count(), 2);
}

#[test]
fn spec_errors_exit_with_two() {
    assert_eq!(layerpot(&["greens-test", "--surface", "nowhere"]).status.code(), Some(2));
    assert_eq!(layerpot(&["greens-test", "--resolutions", "3x8"]).status.code(), Some(2));
    assert_eq!(layerpot(&["greens-test", "--interp-order", "40", "--resolutions", "8x32"]).status.code(), Some(2));
    assert_eq!(layerpot(&["vacuum-test", "--eta-rule", "sideways"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_three() {
    let o = layerpot(&["casing-test", "--surface", "torus", "--resolutions", "12x48@1e-12", "--max-iter", "1"]);
    assert_eq!(o.status.code(), Some(3));
    // the row is still reported
    assert!(String::from_utf8_lossy(&o.stdout).contains("12,48,"));
}

#[test]
fn surface_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("torus.txt");
    std::fs::write(&path, "# circular torus\nnfp 1\n0 0 2.0 0 0 0\n1 0 0.5 -0.5 0 0\n").unwrap();
    let run = |s: &str| layerpot(&["greens-test", "--surface", s, "--scheme", "merkel_nostag", "--resolutions", "8x32"]).stdout;
    assert_eq!(run(path.to_str().unwrap()), run("circular_torus"));
}

#[test]
fn zero_external_current_recovers_nothing() {
    let o = layerpot(&["casing-test", "--surface", "torus", "--resolutions", "24x96@1e-10", "--external-current", "0", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    for chunk in text.split("# ").filter(|c| !c.trim().is_empty()) {
        let json = chunk.split_once('\n').unwrap().1;
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        assert!(v["rows"][0]["error"].as_f64().unwrap() < 1e-4);
    }
}

#[test]
fn oracle_check_detects_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracles.json");
    let o = layerpot(&["oracle-check", "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v.iter().all(|c| c["passed"] == true));
    let bad = layerpot(&["oracle-check", "--perturb-kernel", "1e-6"]);
    assert_eq!(bad.status.code(), Some(1));
}
