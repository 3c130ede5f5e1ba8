use std::path::Path;
use std::process::{Command, Output};

fn hardyheat(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hardyheat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HARDYHEAT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--set", "grid.length=10", "--set", "grid.n=128", "--set", "t_list=[1.0]", "--set", "x_list=[0.5, 1.0]", "--set", "y_list=[1.0, 2.0]"];

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn help_documents_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&["--help"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("alpha,delta_or_none,t,x0,y_center,mean,stderr,n_paths,seed"));
    assert!(text.contains("check_name,t,x,y,value,rhs,ratio"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&["sweep", "--config", "/nonexistent/run.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/run.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let text = hardyheat_default().replace("[grid]\n", "[grid]\nspacing = 0.1\n");
    std::fs::write(&cfg, text).unwrap();
    let o = hardyheat(&["sweep", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("spacing"), "{}", stderr(&o));
}

fn hardyheat_default() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default.toml")).unwrap()
}

#[test]
fn bad_usage_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = hardyheat(&["sweep", "--set", "delta"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn supercritical_coupling_is_rejected_outside_blowup() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&with_small("sweep", &["--set", "kappa=0.5"]), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("critical constant") && e.contains("blows up"), "{e}");
}

#[test]
fn blowup_redirects_subcritical_coupling() {
    let dir = tempfile::tempdir().unwrap();
    // κ*/2 for α = 1 is 1/(2π).
    let kappa = format!("kappa={}", 0.5 / std::f64::consts::PI);
    let o = hardyheat(
        &["blowup", "--set", &kappa, "--set", "blowup.n=128", "--set", "blowup.lengths=[8.0]"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("does not exceed the critical constant"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("blowup.json")).unwrap()).unwrap();
    assert!(v["results"]["blowup"]["series"]["converged"].as_bool().unwrap());
}

#[test]
fn kernel_writes_matrices_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&with_small("kernel", &["--format", "csv"]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    assert!(text.starts_with("# command: kernel\n# config: {"));
    assert!(text.contains("# kernel_hash: kernel@t=1 "));
    assert!(text.contains("\nt,x,y,value\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    assert!(dir.path().join("kernel_t1.hhk").exists());
}

#[test]
fn json_reports_embed_config_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&with_small("sweep", &[]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["grid"]["n"], 128);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert!(v["kernel_hashes"].as_object().unwrap().contains_key("perturbed@t=1"));
    assert!(v["resolved"]["kappa"].as_f64().unwrap() > 0.0);
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(
        &with_small(
            "verify",
            &[
                "--set",
                "verify.checks=[\"invariance\"]",
                "--set",
                "verify.identity_length=10",
                "--set",
                "verify.identity_n=128",
                "--set",
                "verify.invariance_tol=1e-9",
            ],
        ),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], false);
}

#[test]
fn mc_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small("mc", &["--set", "mc.n_paths=5000", "--format", "csv", "--seed", "11"]);
    let a = hardyheat(&args, dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let first = std::fs::read_to_string(dir.path().join("mc.csv")).unwrap();
    hardyheat(&args, dir.path());
    let second = std::fs::read_to_string(dir.path().join("mc.csv")).unwrap();
    assert_eq!(first, second);
    assert!(first.contains("\nalpha,delta_or_none,t,x0,y_center,mean,stderr,n_paths,seed\n"));
    assert!(first.contains(",none,"));
    assert!(first.contains("\"seed\":11"));
}

#[test]
fn calibrate_small_grid_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&["calibrate", "--set", "calibrate.length=80", "--set", "calibrate.n=256"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("calibrate.json")).unwrap()).unwrap();
    assert!(v["results"]["calibration"]["c_norm"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardyheat(&["verify", "--config", "default"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    let checks = v["results"]["checks"].as_array().unwrap();
    assert!(checks.len() >= 10);
    assert!(checks.iter().all(|c| c["pass"] == true));
}
