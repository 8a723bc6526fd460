use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn anpg(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anpg"))
        .args(args)
        .env("ANPG_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_subdir(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.remove(0)
}

const MINIMAL: &str = "name = \"minimal\"\n[mdp]\ninstance = \"three_state\"\n[run]\nK = 10\nH = 64\nseed = 1\n";

#[test]
fn minimal_run_writes_one_csv_with_eleven_records() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let spec = write_spec(&tmp, "spec.toml", MINIMAL);
    let o = anpg(&["run", spec.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_subdir(&out);
    let csv = fs::read_to_string(dir.join("run_K10_H64_gamma0.8_seed1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,J,gap,omega_norm,omega_err,eps_bias_probe,kl_to_opt,samples_cum,seed");
    assert_eq!(lines.count(), 11);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["runs"][0]["status"], "completed");
    assert!(manifest["wall_clock_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn reruns_are_byte_identical_and_never_overwrite() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let spec = write_spec(
        &tmp,
        "spec.toml",
        "name = \"sweep\"\n[mdp]\ninstance = \"two_state\"\n[run]\nK = 5\n[sweep]\nH = [64, 128]\nseed = [0, 1]\n",
    );
    for _ in 0..2 {
        let o = anpg(&["--threads", "2", "run", spec.to_str().unwrap()], &out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let first = out.join("sweep");
    let second = out.join("sweep-1");
    let mut names: Vec<_> = fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in names {
        assert_eq!(fs::read(first.join(&n)).unwrap(), fs::read(second.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn odd_h_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(&tmp, "spec.toml", "[mdp]\ninstance = \"two_state\"\n[run]\nH = 63\n");
    let o = anpg(&["run", spec.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("H must be even"), "{}", stderr(&o));
}

#[test]
fn unknown_key_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(&tmp, "spec.toml", "[mdp]\ninstance = \"two_state\"\n[run]\nstep = 2\n");
    let o = anpg(&["run", spec.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn run_with_lemma1_audit_writes_per_component_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let spec = write_spec(
        &tmp,
        "spec.toml",
        "name = \"with-audit\"\n[mdp]\ninstance = \"three_state\"\n[run]\nK = 2\n[audits]\nlemma1 = true\nsamples = 20000\ncases = 2\n",
    );
    let o = anpg(&["run", spec.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(only_subdir(&out).join("audit_lemma1.csv")).unwrap();
    assert!(report.starts_with("check,measured,threshold,pass\n"));
    let components = report.lines().filter(|l| l.starts_with("case ")).count();
    assert_eq!(components, 2 * 6);
}

#[test]
fn failing_audit_exits_with_two_and_names_the_audit() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let spec = write_spec(
        &tmp,
        "spec.toml",
        "[mdp]\ninstance = \"ring\"\n[policy]\nfamily = \"ring\"\n[thresholds]\nr_squared = 0.99999\n",
    );
    let o = anpg(&["audit", "lemma7", spec.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("lemma7"), "{}", stderr(&o));
}

#[test]
fn lemma7_audit_reports_decay_rate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let spec = write_spec(&tmp, "spec.toml", "name = \"r\"\n[mdp]\ninstance = \"ring\"\n[policy]\nfamily = \"ring\"\n");
    let o = anpg(&["audit", "lemma7", spec.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("r-lemma7").join("audit_lemma7.csv")).unwrap();
    let kappa = report.lines().find(|l| l.starts_with("fitted decay rate kappa")).unwrap();
    let value: f64 = kappa.split(',').nth(1).unwrap().parse().unwrap();
    assert!(value > 0.0);
}

#[test]
fn oracle_selfcheck_audit_passes() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(&tmp, "spec.toml", "[mdp]\ninstance = \"two_state\"\n");
    let o = anpg(&["audit", "oracle-selfcheck", spec.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_audit_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(&tmp, "spec.toml", "[mdp]\ninstance = \"two_state\"\n");
    let o = anpg(&["audit", "lemma99", spec.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generated_files_validate_and_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.toml");
    let b = tmp.path().join("b.toml");
    for p in [&a, &b] {
        let o = anpg(&["gen", "random(5,3,seed=7,branching=2)", p.to_str().unwrap()], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let chain = tmp.path().join("chain.toml");
    assert!(anpg(&["gen", "chain(3)", chain.to_str().unwrap()], tmp.path()).status.success());
    let mdp = anpg::mdp::TabularMdp::read(&chain).unwrap();
    assert_eq!(mdp.n_states(), 3);

    let grid = tmp.path().join("grid.toml");
    assert!(anpg(&["gen", "gridworld(2,2)", grid.to_str().unwrap()], tmp.path()).status.success());
    let mdp = anpg::mdp::TabularMdp::read(&grid).unwrap();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (4, 4));

    let again = anpg(&["gen", "chain(3)", chain.to_str().unwrap()], tmp.path());
    assert_eq!(again.status.code(), Some(1));
    let bad = anpg(&["gen", "chain(0)", tmp.path().join("x.toml").to_str().unwrap()], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn spec_can_point_at_a_generated_file() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let mdp = tmp.path().join("chain.toml");
    assert!(anpg(&["gen", "chain(3)", mdp.to_str().unwrap()], tmp.path()).status.success());
    let body = "[mdp]\nfile = \"chain.toml\"\n[run]\nK = 3\ninner_solver = \"exact\"\neta = 0.5\n";
    let spec = write_spec(&tmp, "spec.toml", &format!("{body}mu_floor = 0.0\n"));
    let o = anpg(&["run", spec.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));

    let strict = write_spec(&tmp, "strict.toml", body);
    let o = anpg(&["run", strict.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("mu_floor"), "{}", stderr(&o));
}

#[test]
fn version_prints_package_version() {
    let tmp = TempDir::new().unwrap();
    let o = anpg(&["version"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}
