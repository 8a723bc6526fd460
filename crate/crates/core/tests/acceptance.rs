//! Acceptance suite. Each test prints one `PASS` or `FAIL` line and then
//! asserts the outcome.

use std::time::{Duration, Instant};

use anpg::audit::{self, AuditReport, AuditThresholds};
use anpg::driver::{AnpgConfig, InnerSolver, RunHistory};
use anpg::instances;

fn summarize(report: &AuditReport) -> String {
    let shown: Vec<String> = report
        .gating()
        .map(|c| format!("{}={:.6e} (threshold {:.6e})", c.check, c.measured, c.threshold))
        .collect();
    shown.join("; ")
}

fn verdict(n: usize, title: &str, pass: bool, detail: &str) {
    println!("{} criterion {n} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn gate(n: usize, title: &str, report: &AuditReport, elapsed: Duration, budget: Option<Duration>) {
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let pass = report.passed() && in_budget;
    let mut detail = summarize(report);
    detail.push_str(&format!("; runtime {:.1}s", elapsed.as_secs_f64()));
    verdict(n, title, pass, &detail);
    for note in &report.notes {
        println!("    {note}");
    }
    assert!(in_budget, "criterion {n} exceeded its runtime budget: {elapsed:?}");
    assert!(report.passed(), "criterion {n} failed: {:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn criterion_01_oracle_self_consistency() {
    let start = Instant::now();
    let report = audit::oracle_selfcheck(50, 1, &AuditThresholds::default()).unwrap();
    gate(1, "oracle self-consistency", &report, start.elapsed(), Some(Duration::from_secs(10)));
}

#[test]
fn criterion_02_unbiased_gradient_estimates() {
    let start = Instant::now();
    let cases = audit::random_cases(10, 0.8, 2).unwrap();
    let report = audit::lemma1(&cases, 100_000, 3, &AuditThresholds::default()).unwrap();
    gate(2, "unbiased gradient estimates", &report, start.elapsed(), Some(Duration::from_secs(120)));
}

#[test]
fn criterion_03_second_moment_bounds() {
    let start = Instant::now();
    let problems = audit::moment_problems(&[0.5, 0.8]).unwrap();
    let report = audit::moment_bounds(&problems, 100_000, 4, &AuditThresholds::default()).unwrap();
    gate(3, "second-moment bounds", &report, start.elapsed(), None);
}

#[test]
fn criterion_04_noise_covariance_bound() {
    let start = Instant::now();
    let cases = audit::lemma5_cases().unwrap();
    assert_eq!(cases.len(), 5);
    let report = audit::lemma5(&cases, 100_000, 5, &AuditThresholds::default()).unwrap();
    gate(4, "noise covariance bound", &report, start.elapsed(), None);
}

#[test]
fn criterion_05_variance_term_scaling() {
    let start = Instant::now();
    let ring = instances::ring().unwrap();
    let horizons = [64, 128, 256, 512, 1024, 2048, 4096];
    let report = audit::lemma6(&ring, &ring.zeros(), &horizons, 100, 6, &AuditThresholds::default()).unwrap();
    gate(5, "variance-term scaling", &report, start.elapsed(), Some(Duration::from_secs(900)));
}

#[test]
fn criterion_06_exponential_bias_decay() {
    let start = Instant::now();
    let ring = instances::ring().unwrap();
    let report = audit::lemma7(&ring, &ring.zeros(), &[16, 32, 64, 128, 256], &AuditThresholds::default()).unwrap();
    gate(6, "exponential bias decay", &report, start.elapsed(), None);
}

#[test]
fn criterion_07_averaged_gap_bound() {
    let start = Instant::now();
    let th = AuditThresholds::default();
    let mut combined = AuditReport::new("corollary1");
    for name in ["two_state", "four_state"] {
        let problem = instances::by_name(name).unwrap().unwrap();
        assert_eq!(problem.mdp.gamma(), 0.9);
        let config = AnpgConfig {
            k: 50,
            h: 64,
            seed: 100,
            ..AnpgConfig::default()
        };
        let runs = audit::run_seeds(&problem, &config, 10).unwrap();
        let report = audit::corollary1(name, &runs, &th).unwrap();
        combined.checks.extend(report.checks);
        combined.notes.extend(report.notes);
    }
    gate(7, "averaged-gap bound", &combined, start.elapsed(), None);
}

#[test]
fn criterion_08_joint_scaling_direction() {
    let start = Instant::now();
    let four = instances::four_state().unwrap();
    let base = AnpgConfig {
        seed: 200,
        ..AnpgConfig::default()
    };
    let (report, _) =
        audit::scaling(&four, &base, &[(50, 64), (100, 128), (200, 256)], 10, &AuditThresholds::default()).unwrap();
    gate(8, "joint (K, H) scaling direction", &report, start.elapsed(), None);
}

#[test]
fn criterion_09_asgd_against_sgd() {
    let start = Instant::now();
    let four = instances::four_state().unwrap();
    let base = AnpgConfig {
        k: 50,
        h: 64,
        seed: 300,
        ..AnpgConfig::default()
    };
    let report = audit::inner_comparison(&four, &base, None, 10).unwrap();
    gate(9, "ASGD against SGD at matched budget", &report, start.elapsed(), None);
}

fn history_bytes(runs: &[RunHistory]) -> Vec<String> {
    runs.iter().map(|r| r.csv_string().unwrap()).collect()
}

#[test]
fn criterion_10_byte_reproducibility() {
    let th = AuditThresholds::default();
    let mut mismatches = Vec::new();
    let mut compare = |label: &str, a: String, b: String| {
        if a != b {
            mismatches.push(label.to_string());
        }
    };

    let selfcheck = || audit::oracle_selfcheck(50, 1, &th).unwrap().csv_string().unwrap();
    compare("oracle self-consistency", selfcheck(), selfcheck());

    let cases = audit::random_cases(3, 0.8, 2).unwrap();
    let lemma1 = || audit::lemma1(&cases, 100_000, 3, &th).unwrap().csv_string().unwrap();
    compare("unbiasedness", lemma1(), lemma1());

    let problems = audit::moment_problems(&[0.8]).unwrap();
    let moments = || audit::moment_bounds(&problems, 50_000, 4, &th).unwrap().csv_string().unwrap();
    compare("moments", moments(), moments());

    let ring = instances::ring().unwrap();
    let lemma6 = || audit::lemma6(&ring, &ring.zeros(), &[64, 128, 256], 20, 6, &th).unwrap().csv_string().unwrap();
    compare("variance scaling", lemma6(), lemma6());
    let lemma7 = || audit::lemma7(&ring, &ring.zeros(), &[16, 32, 64, 128, 256], &th).unwrap().csv_string().unwrap();
    compare("bias decay", lemma7(), lemma7());

    let two = instances::two_state().unwrap();
    let config = AnpgConfig {
        k: 50,
        h: 64,
        seed: 100,
        ..AnpgConfig::default()
    };
    let runs_a = audit::run_seeds(&two, &config, 4).unwrap();
    let runs_b = audit::run_seeds(&two, &config, 4).unwrap();
    compare("run histories", history_bytes(&runs_a).concat(), history_bytes(&runs_b).concat());
    compare(
        "averaged-gap audit",
        audit::corollary1("two_state", &runs_a, &th).unwrap().csv_string().unwrap(),
        audit::corollary1("two_state", &runs_b, &th).unwrap().csv_string().unwrap(),
    );

    let four = instances::four_state().unwrap();
    let sgd = AnpgConfig {
        inner_solver: InnerSolver::Sgd { step: None },
        seed: 300,
        ..config.clone()
    };
    let sgd_runs = || history_bytes(&audit::run_seeds(&four, &sgd, 2).unwrap()).concat();
    compare("SGD run histories", sgd_runs(), sgd_runs());

    let pass = mismatches.is_empty();
    let detail = if pass {
        "8 reruns byte-identical".to_string()
    } else {
        format!("differing outputs: {}", mismatches.join(", "))
    };
    verdict(10, "byte reproducibility", pass, &detail);
    assert!(pass, "{detail}");
}
