use anpg::driver::{run_anpg, AnpgConfig, InnerSolver, StepSize};
use anpg::instances;
use anpg::AnpgError;

#[test]
fn exact_natural_gradient_reaches_one_percent_gap() {
    let problem = instances::two_state().unwrap();
    let config = AnpgConfig {
        k: 200,
        eta: StepSize::Fixed(0.1),
        inner_solver: InnerSolver::ExactOracle,
        mu_floor: 0.0,
        ..AnpgConfig::default()
    };
    let history = run_anpg(&problem, &config).unwrap();
    let target = 0.01 * history.j_star;
    assert!(history.final_theta_gap() <= target, "{}", history.final_theta_gap());
    for w in history.records[1..].windows(2) {
        assert!(w[1].gap <= w[0].gap + 1e-12, "gap rose at k={}", w[1].k);
    }
}

#[test]
fn records_cover_every_iterate() {
    let problem = instances::three_state().unwrap();
    let config = AnpgConfig {
        k: 10,
        h: 64,
        seed: 1,
        ..AnpgConfig::default()
    };
    let history = run_anpg(&problem, &config).unwrap();
    assert_eq!(history.records.len(), 11);
    let csv = history.csv_string().unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(!csv.contains("NaN"));
    assert!(history.records.windows(2).all(|w| w[1].samples_cum > w[0].samples_cum));
    assert_eq!(history.grad_calls, 10 * 64);
}

#[test]
fn larger_steps_still_improve_in_expectation() {
    let problem = instances::four_state().unwrap();
    let config = AnpgConfig {
        k: 20,
        h: 256,
        eta: StepSize::Fixed(0.02),
        mu_floor: 0.0,
        ..AnpgConfig::default()
    };
    let gains: Vec<f64> = (0..8)
        .map(|seed| {
            let h = run_anpg(&problem, &AnpgConfig { seed, ..config.clone() }).unwrap();
            h.records[0].gap - h.final_theta_gap()
        })
        .collect();
    assert!(anpg::stats::median(&gains) > 0.0, "{gains:?}");
}

#[test]
fn small_inner_loop_is_flagged() {
    let problem = instances::two_state().unwrap();
    let config = AnpgConfig {
        k: 2,
        h: 8,
        ..AnpgConfig::default()
    };
    let history = run_anpg(&problem, &config).unwrap();
    assert!(history.warnings.iter().any(|w| w.contains("min_inner_H")));
}

#[test]
fn horizon_cap_shrinks_sample_count() {
    let problem = instances::four_state().unwrap();
    let base = AnpgConfig {
        k: 5,
        h: 64,
        seed: 3,
        ..AnpgConfig::default()
    };
    let free = run_anpg(&problem, &base).unwrap();
    let capped = run_anpg(
        &problem,
        &AnpgConfig {
            max_horizon: Some(2),
            ..base
        },
    )
    .unwrap();
    assert!(capped.total_env_steps() <= 5 * 64 * 8);
    assert!(capped.total_env_steps() < free.total_env_steps());
}

#[test]
fn degenerate_fisher_floor_aborts() {
    let problem = instances::two_state().unwrap();
    let config = AnpgConfig {
        k: 3,
        mu_floor: 10.0,
        ..AnpgConfig::default()
    };
    assert!(matches!(run_anpg(&problem, &config), Err(AnpgError::FisherDegenerate { .. })));
}
