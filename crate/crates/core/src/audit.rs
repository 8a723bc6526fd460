//! Empirical audits of the estimator, the inner solver and the outer loop.
//! Every audit returns a table of `check, measured, threshold, pass` rows.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asgd::{self, AsgdRates, ExactOracle, Mode};
use crate::driver::{self, AnpgConfig, InnerSolver, Problem, RunHistory};
use crate::error::{AnpgError, Result};
use crate::generators;
use crate::linalg;
use crate::mdp::TabularMdp;
use crate::oracle;
use crate::policy::{self, MeasureOptions, PolicyFamily, PolicyParams, PolicyTable};
use crate::rng::RngStream;
use crate::sampler::{self, GradientSampler};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub check: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Shown in the report but not part of the verdict.
    #[serde(skip)]
    pub informational: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub name: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, check: impl Into<String>, measured: f64, threshold: f64, pass: bool) {
        self.checks.push(Check {
            check: check.into(),
            measured,
            threshold,
            pass,
            informational: false,
        });
    }

    pub fn push_info(&mut self, check: impl Into<String>, measured: f64, threshold: f64, pass: bool) {
        self.push(check, measured, threshold, pass);
        if let Some(last) = self.checks.last_mut() {
            last.informational = true;
        }
    }

    pub fn gating(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.informational)
    }

    pub fn passed(&self) -> bool {
        self.gating().count() > 0 && self.gating().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.gating().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.check == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "measured", "threshold", "pass"])?;
        for c in &self.checks {
            w.write_record([
                c.check.clone(),
                c.measured.to_string(),
                c.threshold.to_string(),
                c.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| AnpgError::Parse(e.to_string()))
    }
}

/// Tolerances of the statistical checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditThresholds {
    /// Total-variation bound for the occupancy histogram.
    pub tv: f64,
    /// Half-width of the per-component confidence intervals, in standard errors.
    pub ci_sigma: f64,
    /// Slack for moment and eigenvalue checks, in standard errors.
    pub moment_sigma: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub r_squared: f64,
    pub identity_tol: f64,
    pub fd_rel_tol: f64,
    /// Allowed relative deviation of the environment-step count.
    pub step_count_rel: f64,
    pub eps_bias_max: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        Self {
            tv: 0.02,
            ci_sigma: 4.0,
            moment_sigma: 3.0,
            slope_min: -1.35,
            slope_max: -0.65,
            r_squared: 0.95,
            identity_tol: 1e-10,
            fd_rel_tol: 1e-5,
            step_count_rel: 0.10,
            eps_bias_max: 1e-8,
        }
    }
}

fn random_theta(dim: usize, scale: f64, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_policy(ns: usize, na: usize, rng: &mut RngStream) -> Result<PolicyTable> {
    let mut probs = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let w: Vec<f64> = (0..na).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / total));
    }
    PolicyTable::from_probs(ns, na, probs)
}

fn fd_gradient(mdp: &TabularMdp, params: &PolicyParams, h: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(params.dim());
    for i in 0..params.dim() {
        let mut up = params.theta().clone();
        let mut dn = params.theta().clone();
        up[i] += h;
        dn[i] -= h;
        out[i] = (oracle::exact_j(mdp, &params.with_theta(up)?)? - oracle::exact_j(mdp, &params.with_theta(dn)?)?)
            / (2.0 * h);
    }
    Ok(out)
}

/// Identity checks of the exact oracle on random MDPs with at most 10 states
/// and 4 actions.
pub fn oracle_selfcheck(n_instances: usize, seed: u64, th: &AuditThresholds) -> Result<AuditReport> {
    let root = RngStream::new(seed);
    let rows: Vec<[f64; 5]> = (0..n_instances)
        .into_par_iter()
        .map(|i| -> Result<[f64; 5]> {
            let mut rng = root.substream(i as u64);
            let ns = rng.random_range(1..=10usize);
            let na = rng.random_range(1..=4usize);
            let branching = rng.random_range(1..=ns);
            let gamma = rng.random_range(0.5..0.95);
            let mdp = generators::random(ns, na, rng.random(), branching, gamma)?;
            let p1 = random_policy(ns, na, &mut rng)?;
            let p2 = random_policy(ns, na, &mut rng)?;
            let e = oracle::exact_values(&mdp, &p1)?;
            let mut v_err = 0.0_f64;
            let mut nu_err = 0.0_f64;
            for s in 0..ns {
                let sum: f64 = (0..na).map(|a| p1.prob(s, a) * e.q[s * na + a]).sum();
                v_err = v_err.max((e.v[s] - sum).abs());
                for a in 0..na {
                    nu_err = nu_err.max((e.nu_occ[s * na + a] - e.d_occ[s] * p1.prob(s, a)).abs());
                }
            }
            let sums = (e.d_occ.sum() - 1.0).abs().max((e.nu_occ.iter().sum::<f64>() - 1.0).abs());
            let (lhs, rhs) = oracle::performance_difference(&mdp, &p1, &p2)?;
            let params = PolicyParams::new(
                std::sync::Arc::new(PolicyFamily::tabular(&mdp)),
                random_theta(ns * na, 1.0, &mut rng),
            )?;
            let pg = oracle::exact_policy_gradient(&mdp, &params)?.pg;
            let fd = fd_gradient(&mdp, &params, 1e-5)?;
            let fd_rel = (&pg - &fd).norm() / fd.norm().max(1e-6);
            Ok([v_err, nu_err, sums, (lhs - rhs).abs(), fd_rel])
        })
        .collect::<Result<_>>()?;
    let worst = |i: usize| rows.iter().map(|r| r[i]).fold(0.0, f64::max);
    let mut report = AuditReport::new("oracle-selfcheck");
    let tol = th.identity_tol;
    report.push("max |V - sum_a pi Q|", worst(0), tol, worst(0) <= tol);
    report.push("max |nu - d pi|", worst(1), tol, worst(1) <= tol);
    report.push("max |sum d - 1|, |sum nu - 1|", worst(2), tol, worst(2) <= tol);
    report.push("max |performance difference|", worst(3), tol, worst(3) <= tol);
    report.push("max relative error grad J vs finite differences", worst(4), th.fd_rel_tol, worst(4) <= th.fd_rel_tol);
    report.notes.push(format!("{n_instances} random instances"));
    Ok(report)
}

/// One `(MDP, theta, omega)` triple for the unbiasedness audit.
#[derive(Clone, Debug)]
pub struct EstimatorCase {
    pub problem: Problem,
    pub theta: DVector<f64>,
    pub omega: DVector<f64>,
}

/// Random small tabular cases at discount `gamma`.
pub fn random_cases(count: usize, gamma: f64, seed: u64) -> Result<Vec<EstimatorCase>> {
    let root = RngStream::new(seed);
    (0..count)
        .map(|i| {
            let mut rng = root.substream(i as u64);
            let ns = rng.random_range(2..=4usize);
            let na = rng.random_range(2..=3usize);
            let mdp = generators::random(ns, na, rng.random(), rng.random_range(1..=ns), gamma)?;
            let problem = Problem::tabular(mdp);
            let d = problem.family.dim();
            Ok(EstimatorCase {
                theta: random_theta(d, 1.0, &mut rng),
                omega: random_theta(d, 2.0, &mut rng),
                problem,
            })
        })
        .collect()
}

/// Random `(theta, omega)` pairs on a fixed problem.
pub fn cases_on(problem: &Problem, count: usize, seed: u64) -> Vec<EstimatorCase> {
    let root = RngStream::new(seed);
    let d = problem.family.dim();
    (0..count)
        .map(|i| {
            let mut rng = root.substream(i as u64);
            EstimatorCase {
                problem: problem.clone(),
                theta: random_theta(d, 1.0, &mut rng),
                omega: random_theta(d, 2.0, &mut rng),
            }
        })
        .collect()
}

/// Two-sided normal tail mass beyond `z` standard deviations.
fn normal_tail(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - n.cdf(z))
}

/// Monte-Carlo mean of `n` gradient estimates against the exact gradient,
/// component by component.
pub fn lemma1(cases: &[EstimatorCase], n: usize, seed: u64, th: &AuditThresholds) -> Result<AuditReport> {
    let mut report = AuditReport::new("lemma1");
    let root = RngStream::new(seed);
    let mut failures = 0usize;
    let mut total = 0usize;
    for (i, case) in cases.iter().enumerate() {
        let params = case.problem.params(case.theta.clone())?;
        let exact = oracle::compatible_loss_gradient(&case.problem.mdp, &params, &case.omega)?;
        let sampler = GradientSampler::new(&case.problem.mdp, &params)?;
        let batch = sampler::sample_batch(&sampler, &case.omega, n, &root.substream(i as u64), false)?;
        let (mean, se) = (batch.mean(), batch.std_err());
        for c in 0..exact.len() {
            let diff = (mean[c] - exact[c]).abs();
            let z = if se[c] > 0.0 {
                diff / se[c]
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            let ok = z <= th.ci_sigma;
            failures += usize::from(!ok);
            total += 1;
            report.push_info(format!("case {i} component {c}: |mean - exact| / se"), z, th.ci_sigma, ok);
        }
    }
    let expected = total as f64 * normal_tail(th.ci_sigma);
    let allowed = expected.floor();
    report.push(
        "components outside their confidence interval",
        failures as f64,
        allowed,
        failures as f64 <= allowed,
    );
    report.notes.push(format!(
        "{total} components, {n} samples each; binomial expectation of misses {expected:.3}"
    ));
    Ok(report)
}

/// Second moments of the Q and V estimates against `4 / (1 - gamma)^2`.
pub fn moment_bounds(problems: &[(String, Problem)], n: usize, seed: u64, th: &AuditThresholds) -> Result<AuditReport> {
    let mut report = AuditReport::new("moments");
    let root = RngStream::new(seed);
    for (i, (name, problem)) in problems.iter().enumerate() {
        let gamma = problem.mdp.gamma();
        let bound = 4.0 / (1.0 - gamma).powi(2);
        let params = problem.zeros();
        let sampler = GradientSampler::new(&problem.mdp, &params)?;
        let stream = root.substream(i as u64);
        let chunk = 4096usize;
        let parts: Vec<[f64; 4]> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut acc = [0.0; 4];
                for j in c * chunk..((c + 1) * chunk).min(n) {
                    let mut rng = stream.substream(j as u64);
                    let occ = sampler.sample_occupancy_pair(&mut rng);
                    let est = sampler
                        .sample_advantage(occ.s_hat, occ.a_hat, &mut rng)
                        .expect("sampled pair is valid");
                    let (q2, v2) = (est.q_hat * est.q_hat, est.v_hat * est.v_hat);
                    acc[0] += q2;
                    acc[1] += q2 * q2;
                    acc[2] += v2;
                    acc[3] += v2 * v2;
                }
                acc
            })
            .collect();
        let mut sums = [0.0; 4];
        for p in parts {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        let nf = n as f64;
        for (label, m1, m2) in [("Q", sums[0], sums[1]), ("V", sums[2], sums[3])] {
            let mean = m1 / nf;
            let se = ((m2 / nf - mean * mean).max(0.0) / nf).sqrt();
            let threshold = bound + th.moment_sigma * se;
            report.push(format!("{name} gamma={gamma}: E[{label}_hat^2]"), mean, threshold, mean <= threshold);
        }
    }
    Ok(report)
}

/// Fourth moment of `u^T g` over the same draws as a batch, for the
/// standard error of `u^T M u`.
fn projected_second_moment_se(
    sampler: &GradientSampler<'_>,
    omega: &DVector<f64>,
    u: &DVector<f64>,
    n: usize,
    rng: &RngStream,
) -> Result<f64> {
    let chunk = 4096usize;
    let parts: Vec<Result<(f64, f64)>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in c * chunk..((c + 1) * chunk).min(n) {
                let g = sampler.grad_estimate(omega, &mut rng.substream(i as u64))?;
                let p = u.dot(&g.vec).powi(2);
                s1 += p;
                s2 += p * p;
            }
            Ok((s1, s2))
        })
        .collect();
    let (mut s1, mut s2) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        s1 += a;
        s2 += b;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    Ok(((s2 / nf - mean * mean).max(0.0) / nf).sqrt())
}

/// Smallest eigenvalue of `sigma^2 F - E[g g^T]` at `omega*` on the
/// identifiable subspace, with `sigma^2` from constants measured at the
/// case's parameter.
pub fn lemma5(cases: &[(String, Problem, DVector<f64>)], n: usize, seed: u64, th: &AuditThresholds) -> Result<AuditReport> {
    let mut report = AuditReport::new("lemma5");
    let root = RngStream::new(seed);
    for (i, (name, problem, theta)) in cases.iter().enumerate() {
        let params = problem.params(theta.clone())?;
        let constants = policy::measure_constants(
            std::slice::from_ref(&params),
            &problem.mdp,
            &MeasureOptions {
                mu_floor: 0.0,
                ..MeasureOptions::default()
            },
        )?;
        let sol = oracle::exact_natural_gradient(&problem.mdp, &params, 1e-10)?;
        let sampler = GradientSampler::new(&problem.mdp, &params)?;
        let stream = root.substream(i as u64);
        let m_hat = sampler::empirical_noise_covariance(&sampler, &sol.omega_star, n, &stream)?;
        let basis = policy::identifiable_basis(&problem.family);
        let gap: DMatrix<f64> = &sol.fisher * constants.sigma_sq - m_hat;
        let (lambda, u_restricted) = linalg::min_eigenpair(&(basis.transpose() * gap * &basis));
        let u = &basis * u_restricted;
        let se = projected_second_moment_se(&sampler, &sol.omega_star, &u, n, &stream)?;
        let threshold = -th.moment_sigma * se;
        report.push(
            format!("{name}: min eig(sigma^2 F - E[g g^T])"),
            lambda,
            threshold,
            lambda >= threshold,
        );
        report.notes.push(format!("{name}: sigma^2 = {}", constants.sigma_sq));
    }
    Ok(report)
}

/// Rates for a fixed-parameter inner-loop study: constants measured at the
/// parameter itself.
pub fn local_rates(problem: &Problem, params: &PolicyParams) -> Result<AsgdRates> {
    let c = policy::measure_constants(std::slice::from_ref(params), &problem.mdp, &MeasureOptions::default())?;
    asgd::make_rates(&c)
}

/// Seed-averaged squared error of the stochastic inner loop for each `H`.
pub fn variance_curve(
    problem: &Problem,
    params: &PolicyParams,
    rates: &AsgdRates,
    horizons: &[usize],
    seeds: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let sol = oracle::exact_natural_gradient(&problem.mdp, params, 1e-10)?;
    let root = RngStream::new(seed);
    horizons
        .iter()
        .map(|&h| {
            let errs: Vec<f64> = (0..seeds)
                .into_par_iter()
                .map(|s| -> Result<f64> {
                    let rng = root.substream(h as u64).substream(s as u64);
                    let out = asgd::run_inner_loop_at(&problem.mdp, params, h, rates, Mode::Stochastic, &rng)?;
                    Ok((out.omega - &sol.omega_star).norm_squared())
                })
                .collect::<Result<_>>()?;
            Ok((h, stats::mean(&errs)))
        })
        .collect()
}

/// Log-log slope of the inner-loop mean squared error against `H`.
pub fn lemma6(
    problem: &Problem,
    params: &PolicyParams,
    horizons: &[usize],
    seeds: usize,
    seed: u64,
    th: &AuditThresholds,
) -> Result<AuditReport> {
    let rates = local_rates(problem, params)?;
    let curve = variance_curve(problem, params, &rates, horizons, seeds, seed)?;
    let mut report = AuditReport::new("lemma6");
    for &(h, e) in &curve {
        report.push_info(format!("E||omega_H - omega*||^2 at H={h}"), e, f64::NAN, e.is_finite());
    }
    let xs: Vec<f64> = curve.iter().map(|c| c.0 as f64).collect();
    let ys: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let fit = stats::log_log_fit(&xs, &ys)?;
    report.push("log-log slope (lower)", fit.slope, th.slope_min, fit.slope >= th.slope_min);
    report.push("log-log slope (upper)", fit.slope, th.slope_max, fit.slope <= th.slope_max);
    report.notes.push(format!("{seeds} seeds per H; fit R^2 {}", fit.r_squared));
    Ok(report)
}

/// Keeps points above the numerical floor `1e-11 ||omega*||`.
pub fn pre_floor(points: &[(usize, f64)], scale: f64) -> Vec<(usize, f64)> {
    points.iter().copied().filter(|&(_, e)| e > 1e-11 * scale.max(1e-300)).collect()
}

/// Exponential decay of the deterministic-recursion error in `H`.
pub fn lemma7(problem: &Problem, params: &PolicyParams, horizons: &[usize], th: &AuditThresholds) -> Result<AuditReport> {
    let rates = local_rates(problem, params)?;
    let probe = asgd::bias_decay_probe(&problem.mdp, params, horizons, &rates, 1e-10)?;
    let scale = oracle::exact_natural_gradient(&problem.mdp, params, 1e-10)?.omega_star.norm();
    let kept = pre_floor(&probe, scale);
    let mut report = AuditReport::new("lemma7");
    for &(h, e) in &probe {
        report.push_info(format!("||E[omega_H] - omega*|| at H={h}"), e, f64::NAN, e.is_finite());
    }
    if kept.len() < 3 {
        report.push("pre-floor points", kept.len() as f64, 3.0, false);
        return Ok(report);
    }
    let xs: Vec<f64> = kept.iter().map(|c| c.0 as f64).collect();
    let ys: Vec<f64> = kept.iter().map(|c| c.1).collect();
    let fit = stats::log_linear_fit(&xs, &ys)?;
    report.push("fitted decay rate kappa", -fit.slope, 0.0, fit.slope < 0.0);
    report.push("log-linear R^2", fit.r_squared, th.r_squared, fit.r_squared >= th.r_squared);
    let control: Vec<f64> = xs.iter().map(|h| 1.0 / h).collect();
    let control_fit = stats::log_linear_fit(&xs, &control)?;
    report.push(
        "log-linear R^2 of a 1/H sequence (must fall short)",
        control_fit.r_squared,
        th.r_squared,
        control_fit.r_squared < th.r_squared,
    );
    Ok(report)
}

/// Runs `seeds` replicates of `config` (seeds `config.seed + i`).
pub fn run_seeds(problem: &Problem, config: &AnpgConfig, seeds: usize) -> Result<Vec<RunHistory>> {
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = AnpgConfig {
                seed: config.seed + i as u64,
                ..config.clone()
            };
            driver::run_anpg(problem, &cfg)
        })
        .collect()
}

/// Seed-averaged check of the averaged-gap bound and the gradient-norm bound.
pub fn corollary1(name: &str, histories: &[RunHistory], th: &AuditThresholds) -> Result<AuditReport> {
    let a = driver::corollary_bound_audit(histories)?;
    let mut report = AuditReport::new("corollary1");
    report.push(format!("{name}: averaged gap <= bound"), a.lhs, a.rhs, a.pass);
    report.push(format!("{name}: eps_bias probe"), a.eps_bias, th.eps_bias_max, a.eps_bias <= th.eps_bias_max);
    report.push(format!("{name}: mean ||grad J||^2 <= bound"), a.grad_lhs, a.grad_rhs, a.grad_pass);
    report.notes.push(format!(
        "{name}: terms sqrt(eps)={} first-order={} second-order={} initial={}; single-seed violations {}",
        a.term_bias, a.term_first_order, a.term_second_order, a.term_initial, a.single_seed_violations
    ));
    Ok(report)
}

/// Seed-median averaged gap for each `(K, H)` and the step-count accounting.
pub fn scaling(
    problem: &Problem,
    base: &AnpgConfig,
    pairs: &[(usize, usize)],
    seeds: usize,
    th: &AuditThresholds,
) -> Result<(AuditReport, Vec<RunHistory>)> {
    let mut report = AuditReport::new("scaling");
    let mut medians = Vec::new();
    let mut all = Vec::new();
    let mut worst_dev = 0.0_f64;
    let gamma = problem.mdp.gamma();
    for &(k, h) in pairs {
        let config = AnpgConfig { k, h, ..base.clone() };
        let runs = run_seeds(problem, &config, seeds)?;
        let gaps: Vec<f64> = runs.iter().map(RunHistory::averaged_gap).collect();
        let median = stats::median(&gaps);
        report.push_info(format!("median averaged gap K={k} H={h}"), median, f64::NAN, median.is_finite());
        medians.push(median);
        let expected = (k * h) as f64 * 2.0 / (1.0 - gamma);
        for r in &runs {
            worst_dev = worst_dev.max((r.total_env_steps() as f64 / expected - 1.0).abs());
        }
        all.extend(runs);
    }
    for (i, w) in medians.windows(2).enumerate() {
        report.push(
            format!("median gap decreases from K={} to K={}", pairs[i].0, pairs[i + 1].0),
            w[1] - w[0],
            0.0,
            w[1] < w[0],
        );
    }
    report.push(
        "max relative deviation of env steps from K H 2/(1-gamma)",
        worst_dev,
        th.step_count_rel,
        worst_dev <= th.step_count_rel,
    );
    Ok((report, all))
}

/// Deterministic-recursion error at the final parameter of each run, using
/// that run's inner rates and `H`.
pub fn final_bias(problem: &Problem, history: &RunHistory, pinv_cutoff: f64) -> Result<f64> {
    let params = problem.params(DVector::from_vec(history.final_theta.clone()))?;
    let sol = oracle::exact_natural_gradient(&problem.mdp, &params, pinv_cutoff)?;
    let exact = ExactOracle {
        fisher: sol.fisher.clone(),
        pg: sol.pg.clone(),
    };
    asgd::deterministic_error(&exact, &sol.omega_star, &sol.row_space, history.h, &history.rates)
}

/// ASGD against the SGD baseline at the same `K` and `H`.
pub fn inner_comparison(
    problem: &Problem,
    base: &AnpgConfig,
    sgd_step: Option<f64>,
    seeds: usize,
) -> Result<AuditReport> {
    let mut report = AuditReport::new("inner-comparison");
    let mut medians = Vec::new();
    for solver in [InnerSolver::Asgd, InnerSolver::Sgd { step: sgd_step }] {
        let biases: Vec<f64> = (0..seeds)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let cfg = AnpgConfig {
                    seed: base.seed + i as u64,
                    inner_solver: solver,
                    ..base.clone()
                };
                let history = driver::run_anpg(problem, &cfg)?;
                final_bias(problem, &history, cfg.pinv_cutoff)
            })
            .collect::<Result<_>>()?;
        medians.push(stats::median(&biases));
    }
    report.push_info("median final deterministic bias, ASGD", medians[0], f64::NAN, medians[0].is_finite());
    report.push_info("median final deterministic bias, SGD", medians[1], f64::NAN, medians[1].is_finite());
    report.push("ASGD bias <= SGD bias", medians[0], medians[1], medians[0] <= medians[1]);
    Ok(report)
}

/// A unit-reward MDP and a random one at each discount, for the moment audit.
/// The unit-reward case makes `E[Q_hat^2]` as large as the dynamics allow.
pub fn moment_problems(gammas: &[f64]) -> Result<Vec<(String, Problem)>> {
    let mut out = Vec::new();
    for &gamma in gammas {
        let mut file = generators::random(3, 2, 9, 2, gamma)?.to_file();
        file.reward = vec![1.0; file.reward.len()];
        out.push(("unit-reward".to_string(), Problem::tabular(TabularMdp::from_file(&file)?)));
        out.push(("random".to_string(), Problem::tabular(generators::random(3, 2, 3, 2, gamma)?)));
    }
    Ok(out)
}

/// Five `(name, problem, theta)` cases for the covariance audit.
pub fn lemma5_cases() -> Result<Vec<(String, Problem, DVector<f64>)>> {
    let mut out = Vec::new();
    for name in crate::instances::NAMES {
        let p = crate::instances::by_name(name).expect("listed instance")?;
        let theta = DVector::zeros(p.family.dim());
        out.push((name.to_string(), p, theta));
    }
    let ring = crate::instances::ring()?;
    out.push(("ring (shifted)".to_string(), ring, DVector::from_vec(vec![0.4, -0.3])));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_report_does_not_pass() {
        let mut r = AuditReport::new("x");
        assert!(!r.passed());
        r.push("a", 1.0, 2.0, true);
        assert!(r.passed());
        r.push("b", 3.0, 2.0, false);
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn report_csv_layout() {
        let mut r = AuditReport::new("x");
        r.push("slope", -1.0, -0.65, true);
        assert_eq!(r.csv_string().unwrap(), "check,measured,threshold,pass\nslope,-1,-0.65,true\n");
    }

    #[test]
    fn four_sigma_tail_mass() {
        assert_relative_eq!(normal_tail(4.0), 6.334248e-5, max_relative = 1e-5);
    }

    #[test]
    fn floor_trimming() {
        let pts = [(16, 1.0), (32, 1e-3), (64, 1e-12)];
        assert_eq!(pre_floor(&pts, 1.0).len(), 2);
        assert_eq!(pre_floor(&pts, 1e-3).len(), 3);
    }

    #[test]
    fn thresholds_parse_with_defaults() {
        let th: AuditThresholds = toml::from_str("tv = 0.05").unwrap();
        assert_eq!(th.tv, 0.05);
        assert_eq!(th.ci_sigma, 4.0);
        assert!(toml::from_str::<AuditThresholds>("bogus = 1").is_err());
    }

    #[test]
    fn lemma7_needs_three_points() {
        let ring = crate::instances::ring().unwrap();
        let r = lemma7(&ring, &ring.zeros(), &[4096, 8192], &AuditThresholds::default()).unwrap();
        assert!(!r.passed());
    }
}
