//! Outer policy loop: `theta_{k+1} = theta_k + eta omega_k`, with exact
//! diagnostics recorded at every iterate.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asgd::{self, AsgdRates, ExactOracle, StochasticOracle};
use crate::error::{AnpgError, Result};
use crate::mdp::TabularMdp;
use crate::oracle::{self, OptimalPolicy};
use crate::policy::{self, MeasureOptions, PolicyFamily, PolicyParams, SmoothnessConstants};
use crate::rng::RngStream;
use crate::sampler::GradientSampler;

/// An MDP together with the policy family optimized on it.
#[derive(Clone, Debug)]
pub struct Problem {
    pub mdp: TabularMdp,
    pub family: Arc<PolicyFamily>,
}

impl Problem {
    pub fn new(mdp: TabularMdp, family: PolicyFamily) -> Result<Self> {
        family.check_mdp(&mdp)?;
        Ok(Self {
            mdp,
            family: Arc::new(family),
        })
    }

    pub fn tabular(mdp: TabularMdp) -> Self {
        let family = Arc::new(PolicyFamily::tabular(&mdp));
        Self { mdp, family }
    }

    pub fn zeros(&self) -> PolicyParams {
        PolicyParams::zeros(self.family.clone())
    }

    pub fn params(&self, theta: DVector<f64>) -> Result<PolicyParams> {
        PolicyParams::new(self.family.clone(), theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `mu_F^2 / (4 G^2 L)` from the run's constants.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InnerSolver {
    Asgd,
    /// Tail-averaged SGD; the step defaults to `1 / (5 G^2)`.
    Sgd { step: Option<f64> },
    /// `omega_k = omega*_k` from the oracle, consuming no samples.
    ExactOracle,
}

/// Where the smoothness constants are measured: the initial parameter plus
/// `points` random parameters within `radius` of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 8,
            radius: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnpgConfig {
    pub k: usize,
    pub h: usize,
    pub eta: StepSize,
    /// Inner rates; derived from the constants when absent.
    pub rates: Option<AsgdRates>,
    pub inner_solver: InnerSolver,
    pub seed: u64,
    pub pinv_cutoff: f64,
    pub mu_floor: f64,
    pub min_inner_h: usize,
    /// Supplied constants; measured on the grid when absent.
    pub constants: Option<SmoothnessConstants>,
    pub grid: GridSpec,
    pub measure: MeasureOptions,
    pub theta0: Option<DVector<f64>>,
    pub divergence_limit: f64,
    /// Re-run the deterministic recursion at every iterate to estimate the
    /// conditional-mean error.
    pub probe_bias: bool,
    /// Cap on sampled horizons. Truncation biases the gradient estimates;
    /// off by default.
    pub max_horizon: Option<u64>,
}

impl Default for AnpgConfig {
    fn default() -> Self {
        Self {
            k: 10,
            h: 64,
            eta: StepSize::Auto,
            rates: None,
            inner_solver: InnerSolver::Asgd,
            seed: 0,
            pinv_cutoff: 1e-10,
            mu_floor: 1e-4,
            min_inner_h: 64,
            constants: None,
            grid: GridSpec::default(),
            measure: MeasureOptions::default(),
            theta0: None,
            divergence_limit: 1e6,
            probe_bias: true,
            max_horizon: None,
        }
    }
}

impl AnpgConfig {
    pub fn validate(&self) -> Result<()> {
        asgd::check_horizon(self.h)?;
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(AnpgError::invalid("eta", format!("{eta} must be positive")));
            }
        }
        if let InnerSolver::Sgd { step: Some(step) } = self.inner_solver {
            if !(step > 0.0 && step.is_finite()) {
                return Err(AnpgError::invalid("sgd_step", format!("{step} must be positive")));
            }
        }
        if !(self.pinv_cutoff > 0.0 && self.pinv_cutoff < 1.0) {
            return Err(AnpgError::invalid("pinv_cutoff", format!("{} not in (0,1)", self.pinv_cutoff)));
        }
        if !(self.mu_floor >= 0.0) {
            return Err(AnpgError::invalid("mu_floor", "must be nonnegative"));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(AnpgError::invalid("divergence_limit", "must be positive"));
        }
        Ok(())
    }
}

/// Diagnostics at one outer iterate. The inner-loop fields describe the
/// solve performed at `theta_k` and are absent on the final record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub j: f64,
    pub gap: f64,
    pub omega_norm: Option<f64>,
    pub omega_err: Option<f64>,
    /// `||E[omega_k | theta_k] - omega*_k||` from the deterministic recursion.
    pub bias_err: Option<f64>,
    pub eps_bias_probe: f64,
    pub kl_to_opt: f64,
    /// Environment transitions consumed before reaching `theta_k`.
    pub samples_cum: u64,
    pub grad_norm_sq: f64,
    pub mu_f: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunHistory {
    pub seed: u64,
    pub k: usize,
    pub h: usize,
    pub constants: SmoothnessConstants,
    pub rates: AsgdRates,
    pub eta: f64,
    pub j_star: f64,
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    pub grad_calls: u64,
    pub final_theta: Vec<f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "k",
    "J",
    "gap",
    "omega_norm",
    "omega_err",
    "eps_bias_probe",
    "kl_to_opt",
    "samples_cum",
    "seed",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunHistory {
    /// `J* - (1/K) sum_{k<K} J(theta_k)`.
    pub fn averaged_gap(&self) -> f64 {
        let k = self.k.max(1);
        self.records[..k.min(self.records.len())].iter().map(|r| r.gap).sum::<f64>() / k as f64
    }

    pub fn total_env_steps(&self) -> u64 {
        self.records.last().map_or(0, |r| r.samples_cum)
    }

    pub fn final_theta_gap(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.gap)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                r.j.to_string(),
                r.gap.to_string(),
                opt(r.omega_norm),
                opt(r.omega_err),
                r.eps_bias_probe.to_string(),
                r.kl_to_opt.to_string(),
                r.samples_cum.to_string(),
                self.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-inner-loop rows: `k, H, samples_used, omega_norm, det_error`.
    pub fn write_inner_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "H", "samples_used", "omega_norm", "det_error"])?;
        for pair in self.records.windows(2) {
            let r = &pair[0];
            w.write_record([
                r.k.to_string(),
                self.h.to_string(),
                (pair[1].samples_cum - r.samples_cum).to_string(),
                opt(r.omega_norm),
                opt(r.bias_err),
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

/// `theta + eta omega`.
pub fn outer_step(params: &PolicyParams, omega: &DVector<f64>, eta: f64) -> Result<PolicyParams> {
    if omega.len() != params.dim() {
        return Err(AnpgError::DimensionMismatch {
            what: "omega",
            expected: params.dim(),
            got: omega.len(),
        });
    }
    params.with_theta(params.theta() + omega * eta)
}

/// Parameters the constants are measured on.
pub fn constants_grid(problem: &Problem, theta0: &DVector<f64>, grid: &GridSpec, seed: u64) -> Result<Vec<PolicyParams>> {
    let mut rng = RngStream::new(seed).substream(0x6772_6964);
    let mut out = vec![problem.params(theta0.clone())?];
    let d = theta0.len();
    for _ in 0..grid.points {
        let mut dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        dir /= dir.norm().max(f64::MIN_POSITIVE);
        let r = grid.radius * rng.random::<f64>().powf(1.0 / d as f64);
        out.push(problem.params(theta0 + dir * r)?);
    }
    Ok(out)
}

/// Measures (or takes) the constants and rates a run would use.
pub fn resolve_constants(problem: &Problem, config: &AnpgConfig) -> Result<(SmoothnessConstants, AsgdRates, f64)> {
    let theta0 = config
        .theta0
        .clone()
        .unwrap_or_else(|| DVector::zeros(problem.family.dim()));
    let constants = match config.constants {
        Some(c) => c,
        None => {
            let grid = constants_grid(problem, &theta0, &config.grid, config.measure.seed)?;
            let options = MeasureOptions {
                mu_floor: config.mu_floor,
                ..config.measure.clone()
            };
            policy::measure_constants(&grid, &problem.mdp, &options)?
        }
    };
    let rates = match config.rates {
        Some(r) => r,
        None => asgd::make_rates(&constants)?,
    };
    let eta = match config.eta {
        StepSize::Auto => constants.corollary_eta(),
        StepSize::Fixed(e) => e,
    };
    Ok((constants, rates, eta))
}

fn inner_rates(config: &AnpgConfig, constants: &SmoothnessConstants, rates: &AsgdRates) -> Result<Option<AsgdRates>> {
    Ok(match config.inner_solver {
        InnerSolver::Asgd => Some(*rates),
        InnerSolver::Sgd { step } => Some(AsgdRates::gradient_descent(
            step.unwrap_or(1.0 / (5.0 * constants.g * constants.g)),
        )?),
        InnerSolver::ExactOracle => None,
    })
}

/// Runs `K` outer iterations and records exact diagnostics at `theta_0..theta_K`.
pub fn run_anpg(problem: &Problem, config: &AnpgConfig) -> Result<RunHistory> {
    let start = Instant::now();
    config.validate()?;
    let (constants, rates, eta) = resolve_constants(problem, config)?;
    let solver_rates = inner_rates(config, &constants, &rates)?;
    let optimal = oracle::exact_optimal_policy(&problem.mdp)?;

    let mut warnings = Vec::new();
    if config.h < config.min_inner_h && !matches!(config.inner_solver, InnerSolver::ExactOracle) {
        warnings.push(format!(
            "H = {} is below min_inner_H = {}; the inner-loop error bounds may not apply",
            config.h, config.min_inner_h
        ));
    }

    let theta0 = config
        .theta0
        .clone()
        .unwrap_or_else(|| DVector::zeros(problem.family.dim()));
    let mut params = problem.params(theta0)?;
    let run_rng = RngStream::new(config.seed);
    let mut records = Vec::with_capacity(config.k + 1);
    let mut samples_cum = 0u64;
    let mut grad_calls = 0u64;

    for k in 0..=config.k {
        let (mut rec, sol) = diagnose(problem, &params, &optimal, config, k, samples_cum)?;
        if k == config.k {
            records.push(rec);
            break;
        }

        let omega = match solver_rates {
            Some(r) => {
                let sampler = GradientSampler::new(&problem.mdp, &params)?.with_max_horizon(config.max_horizon);
                let mut stochastic = StochasticOracle::new(sampler, run_rng.substream(k as u64));
                let result = asgd::run_inner_loop(&mut stochastic, config.h, &r, false)?;
                samples_cum += result.env_steps;
                grad_calls += result.grad_calls as u64;
                if config.probe_bias {
                    let mut exact = ExactOracle {
                        fisher: sol.fisher.clone(),
                        pg: sol.pg.clone(),
                    };
                    let mean = asgd::run_inner_loop(&mut exact, config.h, &r, false)?.omega;
                    rec.bias_err = Some((mean - &sol.omega_star).norm());
                }
                result.omega
            }
            None => {
                rec.bias_err = Some(0.0);
                sol.omega_star.clone()
            }
        };
        rec.omega_norm = Some(omega.norm());
        rec.omega_err = Some((&omega - &sol.omega_star).norm());
        records.push(rec);

        params = outer_step(&params, &omega, eta)
            .map_err(|_| AnpgError::NonFinite(format!("theta after outer iteration {k}")))?;
        let norm = params.theta().norm();
        if norm > config.divergence_limit {
            return Err(AnpgError::Divergence { iteration: k + 1, norm });
        }
    }

    Ok(RunHistory {
        seed: config.seed,
        k: config.k,
        h: config.h,
        constants,
        rates: solver_rates.unwrap_or(rates),
        eta,
        j_star: optimal.j_star,
        records,
        warnings,
        grad_calls,
        final_theta: params.theta().iter().copied().collect(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn diagnose(
    problem: &Problem,
    params: &PolicyParams,
    optimal: &OptimalPolicy,
    config: &AnpgConfig,
    k: usize,
    samples_cum: u64,
) -> Result<(IterationRecord, oracle::NaturalGradientSolution)> {
    let sol = oracle::exact_natural_gradient(&problem.mdp, params, config.pinv_cutoff)?;
    let mu_f = policy::restricted_min_eigenvalue(params.family(), &sol.fisher);
    if !(mu_f > config.mu_floor) {
        return Err(AnpgError::FisherDegenerate {
            mu_f,
            floor: config.mu_floor,
            iteration: Some(k),
        });
    }
    let j = oracle::exact_j(&problem.mdp, params)?;
    let rec = IterationRecord {
        k,
        j,
        gap: optimal.j_star - j,
        omega_norm: None,
        omega_err: None,
        bias_err: None,
        eps_bias_probe: oracle::transferred_loss(&problem.mdp, params, &sol.omega_star, optimal)?,
        kl_to_opt: oracle::kl_to_optimal(&problem.mdp, optimal, params)?,
        samples_cum,
        grad_norm_sq: sol.pg.norm_squared(),
        mu_f,
    };
    Ok((rec, sol))
}

/// Left and right sides of the averaged-gap bound and of the gradient-norm
/// bound, evaluated on seed averages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorollaryAudit {
    pub lhs: f64,
    pub eps_bias: f64,
    pub term_bias: f64,
    pub term_first_order: f64,
    pub term_second_order: f64,
    pub term_initial: f64,
    pub rhs: f64,
    pub pass: bool,
    pub grad_lhs: f64,
    pub grad_rhs: f64,
    pub grad_pass: bool,
    /// Seeds whose own gap exceeds their own bound.
    pub single_seed_violations: usize,
}

struct SeedTerms {
    gap: f64,
    first: f64,
    second: f64,
    grad: f64,
    eps: f64,
}

fn seed_terms(h: &RunHistory) -> Result<SeedTerms> {
    let k = h.k;
    let inner = &h.records[..k];
    let mean = |f: &dyn Fn(&IterationRecord) -> Option<f64>, what: &str| -> Result<f64> {
        let mut acc = 0.0;
        for r in inner {
            acc += f(r).ok_or_else(|| AnpgError::invalid("history", format!("record {} lacks {what}", r.k)))?;
        }
        Ok(acc / k as f64)
    };
    Ok(SeedTerms {
        gap: h.averaged_gap(),
        first: mean(&|r| r.bias_err, "bias_err")?,
        second: mean(&|r| r.omega_err.map(|e| e * e), "omega_err")?,
        grad: mean(&|r| Some(r.grad_norm_sq), "grad_norm_sq")?,
        eps: inner.iter().map(|r| r.eps_bias_probe).fold(0.0, f64::max),
    })
}

fn rhs_terms(c: &SmoothnessConstants, k: usize, eps: f64, first: f64, second: f64, kl0: f64) -> [f64; 4] {
    let (g2, mu2) = (c.g * c.g, c.mu_f * c.mu_f);
    [
        eps.max(0.0).sqrt(),
        c.g * first,
        c.b / (4.0 * c.l) * (mu2 / g2 + g2) * second,
        g2 / (mu2 * k as f64) * (c.b / (1.0 - c.gamma) + 4.0 * c.l * kl0),
    ]
}

/// Audits the averaged-gap bound and the gradient-norm bound over seed
/// replicates of the same configuration.
pub fn corollary_bound_audit(histories: &[RunHistory]) -> Result<CorollaryAudit> {
    let first = histories
        .first()
        .ok_or_else(|| AnpgError::invalid("histories", "need at least one run"))?;
    if first.k == 0 {
        return Err(AnpgError::invalid("K", "the audit needs K >= 1"));
    }
    if histories.iter().any(|h| h.k != first.k || h.constants != first.constants) {
        return Err(AnpgError::invalid("histories", "runs differ in K or constants"));
    }
    let c = first.constants;
    let k = first.k;
    let kl0 = first.records[0].kl_to_opt;
    let terms: Vec<SeedTerms> = histories.iter().map(seed_terms).collect::<Result<_>>()?;
    let n = terms.len() as f64;
    let avg = |f: fn(&SeedTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;

    let eps = terms.iter().map(|t| t.eps).fold(0.0, f64::max);
    let [t_eps, t_first, t_second, t_init] = rhs_terms(&c, k, eps, avg(|t| t.first), avg(|t| t.second), kl0);
    let lhs = avg(|t| t.gap);
    let rhs = t_eps + t_first + t_second + t_init;

    let (g4, mu2) = (c.g.powi(4), c.mu_f * c.mu_f);
    let grad_lhs = avg(|t| t.grad);
    let grad_rhs = 8.0 * g4 * c.l / (mu2 * (1.0 - c.gamma) * k as f64) + (2.0 * g4 + mu2) * avg(|t| t.second);

    let single_seed_violations = terms
        .iter()
        .filter(|t| {
            let r: f64 = rhs_terms(&c, k, t.eps, t.first, t.second, kl0).iter().sum();
            t.gap > r
        })
        .count();

    Ok(CorollaryAudit {
        lhs,
        eps_bias: eps,
        term_bias: t_eps,
        term_first_order: t_first,
        term_second_order: t_second,
        term_initial: t_init,
        rhs,
        pass: lhs <= rhs,
        grad_lhs,
        grad_rhs,
        grad_pass: grad_lhs <= grad_rhs,
        single_seed_violations,
    })
}
