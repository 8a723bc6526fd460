//! Accelerated stochastic gradient descent on the compatible loss, with
//! tail averaging over the second half of the iterates.
//!
//! Each step does
//!
//! ```text
//! y  = alpha x + (1 - alpha) v
//! x' = y - delta g(y)
//! z  = beta y + (1 - beta) v
//! v' = z - xi g(y)
//! ```
//!
//! and the output is the mean of `x_h` for `H/2 < h <= H`.

use nalgebra::{DMatrix, DVector};

use crate::error::{AnpgError, Result};
use crate::mdp::TabularMdp;
use crate::oracle;
use crate::policy::{PolicyParams, SmoothnessConstants};
use crate::rng::RngStream;
use crate::sampler::GradientSampler;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AsgdRates {
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub delta: f64,
}

impl AsgdRates {
    pub fn new(alpha: f64, beta: f64, xi: f64, delta: f64) -> Result<Self> {
        let open_unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(AnpgError::invalid(name, format!("{x} not in (0,1)")))
            }
        };
        open_unit("alpha", alpha)?;
        open_unit("beta", beta)?;
        for (name, x) in [("xi", xi), ("delta", delta)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(AnpgError::invalid(name, format!("{x} must be positive")));
            }
        }
        Ok(Self {
            alpha,
            beta,
            xi,
            delta,
        })
    }

    /// `alpha = beta = 1`: the recursion collapses to `x' = x - step g(x)`.
    pub fn gradient_descent(step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(AnpgError::invalid("step", format!("{step} must be positive")));
        }
        Ok(Self {
            alpha: 1.0,
            beta: 1.0,
            xi: step,
            delta: step,
        })
    }
}

/// Rates from `G` and `mu_F`:
/// `alpha = 3 sqrt5 G^2 / (mu_F + 3 sqrt5 G^2)`, `beta = mu_F / (9 G^2)`,
/// `xi = 1 / (3 sqrt5 G^2)`, `delta = 1 / (5 G^2)`.
pub fn make_rates(constants: &SmoothnessConstants) -> Result<AsgdRates> {
    rates_from(constants.g, constants.mu_f)
}

pub fn rates_from(g: f64, mu_f: f64) -> Result<AsgdRates> {
    if !(mu_f > 0.0) {
        return Err(AnpgError::invalid("mu_F", format!("{mu_f} must be positive")));
    }
    if !(g > 0.0) {
        return Err(AnpgError::invalid("G", format!("{g} must be positive")));
    }
    let g2 = g * g;
    let s = 3.0 * 5f64.sqrt() * g2;
    let beta = mu_f / (9.0 * g2);
    if beta >= 1.0 {
        return Err(AnpgError::invalid(
            "beta",
            format!("mu_F / (9 G^2) = {beta} is not below 1 (mu_F = {mu_f}, G = {g})"),
        ));
    }
    AsgdRates::new(s / (mu_f + s), beta, 1.0 / s, 1.0 / (5.0 * g2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsgdState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub h: usize,
    pub tail_sum: DVector<f64>,
    pub tail_count: usize,
    pub horizon: usize,
}

impl AsgdState {
    pub fn new(dim: usize, horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            x: DVector::zeros(dim),
            v: DVector::zeros(dim),
            h: 0,
            tail_sum: DVector::zeros(dim),
            tail_count: 0,
            horizon,
        })
    }

    /// `(2/H) sum_{H/2 < h <= H} x_h` over the iterates folded so far.
    pub fn tail_average(&self) -> DVector<f64> {
        &self.tail_sum * (2.0 / self.horizon as f64)
    }
}

pub fn check_horizon(horizon: usize) -> Result<()> {
    if horizon < 2 || !horizon.is_multiple_of(2) {
        return Err(AnpgError::invalid("H", format!("H must be even and at least 2, got {horizon}")));
    }
    Ok(())
}

/// Source of compatible-loss gradients for the inner loop.
pub trait GradientOracle {
    fn dim(&self) -> usize;
    /// Gradient at `omega` for inner step `h` (1-based).
    fn gradient(&mut self, omega: &DVector<f64>, h: usize) -> Result<DVector<f64>>;
    /// Environment transitions consumed so far.
    fn env_steps(&self) -> u64 {
        0
    }
}

/// One sampled estimate per call; step `h` draws from `rng.substream(h)`.
pub struct StochasticOracle<'a> {
    sampler: GradientSampler<'a>,
    rng: RngStream,
    steps: u64,
}

impl<'a> StochasticOracle<'a> {
    pub fn new(sampler: GradientSampler<'a>, rng: RngStream) -> Self {
        Self {
            sampler,
            rng,
            steps: 0,
        }
    }
}

impl GradientOracle for StochasticOracle<'_> {
    fn dim(&self) -> usize {
        self.sampler.dim()
    }

    fn gradient(&mut self, omega: &DVector<f64>, h: usize) -> Result<DVector<f64>> {
        let g = self.sampler.grad_estimate(omega, &mut self.rng.substream(h as u64))?;
        self.steps += g.env_steps();
        Ok(g.vec)
    }

    fn env_steps(&self) -> u64 {
        self.steps
    }
}

/// Exact gradient `F omega - grad J` of the compatible loss.
#[derive(Clone, Debug)]
pub struct ExactOracle {
    pub fisher: DMatrix<f64>,
    pub pg: DVector<f64>,
}

impl ExactOracle {
    pub fn new(mdp: &TabularMdp, params: &PolicyParams) -> Result<Self> {
        let fisher = oracle::exact_fisher(mdp, params)?;
        let pg = oracle::exact_policy_gradient(mdp, params)?.pg;
        Ok(Self { fisher, pg })
    }
}

impl GradientOracle for ExactOracle {
    fn dim(&self) -> usize {
        self.pg.len()
    }

    fn gradient(&mut self, omega: &DVector<f64>, _h: usize) -> Result<DVector<f64>> {
        Ok(&self.fisher * omega - &self.pg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stochastic,
    Deterministic,
}

/// Advances the state by one step using exactly one gradient evaluation.
pub fn asgd_step(
    state: &mut AsgdState,
    rates: &AsgdRates,
    grad_at: &mut dyn FnMut(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<()> {
    let y = &state.x * rates.alpha + &state.v * (1.0 - rates.alpha);
    let g = grad_at(&y)?;
    if g.len() != y.len() {
        return Err(AnpgError::DimensionMismatch {
            what: "gradient",
            expected: y.len(),
            got: g.len(),
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(AnpgError::NonFinite(format!("gradient at inner step {}", state.h + 1)));
    }
    let x = &y - &g * rates.delta;
    let z = &y * rates.beta + &state.v * (1.0 - rates.beta);
    state.v = z - &g * rates.xi;
    state.x = x;
    state.h += 1;
    if state.h > state.horizon / 2 {
        state.tail_sum += &state.x;
        state.tail_count += 1;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerLoopResult {
    pub omega: DVector<f64>,
    pub grad_calls: usize,
    pub env_steps: u64,
    pub omega_norm: f64,
    /// Tail average after each step, when tracing is on.
    pub trace: Option<Vec<DVector<f64>>>,
    /// `x_h` after each step, when tracing is on.
    pub iterates: Option<Vec<DVector<f64>>>,
}

/// Runs `H` steps from `x = v = 0` and returns the tail average.
pub fn run_inner_loop(
    oracle: &mut dyn GradientOracle,
    horizon: usize,
    rates: &AsgdRates,
    trace: bool,
) -> Result<InnerLoopResult> {
    let mut state = AsgdState::new(oracle.dim(), horizon)?;
    let mut iterates = trace.then(Vec::new);
    let mut averages = trace.then(Vec::new);
    for h in 1..=horizon {
        asgd_step(&mut state, rates, &mut |w| oracle.gradient(w, h))?;
        if let Some(it) = &mut iterates {
            it.push(state.x.clone());
        }
        if let Some(av) = &mut averages {
            av.push(state.tail_average());
        }
    }
    let omega = state.tail_average();
    Ok(InnerLoopResult {
        omega_norm: omega.norm(),
        omega,
        grad_calls: state.h,
        env_steps: oracle.env_steps(),
        trace: averages,
        iterates,
    })
}

/// Inner loop at `params` in the given mode. Stochastic mode draws step `h`
/// from `rng.substream(h)`; deterministic mode uses exact gradients.
pub fn run_inner_loop_at(
    mdp: &TabularMdp,
    params: &PolicyParams,
    horizon: usize,
    rates: &AsgdRates,
    mode: Mode,
    rng: &RngStream,
) -> Result<InnerLoopResult> {
    match mode {
        Mode::Stochastic => {
            let sampler = GradientSampler::new(mdp, params)?;
            run_inner_loop(&mut StochasticOracle::new(sampler, rng.clone()), horizon, rates, false)
        }
        Mode::Deterministic => run_inner_loop(&mut ExactOracle::new(mdp, params)?, horizon, rates, false),
    }
}

/// Tail-averaged plain SGD baseline with a constant step.
pub fn sgd_inner_loop(
    mdp: &TabularMdp,
    params: &PolicyParams,
    horizon: usize,
    step_size: f64,
    mode: Mode,
    rng: &RngStream,
) -> Result<InnerLoopResult> {
    run_inner_loop_at(mdp, params, horizon, &AsgdRates::gradient_descent(step_size)?, mode, rng)
}

/// Error of the deterministic recursion after `H` steps, projected onto the
/// Fisher row space.
pub fn deterministic_error(
    exact: &ExactOracle,
    omega_star: &DVector<f64>,
    row_space: &DMatrix<f64>,
    horizon: usize,
    rates: &AsgdRates,
) -> Result<f64> {
    let mut oracle = exact.clone();
    let omega = run_inner_loop(&mut oracle, horizon, rates, false)?.omega;
    Ok((row_space * (omega - omega_star)).norm())
}

/// `(H, ||E[omega_H] - omega*||)` for each `H`, using the deterministic
/// recursion, which is what the conditional mean of the stochastic one obeys.
pub fn bias_decay_probe(
    mdp: &TabularMdp,
    params: &PolicyParams,
    horizons: &[usize],
    rates: &AsgdRates,
    pinv_cutoff: f64,
) -> Result<Vec<(usize, f64)>> {
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnpgError::invalid("H_list", "must be strictly increasing"));
    }
    let sol = oracle::exact_natural_gradient(mdp, params, pinv_cutoff)?;
    let exact = ExactOracle {
        fisher: sol.fisher.clone(),
        pg: sol.pg.clone(),
    };
    horizons
        .iter()
        .map(|&h| Ok((h, deterministic_error(&exact, &sol.omega_star, &sol.row_space, h, rates)?)))
        .collect()
}
