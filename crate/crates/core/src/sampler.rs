//! Single-trajectory unbiased estimator of the compatible-loss gradient.
//!
//! One estimate runs two rollouts of geometric length. The first lands on a
//! pair `(s, a)` distributed as the discounted occupancy. The second, started
//! from that pair, estimates either `Q(s, a)` or `V(s)` depending on a fair
//! coin, each scaled by 2 so that their difference is unbiased for `A(s, a)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{AnpgError, Result};
use crate::mdp::{sample_geometric, walk, TabularMdp};
use crate::policy::{PolicyParams, PolicyTable};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccupancySample {
    pub s_hat: usize,
    pub a_hat: usize,
    pub horizon_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub q_hat: f64,
    pub v_hat: f64,
    pub a_hat_val: f64,
    /// `true` on the value branch, where the first action is redrawn.
    pub coin: bool,
    pub horizon_used: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub vec: DVector<f64>,
    pub occupancy: OccupancySample,
    pub advantage: AdvantageEstimate,
}

impl GradEstimate {
    /// Environment transitions consumed: `T + 1` pairs in each rollout.
    pub fn env_steps(&self) -> u64 {
        self.occupancy.horizon_used + self.advantage.horizon_used + 2
    }
}

/// Gradient estimator for a fixed policy. Caches the policy table and the
/// score of every pair.
#[derive(Clone, Debug)]
pub struct GradientSampler<'a> {
    mdp: &'a TabularMdp,
    policy: PolicyTable,
    scores: Vec<DVector<f64>>,
    dim: usize,
    max_horizon: Option<u64>,
}

impl<'a> GradientSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, params: &PolicyParams) -> Result<Self> {
        params.family().check_mdp(mdp)?;
        Ok(Self {
            mdp,
            policy: params.policy_table(),
            scores: params.score_table(),
            dim: params.dim(),
            max_horizon: None,
        })
    }

    /// Truncates every sampled horizon at `cap`. The estimates are biased
    /// whenever the cap binds.
    pub fn with_max_horizon(mut self, cap: Option<u64>) -> Self {
        self.max_horizon = cap;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn score(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.scores[s * self.mdp.n_actions() + a]
    }

    fn horizon(&self, rng: &mut RngStream) -> u64 {
        let t = sample_geometric(&mut rng.split(), 1.0 - self.mdp.gamma())
            .expect("gamma in (0,1) gives a valid success probability");
        self.max_horizon.map_or(t, |cap| t.min(cap))
    }

    /// Runs the policy from `s_0 ~ rho` for a geometric number of steps and
    /// returns the last pair.
    pub fn sample_occupancy_pair(&self, rng: &mut RngStream) -> OccupancySample {
        let horizon = self.horizon(rng);
        let mut walk_rng = rng.split();
        let s0 = self.mdp.sample_initial_state(&mut walk_rng);
        let (s_hat, a_hat) = walk(self.mdp, &self.policy, s0, None, horizon, &mut walk_rng, |_, _| {});
        OccupancySample {
            s_hat,
            a_hat,
            horizon_used: horizon,
        }
    }

    /// Advantage estimate at `(s_hat, a_hat)` from one fresh rollout.
    pub fn sample_advantage(&self, s_hat: usize, a_hat: usize, rng: &mut RngStream) -> Result<AdvantageEstimate> {
        self.mdp.check_state(s_hat)?;
        self.mdp.check_action(a_hat)?;
        Ok(self.advantage_unchecked(s_hat, a_hat, rng))
    }

    fn advantage_unchecked(&self, s_hat: usize, a_hat: usize, rng: &mut RngStream) -> AdvantageEstimate {
        let horizon = self.horizon(rng);
        let coin = rng.split().random_bool(0.5);
        let mut walk_rng = rng.split();
        let a0 = if coin {
            self.policy.sample_action(s_hat, &mut walk_rng)
        } else {
            a_hat
        };
        let mut total = 0.0;
        walk(self.mdp, &self.policy, s_hat, Some(a0), horizon, &mut walk_rng, |s, a| {
            total += self.mdp.reward(s, a);
        });
        let (q_hat, v_hat) = if coin { (0.0, 2.0 * total) } else { (2.0 * total, 0.0) };
        AdvantageEstimate {
            q_hat,
            v_hat,
            a_hat_val: q_hat - v_hat,
            coin,
            horizon_used: horizon,
        }
    }

    /// `score (score^T omega) - A_hat score / (1 - gamma)` at a freshly
    /// sampled pair.
    pub fn grad_estimate(&self, omega: &DVector<f64>, rng: &mut RngStream) -> Result<GradEstimate> {
        if omega.len() != self.dim {
            return Err(AnpgError::DimensionMismatch {
                what: "omega",
                expected: self.dim,
                got: omega.len(),
            });
        }
        let occupancy = self.sample_occupancy_pair(rng);
        let advantage = self.advantage_unchecked(occupancy.s_hat, occupancy.a_hat, rng);
        let score = self.score(occupancy.s_hat, occupancy.a_hat);
        let coef = score.dot(omega) - advantage.a_hat_val / (1.0 - self.mdp.gamma());
        Ok(GradEstimate {
            vec: score * coef,
            occupancy,
            advantage,
        })
    }
}

pub fn sample_occupancy_pair(mdp: &TabularMdp, params: &PolicyParams, rng: &mut RngStream) -> Result<OccupancySample> {
    Ok(GradientSampler::new(mdp, params)?.sample_occupancy_pair(rng))
}

pub fn sample_advantage(
    mdp: &TabularMdp,
    params: &PolicyParams,
    s_hat: usize,
    a_hat: usize,
    rng: &mut RngStream,
) -> Result<AdvantageEstimate> {
    GradientSampler::new(mdp, params)?.sample_advantage(s_hat, a_hat, rng)
}

pub fn grad_estimate(
    mdp: &TabularMdp,
    params: &PolicyParams,
    omega: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<GradEstimate> {
    GradientSampler::new(mdp, params)?.grad_estimate(omega, rng)
}

/// Running sums over a batch of gradient estimates.
#[derive(Clone, Debug)]
pub struct GradBatch {
    pub n: usize,
    pub sum: DVector<f64>,
    pub sum_sq: DVector<f64>,
    /// Sum of outer products, present when requested.
    pub outer: Option<DMatrix<f64>>,
    pub env_steps: u64,
}

impl GradBatch {
    fn empty(dim: usize, with_outer: bool) -> Self {
        Self {
            n: 0,
            sum: DVector::zeros(dim),
            sum_sq: DVector::zeros(dim),
            outer: with_outer.then(|| DMatrix::zeros(dim, dim)),
            env_steps: 0,
        }
    }

    fn push(&mut self, g: &GradEstimate) {
        self.n += 1;
        self.sum += &g.vec;
        self.sum_sq += g.vec.component_mul(&g.vec);
        if let Some(m) = &mut self.outer {
            m.ger(1.0, &g.vec, &g.vec, 1.0);
        }
        self.env_steps += g.env_steps();
    }

    fn merge(mut self, other: GradBatch) -> Self {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        if let (Some(a), Some(b)) = (&mut self.outer, other.outer) {
            *a += b;
        }
        self.env_steps += other.env_steps;
        self
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.n as f64
    }

    /// Standard error of each component of the mean.
    pub fn std_err(&self) -> DVector<f64> {
        let n = self.n as f64;
        let mean = self.mean();
        DVector::from_fn(self.sum.len(), |i, _| {
            let var = (self.sum_sq[i] / n - mean[i] * mean[i]).max(0.0) * n / (n - 1.0);
            (var / n).sqrt()
        })
    }

    pub fn second_moment(&self) -> Option<DMatrix<f64>> {
        self.outer.as_ref().map(|m| m / self.n as f64)
    }
}

const BATCH_CHUNK: usize = 4096;

/// Draws `n` estimates at `omega`, sample `i` using `rng.substream(i)`.
/// Chunks run in parallel and are merged in index order, so the result does
/// not depend on the thread count.
pub fn sample_batch(
    sampler: &GradientSampler<'_>,
    omega: &DVector<f64>,
    n: usize,
    rng: &RngStream,
    with_outer: bool,
) -> Result<GradBatch> {
    let chunks = n.div_ceil(BATCH_CHUNK);
    let parts: Vec<Result<GradBatch>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = GradBatch::empty(sampler.dim(), with_outer);
            for i in c * BATCH_CHUNK..((c + 1) * BATCH_CHUNK).min(n) {
                let g = sampler.grad_estimate(omega, &mut rng.substream(i as u64))?;
                part.push(&g);
            }
            Ok(part)
        })
        .collect();
    parts
        .into_iter()
        .try_fold(GradBatch::empty(sampler.dim(), with_outer), |acc, p| Ok(acc.merge(p?)))
}

/// Sample mean of `g g^T` over `n_samples` estimates at `omega` (normally the
/// exact natural gradient).
pub fn empirical_noise_covariance(
    sampler: &GradientSampler<'_>,
    omega: &DVector<f64>,
    n_samples: usize,
    rng: &RngStream,
) -> Result<DMatrix<f64>> {
    if n_samples < 10_000 {
        return Err(AnpgError::invalid("n_samples", format!("{n_samples} is below 10^4")));
    }
    Ok(sample_batch(sampler, omega, n_samples, rng, true)?
        .second_moment()
        .expect("outer products requested"))
}
