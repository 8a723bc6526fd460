//! Softmax policy parameterizations, score functions and the smoothness
//! constants the learning rates are built from.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AnpgError, Result};
use crate::linalg;
use crate::mdp::{cumulative, sample_index, MdpFile, TabularMdp};
use crate::oracle;
use crate::rng::RngStream;

/// A fixed stochastic policy as a dense `n_states x n_actions` table.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl PolicyTable {
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(AnpgError::DimensionMismatch {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
                return Err(AnpgError::invalid(
                    "policy",
                    format!("row s={s} is not a distribution (sum {sum})"),
                ));
            }
        }
        let cum = probs.chunks(n_actions).flat_map(cumulative).collect();
        Ok(Self {
            n_states,
            n_actions,
            probs,
            cum,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self::from_probs(n_states, n_actions, vec![p; n_states * n_actions])
            .expect("uniform table is valid")
    }

    /// Deterministic policy picking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(AnpgError::IndexOutOfRange {
                    what: "action",
                    index: a,
                    limit: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::from_probs(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_action(&self, s: usize, rng: &mut RngStream) -> usize {
        let start = s * self.n_actions;
        sample_index(&self.cum[start..start + self.n_actions], rng.random::<f64>())
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(AnpgError::DimensionMismatch {
                what: "policy table pairs",
                expected: mdp.n_pairs(),
                got: self.n_states * self.n_actions,
            });
        }
        Ok(())
    }
}

/// Per-pair feature vectors `phi(s, a)` in `R^dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(AnpgError::invalid("n_features", "must be positive"));
        }
        if values.len() != n_states * n_actions * dim {
            return Err(AnpgError::DimensionMismatch {
                what: "features",
                expected: n_states * n_actions * dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AnpgError::NonFinite("features".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            values,
        })
    }

    /// Loads `n_features` and `features` from an MDP-format file.
    pub fn from_file(file: &MdpFile) -> Result<Self> {
        let dim = file
            .n_features
            .ok_or_else(|| AnpgError::invalid("n_features", "missing"))?;
        let values = file
            .features
            .clone()
            .ok_or_else(|| AnpgError::invalid("features", "missing"))?;
        Self::new(file.n_states, file.n_actions, dim, values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&MdpFile::read(path)?)
    }

    /// Planar features on the unit circle: action `a` in state `s` sits at
    /// angle `2 pi a / n_actions + s pi / (2 n_actions)`. With three or more
    /// actions the centered features span the plane, so the Fisher matrix is
    /// full rank at every parameter.
    pub fn ring(n_states: usize, n_actions: usize) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions * 2);
        for s in 0..n_states {
            for a in 0..n_actions {
                let angle = std::f64::consts::TAU * a as f64 / n_actions as f64
                    + std::f64::consts::PI * s as f64 / (2.0 * n_actions as f64);
                values.push(angle.cos());
                values.push(angle.sin());
            }
        }
        Self::new(n_states, n_actions, 2, values).expect("ring features are well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyFamily {
    /// One logit per `(s, a)`; `theta[s * n_actions + a]`.
    TabularSoftmax { n_states: usize, n_actions: usize },
    /// Logits `phi(s, a)^T theta`.
    FeatureSoftmax(FeatureTable),
}

impl PolicyFamily {
    pub fn tabular(mdp: &TabularMdp) -> Self {
        PolicyFamily::TabularSoftmax {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax {
                n_states,
                n_actions,
            } => n_states * n_actions,
            PolicyFamily::FeatureSoftmax(f) => f.dim(),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax { n_states, .. } => *n_states,
            PolicyFamily::FeatureSoftmax(f) => f.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            PolicyFamily::TabularSoftmax { n_actions, .. } => *n_actions,
            PolicyFamily::FeatureSoftmax(f) => f.n_actions(),
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, PolicyFamily::TabularSoftmax { .. })
    }

    pub fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(AnpgError::invalid(
                "policy family",
                format!(
                    "built for {}x{} pairs, MDP has {}x{}",
                    self.n_states(),
                    self.n_actions(),
                    mdp.n_states(),
                    mdp.n_actions()
                ),
            ));
        }
        Ok(())
    }
}

/// Parameter vector plus the family that turns it into a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    theta: DVector<f64>,
    family: Arc<PolicyFamily>,
}

impl PolicyParams {
    pub fn new(family: Arc<PolicyFamily>, theta: DVector<f64>) -> Result<Self> {
        let d = family.dim();
        if d == 0 {
            return Err(AnpgError::invalid("theta", "dimension must be positive"));
        }
        if theta.len() != d {
            return Err(AnpgError::DimensionMismatch {
                what: "theta",
                expected: d,
                got: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(AnpgError::NonFinite("theta".into()));
        }
        Ok(Self { theta, family })
    }

    pub fn zeros(family: Arc<PolicyFamily>) -> Self {
        let d = family.dim();
        Self::new(family, DVector::zeros(d)).expect("zero parameters are valid")
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(self.family.clone(), theta)
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn family(&self) -> &Arc<PolicyFamily> {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check_pair(&self, s: usize, a: Option<usize>) -> Result<()> {
        let (ns, na) = (self.family.n_states(), self.family.n_actions());
        if s >= ns {
            return Err(AnpgError::IndexOutOfRange {
                what: "state",
                index: s,
                limit: ns,
            });
        }
        if let Some(a) = a {
            if a >= na {
                return Err(AnpgError::IndexOutOfRange {
                    what: "action",
                    index: a,
                    limit: na,
                });
            }
        }
        Ok(())
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        match self.family.as_ref() {
            PolicyFamily::TabularSoftmax { n_actions, .. } => {
                self.theta.as_slice()[s * n_actions..(s + 1) * n_actions].to_vec()
            }
            PolicyFamily::FeatureSoftmax(f) => (0..f.n_actions())
                .map(|a| {
                    f.phi(s, a)
                        .iter()
                        .zip(self.theta.iter())
                        .map(|(p, t)| p * t)
                        .sum()
                })
                .collect(),
        }
    }

    fn distribution_unchecked(&self, s: usize) -> Vec<f64> {
        let logits = self.logits(s);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        probs
    }

    /// `pi_theta(. | s)`: softmax of the state's logits.
    pub fn action_distribution(&self, s: usize) -> Result<Vec<f64>> {
        self.check_pair(s, None)?;
        Ok(self.distribution_unchecked(s))
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        self.check_pair(s, Some(a))?;
        let logits = self.logits(s);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logits[a] - lse)
    }

    fn score_with(&self, s: usize, a: usize, probs: &[f64]) -> DVector<f64> {
        match self.family.as_ref() {
            PolicyFamily::TabularSoftmax { n_actions, .. } => {
                let mut g = DVector::zeros(self.dim());
                for (b, &p) in probs.iter().enumerate() {
                    g[s * n_actions + b] = if a == b { 1.0 - p } else { -p };
                }
                g
            }
            PolicyFamily::FeatureSoftmax(f) => {
                let mut g = DVector::from_column_slice(f.phi(s, a));
                for (b, &p) in probs.iter().enumerate() {
                    for (gi, &phi) in g.iter_mut().zip(f.phi(s, b)) {
                        *gi -= p * phi;
                    }
                }
                g
            }
        }
    }

    /// `grad_theta log pi_theta(a | s)`.
    pub fn score(&self, s: usize, a: usize) -> Result<DVector<f64>> {
        self.check_pair(s, Some(a))?;
        Ok(self.score_with(s, a, &self.distribution_unchecked(s)))
    }

    /// The induced policy as a table.
    pub fn policy_table(&self) -> PolicyTable {
        let (ns, na) = (self.family.n_states(), self.family.n_actions());
        let probs = (0..ns).flat_map(|s| self.distribution_unchecked(s)).collect();
        PolicyTable::from_probs(ns, na, probs).expect("softmax rows are distributions")
    }

    /// Scores for every pair, indexed `s * n_actions + a`.
    pub fn score_table(&self) -> Vec<DVector<f64>> {
        let (ns, na) = (self.family.n_states(), self.family.n_actions());
        let mut out = Vec::with_capacity(ns * na);
        for s in 0..ns {
            let probs = self.distribution_unchecked(s);
            for a in 0..na {
                out.push(self.score_with(s, a, &probs));
            }
        }
        out
    }

    pub fn max_score_norm(&self) -> f64 {
        self.score_table().iter().map(|g| g.norm()).fold(0.0, f64::max)
    }
}

/// Constants of the score function and objective that every learning rate
/// is derived from.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothnessConstants {
    pub g: f64,
    pub b: f64,
    pub l: f64,
    pub mu_f: f64,
    pub sigma_sq: f64,
    pub gamma: f64,
}

impl SmoothnessConstants {
    /// Fills `L` and `sigma^2` from the closed forms:
    /// `L = B/(1-g)^2 + 2 G^2/(1-g)^3`,
    /// `sigma^2 = 2 G^4 / (mu_F^2 (1-g)^4) + 32/(1-g)^4`.
    pub fn new(g: f64, b: f64, mu_f: f64, gamma: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(AnpgError::invalid("G", format!("{g} must be positive")));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(AnpgError::invalid("B", format!("{b} must be nonnegative")));
        }
        if !(mu_f > 0.0 && mu_f.is_finite()) {
            return Err(AnpgError::invalid("mu_F", format!("{mu_f} must be positive")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(AnpgError::invalid("gamma", format!("{gamma} not in (0,1)")));
        }
        let c = 1.0 - gamma;
        let l = b / c.powi(2) + 2.0 * g * g / c.powi(3);
        let sigma_sq = 2.0 * g.powi(4) / (mu_f * mu_f * c.powi(4)) + 32.0 / c.powi(4);
        Ok(Self {
            g,
            b,
            l,
            mu_f,
            sigma_sq,
            gamma,
        })
    }

    /// Outer step size `mu_F^2 / (4 G^2 L)`.
    pub fn corollary_eta(&self) -> f64 {
        self.mu_f * self.mu_f / (4.0 * self.g * self.g * self.l)
    }
}

#[derive(Clone, Debug)]
pub struct MeasureOptions {
    /// Random pairs drawn per grid point for the smoothness estimate.
    pub pairs_per_point: usize,
    /// Radius of the ball around each grid point the pairs are drawn from.
    pub ball_radius: f64,
    pub mu_floor: f64,
    pub seed: u64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            pairs_per_point: 16,
            ball_radius: 2.0,
            mu_floor: 1e-4,
            seed: 0x6d65_6173,
        }
    }
}

/// Smallest eigenvalue of the exact Fisher matrix. For tabular softmax the
/// matrix is restricted to the complement of the per-state constant shifts,
/// which it annihilates identically.
pub fn fisher_lower_bound(mdp: &TabularMdp, params: &PolicyParams) -> Result<f64> {
    let fisher = oracle::exact_fisher(mdp, params)?;
    Ok(restricted_min_eigenvalue(params.family(), &fisher))
}

/// Orthonormal basis of the parameter directions the family can identify:
/// the per-state zero-sum subspace for tabular softmax, everything otherwise.
pub fn identifiable_basis(family: &PolicyFamily) -> DMatrix<f64> {
    match family {
        PolicyFamily::TabularSoftmax {
            n_states,
            n_actions,
        } => linalg::blockwise_zero_sum_basis(*n_states, *n_actions),
        PolicyFamily::FeatureSoftmax(f) => DMatrix::identity(f.dim(), f.dim()),
    }
}

pub fn restricted_min_eigenvalue(family: &PolicyFamily, fisher: &DMatrix<f64>) -> f64 {
    let q = identifiable_basis(family);
    linalg::min_eigenvalue(&(q.transpose() * fisher * &q))
}

fn random_in_ball(center: &DVector<f64>, radius: f64, rng: &mut RngStream) -> DVector<f64> {
    let d = center.len();
    let mut dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = dir.norm();
    if n > 0.0 {
        dir /= n;
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center + dir * r
}

fn max_score_gap(a: &PolicyParams, b: &PolicyParams) -> f64 {
    a.score_table()
        .iter()
        .zip(b.score_table().iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Measures `G`, `B` and `mu_F` over a grid of parameters and fills `L` and
/// `sigma^2` from them.
pub fn measure_constants(
    grid: &[PolicyParams],
    mdp: &TabularMdp,
    options: &MeasureOptions,
) -> Result<SmoothnessConstants> {
    let first = grid
        .first()
        .ok_or_else(|| AnpgError::invalid("params_grid", "must be nonempty"))?;
    first.family().check_mdp(mdp)?;

    let g = grid
        .iter()
        .map(PolicyParams::max_score_norm)
        .fold(0.0, f64::max);

    let mut rng = RngStream::new(options.seed);
    let mut b = 0.0_f64;
    let mut ratio = |p: &PolicyParams, q: &PolicyParams| {
        let dist = (p.theta() - q.theta()).norm();
        if dist > 0.0 {
            b = b.max(max_score_gap(p, q) / dist);
        }
    };
    for (i, p) in grid.iter().enumerate() {
        for q in &grid[i + 1..] {
            ratio(p, q);
        }
        for _ in 0..options.pairs_per_point {
            let t1 = random_in_ball(p.theta(), options.ball_radius, &mut rng);
            let far = random_in_ball(p.theta(), options.ball_radius, &mut rng);
            let near = random_in_ball(&t1, 1e-4, &mut rng);
            let p1 = p.with_theta(t1)?;
            ratio(&p1, &p.with_theta(far)?);
            ratio(&p1, &p.with_theta(near)?);
        }
    }

    let mut mu_f = f64::INFINITY;
    for p in grid {
        mu_f = mu_f.min(fisher_lower_bound(mdp, p)?);
    }
    if !(mu_f > options.mu_floor) {
        return Err(AnpgError::FisherDegenerate {
            mu_f,
            floor: options.mu_floor,
            iteration: None,
        });
    }
    SmoothnessConstants::new(g, b, mu_f, mdp.gamma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn tabular(ns: usize, na: usize) -> Arc<PolicyFamily> {
        Arc::new(PolicyFamily::TabularSoftmax {
            n_states: ns,
            n_actions: na,
        })
    }

    #[test]
    fn zero_logits_give_uniform() {
        let p = PolicyParams::zeros(tabular(3, 4));
        for s in 0..3 {
            for q in p.action_distribution(s).unwrap() {
                assert_abs_diff_eq!(q, 0.25, epsilon = 1e-15);
            }
        }
        assert!(p.action_distribution(3).is_err());
    }

    #[test]
    fn softmax_identity() {
        let p = PolicyParams::new(tabular(1, 2), DVector::from_vec(vec![3f64.ln(), 0.0])).unwrap();
        let d = p.action_distribution(0).unwrap();
        assert_abs_diff_eq!(d[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = PolicyParams::new(tabular(1, 3), DVector::from_vec(vec![800.0, 0.0, -800.0])).unwrap();
        let d = p.action_distribution(0).unwrap();
        assert!(d.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_features_give_uniform() {
        let f = FeatureTable::new(2, 3, 2, vec![0.0; 12]).unwrap();
        let p = PolicyParams::new(
            Arc::new(PolicyFamily::FeatureSoftmax(f)),
            DVector::from_vec(vec![1.0, -2.0]),
        )
        .unwrap();
        for q in p.action_distribution(1).unwrap() {
            assert_abs_diff_eq!(q, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tabular_uniform_score() {
        let p = PolicyParams::zeros(tabular(2, 2));
        let g = p.score(1, 0).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn orthonormal_feature_score() {
        // phi(s,0) = e1, phi(s,1) = e2, theta = 0: score(s,0) = (e1 - e2)/2
        let f = FeatureTable::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = PolicyParams::zeros(Arc::new(PolicyFamily::FeatureSoftmax(f)));
        let g = p.score(0, 0).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn constants_closed_forms() {
        let c = SmoothnessConstants::new(1.0, 1.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(c.l, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.sigma_sq, 544.0, epsilon = 1e-12);
        assert!(SmoothnessConstants::new(1.0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn measured_g_one_state_two_actions() {
        let mdp = TabularMdp::new(1, 2, 0.5, vec![1.0], vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let p = PolicyParams::zeros(tabular(1, 2));
        let c = measure_constants(&[p], &mdp, &MeasureOptions::default()).unwrap();
        assert_abs_diff_eq!(c.g, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        // restricted Fisher at the uniform policy: 1/2 on the contrast (1,-1)/sqrt 2
        assert_abs_diff_eq!(c.mu_f, 0.5, epsilon = 1e-12);
        // the score Jacobian is -(diag pi - pi pi^T), spectral norm at most 1/2
        assert!(c.b > 0.3 && c.b <= 0.5 + 1e-6, "B = {}", c.b);
    }

    #[test]
    fn measurement_rejects_degenerate_features() {
        let mdp = generators::random(2, 3, 1, 2, 0.8).unwrap();
        // phi constant per state -> all scores vanish
        let f = FeatureTable::new(2, 3, 1, vec![1.0; 6]).unwrap();
        let p = PolicyParams::zeros(Arc::new(PolicyFamily::FeatureSoftmax(f)));
        let err = measure_constants(&[p], &mdp, &MeasureOptions::default());
        assert!(matches!(err, Err(AnpgError::FisherDegenerate { .. })));
    }

    fn random_params(family: Arc<PolicyFamily>, seed: u64, scale: f64) -> PolicyParams {
        let mut rng = RngStream::new(seed);
        let theta = DVector::from_fn(family.dim(), |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        PolicyParams::new(family, theta).unwrap()
    }

    fn families() -> Vec<Arc<PolicyFamily>> {
        vec![
            tabular(3, 4),
            Arc::new(PolicyFamily::FeatureSoftmax(FeatureTable::ring(3, 4))),
            Arc::new(PolicyFamily::FeatureSoftmax({
                let mut rng = RngStream::new(99);
                let vals = (0..3 * 4 * 5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                FeatureTable::new(3, 4, 5, vals).unwrap()
            })),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn score_matches_finite_differences(seed in 0u64..10_000, which in 0usize..3, s in 0usize..3, a in 0usize..4) {
            let p = random_params(families()[which].clone(), seed, 1.0);
            let g = p.score(s, a).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(p.dim(), |i, _| {
                let mut up = p.theta().clone();
                let mut dn = p.theta().clone();
                up[i] += h;
                dn[i] -= h;
                (p.with_theta(up).unwrap().log_prob(s, a).unwrap()
                    - p.with_theta(dn).unwrap().log_prob(s, a).unwrap()) / (2.0 * h)
            });
            let err = (&fd - &g).norm() / g.norm().max(1e-3);
            prop_assert!(err < 1e-5, "relative error {}", err);
        }

        #[test]
        fn score_has_zero_mean(seed in 0u64..10_000, which in 0usize..3) {
            let p = random_params(families()[which].clone(), seed, 2.0);
            for s in 0..3 {
                let probs = p.action_distribution(s).unwrap();
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut mean = DVector::zeros(p.dim());
                for (a, &q) in probs.iter().enumerate() {
                    mean += p.score(s, a).unwrap() * q;
                }
                prop_assert!(mean.norm() < 1e-10);
            }
        }

        #[test]
        fn score_is_bounded(seed in 0u64..10_000, which in 0usize..3, scale in 0.0f64..20.0) {
            let family = families()[which].clone();
            let bound = match family.as_ref() {
                PolicyFamily::TabularSoftmax { .. } => std::f64::consts::SQRT_2,
                PolicyFamily::FeatureSoftmax(f) => 2.0 * f.max_norm(),
            };
            let p = random_params(family, seed, scale);
            prop_assert!(p.max_score_norm() <= bound + 1e-12);
        }
    }
}
