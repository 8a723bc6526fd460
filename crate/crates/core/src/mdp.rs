//! Finite MDPs, trajectory simulation and geometric horizons.
//!
//! Tables are dense and row-major: `reward[s * n_actions + a]` and
//! `transition[(s * n_actions + a) * n_states + s_next]`.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{AnpgError, Result};
use crate::policy::PolicyTable;
use crate::rng::RngStream;

/// Row sums and the initial distribution must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// On-disk representation of an MDP (TOML). Also carries an optional
/// feature table for feature-softmax policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub reward: Vec<f64>,
    pub transition: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl MdpFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AnpgError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AnpgError::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ZeroStates,
    ZeroActions,
    Length {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    NegativeTransition {
        s: usize,
        a: usize,
        next: usize,
        value: f64,
    },
    TransitionRowSum {
        s: usize,
        a: usize,
        sum: f64,
    },
    RewardOutOfRange {
        s: usize,
        a: usize,
        value: f64,
    },
    NegativeRho {
        s: usize,
        value: f64,
    },
    RhoSum {
        sum: f64,
    },
    Gamma {
        value: f64,
    },
}

/// Sums are shown to 12 decimals so that `0.2 + 0.7` reads as `0.9`.
fn rounded(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroStates => write!(f, "n_states must be positive"),
            Violation::ZeroActions => write!(f, "n_actions must be positive"),
            Violation::Length {
                field,
                expected,
                got,
            } => write!(f, "{field} has length {got}, expected {expected}"),
            Violation::NegativeTransition { s, a, next, value } => write!(
                f,
                "transition entry (s={s},a={a},s'={next}) is negative: {value}"
            ),
            Violation::TransitionRowSum { s, a, sum } => {
                write!(f, "transition row (s={s},a={a}) sums to {}", rounded(*sum))
            }
            Violation::RewardOutOfRange { s, a, value } => {
                write!(f, "reward out of [0,1] at (s={s},a={a}): {value}")
            }
            Violation::NegativeRho { s, value } => write!(f, "rho entry s={s} is negative: {value}"),
            Violation::RhoSum { sum } => write!(f, "rho sums to {}", rounded(*sum)),
            Violation::Gamma { value } => write!(f, "gamma {value} not strictly inside (0,1)"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Checks every structural invariant of an MDP description.
pub fn validate_mdp(file: &MdpFile) -> ValidationReport {
    let mut violations = Vec::new();
    let (ns, na) = (file.n_states, file.n_actions);
    if ns == 0 {
        violations.push(Violation::ZeroStates);
    }
    if na == 0 {
        violations.push(Violation::ZeroActions);
    }
    if !(file.gamma > 0.0 && file.gamma < 1.0) {
        violations.push(Violation::Gamma { value: file.gamma });
    }
    let mut check_len = |field: &'static str, expected: usize, got: usize| {
        if expected != got {
            violations.push(Violation::Length {
                field,
                expected,
                got,
            });
            false
        } else {
            true
        }
    };
    let rho_ok = check_len("rho", ns, file.rho.len());
    let reward_ok = check_len("reward", ns * na, file.reward.len());
    let transition_ok = check_len("transition", ns * na * ns, file.transition.len());

    if rho_ok && ns > 0 {
        for (s, &p) in file.rho.iter().enumerate() {
            if !(p >= 0.0) {
                violations.push(Violation::NegativeRho { s, value: p });
            }
        }
        let sum: f64 = file.rho.iter().sum();
        if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
            violations.push(Violation::RhoSum { sum });
        }
    }
    if reward_ok {
        for (i, &r) in file.reward.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                violations.push(Violation::RewardOutOfRange {
                    s: i / na,
                    a: i % na,
                    value: r,
                });
            }
        }
    }
    if transition_ok && ns > 0 {
        for (row_idx, row) in file.transition.chunks(ns).enumerate() {
            let (s, a) = (row_idx / na, row_idx % na);
            for (next, &p) in row.iter().enumerate() {
                if !(p >= 0.0) {
                    violations.push(Violation::NegativeTransition {
                        s,
                        a,
                        next,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                violations.push(Violation::TransitionRowSum { s, a, sum });
            }
        }
    }
    ValidationReport { violations }
}

/// Cumulative sums for inverse-CDF sampling. The entry of the last index with
/// positive mass (and everything after it) is pinned to exactly 1.
pub(crate) fn cumulative(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = row
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = row.iter().rposition(|&p| p > 0.0) {
        for c in &mut cum[last..] {
            *c = 1.0;
        }
    }
    cum
}

/// Index of the first cumulative entry strictly above `u`, for `u` in [0,1).
pub(crate) fn sample_index(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Immutable, validated tabular MDP.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    reward: Vec<f64>,
    transition: Vec<f64>,
    cum_transition: Vec<f64>,
    cum_rho: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        Self::from_file(&MdpFile {
            n_states,
            n_actions,
            gamma,
            rho,
            reward,
            transition,
            n_features: None,
            features: None,
        })
    }

    pub fn from_file(file: &MdpFile) -> Result<Self> {
        let report = validate_mdp(file);
        if !report.is_ok() {
            return Err(AnpgError::InvalidMdp(report.to_string()));
        }
        let ns = file.n_states;
        let cum_transition = file.transition.chunks(ns).flat_map(cumulative).collect();
        Ok(Self {
            n_states: ns,
            n_actions: file.n_actions,
            gamma: file.gamma,
            rho: file.rho.clone(),
            reward: file.reward.clone(),
            transition: file.transition.clone(),
            cum_transition,
            cum_rho: cumulative(&file.rho),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&MdpFile::read(path)?)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            rho: self.rho.clone(),
            reward: self.reward.clone(),
            transition: self.transition.clone(),
            n_features: None,
            features: None,
        }
    }

    /// Same dynamics under a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut file = self.to_file();
        file.gamma = gamma;
        Self::from_file(&file)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Distribution over next states for the pair `(s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s < self.n_states {
            Ok(())
        } else {
            Err(AnpgError::IndexOutOfRange {
                what: "state",
                index: s,
                limit: self.n_states,
            })
        }
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a < self.n_actions {
            Ok(())
        } else {
            Err(AnpgError::IndexOutOfRange {
                what: "action",
                index: a,
                limit: self.n_actions,
            })
        }
    }

    /// Draws `s' ~ P(· | s, a)`.
    pub fn sample_transition(&self, s: usize, a: usize, rng: &mut RngStream) -> Result<usize> {
        self.check_state(s)?;
        self.check_action(a)?;
        Ok(self.next_state(s, a, rng))
    }

    pub(crate) fn next_state(&self, s: usize, a: usize, rng: &mut RngStream) -> usize {
        let start = (s * self.n_actions + a) * self.n_states;
        sample_index(
            &self.cum_transition[start..start + self.n_states],
            rng.random::<f64>(),
        )
    }

    pub fn sample_initial_state(&self, rng: &mut RngStream) -> usize {
        sample_index(&self.cum_rho, rng.random::<f64>())
    }
}

/// Draws `T` with `P(T = t) = p (1 - p)^t` on `{0, 1, 2, ...}`.
pub fn sample_geometric(rng: &mut RngStream, success_prob: f64) -> Result<u64> {
    if !(success_prob > 0.0 && success_prob <= 1.0) {
        return Err(AnpgError::invalid(
            "success_prob",
            format!("{success_prob} not in (0,1]"),
        ));
    }
    if success_prob == 1.0 {
        return Ok(0);
    }
    let geo = Geometric::new(success_prob)
        .map_err(|e| AnpgError::invalid("success_prob", e.to_string()))?;
    Ok(geo.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub total_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&Step> {
        self.steps.last()
    }
}

/// Walks `(s_0, a_0), ..., (s_T, a_T)` and reports each visited pair.
/// Returns the final pair. Indices must already be validated.
pub(crate) fn walk(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    s0: usize,
    a0: Option<usize>,
    horizon: u64,
    rng: &mut RngStream,
    mut visit: impl FnMut(usize, usize),
) -> (usize, usize) {
    let mut s = s0;
    let mut a = match a0 {
        Some(a) => a,
        None => policy.sample_action(s, rng),
    };
    visit(s, a);
    for _ in 0..horizon {
        s = mdp.next_state(s, a, rng);
        a = policy.sample_action(s, rng);
        visit(s, a);
    }
    (s, a)
}

/// Simulates a trajectory of `horizon + 1` steps starting at `s0`. The first
/// action is `a0` when given, otherwise drawn from the policy.
pub fn rollout(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    s0: usize,
    a0: Option<usize>,
    horizon: u64,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    mdp.check_state(s0)?;
    if let Some(a) = a0 {
        mdp.check_action(a)?;
    }
    policy.check_shape(mdp)?;
    let mut steps = Vec::with_capacity(horizon as usize + 1);
    let mut total_reward = 0.0;
    walk(mdp, policy, s0, a0, horizon, rng, |s, a| {
        let reward = mdp.reward(s, a);
        total_reward += reward;
        steps.push(Step {
            state: s,
            action: a,
            reward,
        });
    });
    Ok(Trajectory {
        steps,
        total_reward,
    })
}
