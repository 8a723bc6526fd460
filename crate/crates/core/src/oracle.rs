//! Exact dynamic-programming quantities used as ground truth.

use nalgebra::{DMatrix, DVector};

use crate::error::{AnpgError, Result};
use crate::linalg;
use crate::mdp::TabularMdp;
use crate::policy::{PolicyParams, PolicyTable};

/// Values and occupancies of a fixed policy. Pair tables are indexed
/// `s * n_actions + a`.
#[derive(Clone, Debug)]
pub struct ExactQuantities {
    pub v: DVector<f64>,
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    pub d_occ: DVector<f64>,
    pub nu_occ: Vec<f64>,
    pub j: f64,
}

#[derive(Clone, Debug)]
pub struct PolicyGradient {
    pub pg: DVector<f64>,
    pub h_vec: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct NaturalGradientSolution {
    pub omega_star: DVector<f64>,
    pub fisher: DMatrix<f64>,
    pub pg: DVector<f64>,
    pub h_vec: DVector<f64>,
    pub residual_loss: f64,
    /// Projector onto the retained eigenspace of the Fisher matrix.
    pub row_space: DMatrix<f64>,
    pub rank: usize,
}

fn policy_kernel(mdp: &TabularMdp, policy: &PolicyTable) -> (DMatrix<f64>, DVector<f64>) {
    let ns = mdp.n_states();
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..mdp.n_actions() {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for (next, &t) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, next)] += w * t;
            }
        }
    }
    (p, r)
}

pub fn exact_values(mdp: &TabularMdp, policy: &PolicyTable) -> Result<ExactQuantities> {
    policy.check_shape(mdp)?;
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let (p, r) = policy_kernel(mdp, policy);
    let m = DMatrix::identity(ns, ns) - p * gamma;
    let lu = m.clone().lu();
    let v = lu
        .solve(&r)
        .ok_or_else(|| AnpgError::Numerical("singular (I - gamma P_pi)".into()))?;
    let rho = DVector::from_column_slice(mdp.rho());
    let d_occ = m
        .transpose()
        .lu()
        .solve(&rho)
        .ok_or_else(|| AnpgError::Numerical("singular (I - gamma P_pi)^T".into()))?
        * (1.0 - gamma);

    let mut q = vec![0.0; ns * na];
    let mut adv = vec![0.0; ns * na];
    let mut nu_occ = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let i = s * na + a;
            let next: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v.iter())
                .map(|(t, vv)| t * vv)
                .sum();
            q[i] = mdp.reward(s, a) + gamma * next;
            adv[i] = q[i] - v[s];
            nu_occ[i] = d_occ[s] * policy.prob(s, a);
        }
    }
    let j = rho.dot(&v);
    Ok(ExactQuantities {
        v,
        q,
        adv,
        d_occ,
        nu_occ,
        j,
    })
}

pub fn exact_j(mdp: &TabularMdp, params: &PolicyParams) -> Result<f64> {
    Ok(exact_values(mdp, &params.policy_table())?.j)
}

fn gradient_from(
    mdp: &TabularMdp,
    params: &PolicyParams,
    values: &ExactQuantities,
    scores: &[DVector<f64>],
) -> PolicyGradient {
    let mut h_vec = DVector::zeros(params.dim());
    for ((g, &nu), &adv) in scores.iter().zip(&values.nu_occ).zip(&values.adv) {
        h_vec.axpy(nu * adv, g, 1.0);
    }
    let pg = &h_vec / (1.0 - mdp.gamma());
    PolicyGradient { pg, h_vec }
}

fn fisher_from(params: &PolicyParams, values: &ExactQuantities, scores: &[DVector<f64>]) -> DMatrix<f64> {
    let d = params.dim();
    let mut f = DMatrix::zeros(d, d);
    for (g, &nu) in scores.iter().zip(&values.nu_occ) {
        if nu != 0.0 {
            f.ger(nu, g, g, 1.0);
        }
    }
    // symmetrize away rounding
    (&f + f.transpose()) * 0.5
}

/// `grad J = H / (1 - gamma)` with `H = sum nu(s,a) A(s,a) score(s,a)`.
pub fn exact_policy_gradient(mdp: &TabularMdp, params: &PolicyParams) -> Result<PolicyGradient> {
    params.family().check_mdp(mdp)?;
    let values = exact_values(mdp, &params.policy_table())?;
    Ok(gradient_from(mdp, params, &values, &params.score_table()))
}

/// `F = sum nu(s,a) score score^T`.
pub fn exact_fisher(mdp: &TabularMdp, params: &PolicyParams) -> Result<DMatrix<f64>> {
    params.family().check_mdp(mdp)?;
    let values = exact_values(mdp, &params.policy_table())?;
    Ok(fisher_from(params, &values, &params.score_table()))
}

fn loss_from(
    mdp: &TabularMdp,
    omega: &DVector<f64>,
    adv: &[f64],
    weights: &[f64],
    scores: &[DVector<f64>],
) -> f64 {
    let c = 1.0 - mdp.gamma();
    0.5 * scores
        .iter()
        .zip(adv)
        .zip(weights)
        .map(|((g, &a), &w)| {
            let e = a / c - omega.dot(g);
            w * e * e
        })
        .sum::<f64>()
}

/// `omega* = F^+ grad J`, with the pseudoinverse cutoff relative to the
/// largest eigenvalue.
pub fn exact_natural_gradient(
    mdp: &TabularMdp,
    params: &PolicyParams,
    pinv_cutoff: f64,
) -> Result<NaturalGradientSolution> {
    params.family().check_mdp(mdp)?;
    let values = exact_values(mdp, &params.policy_table())?;
    let scores = params.score_table();
    let PolicyGradient { pg, h_vec } = gradient_from(mdp, params, &values, &scores);
    let fisher = fisher_from(params, &values, &scores);
    let pinv = linalg::symmetric_pinv(&fisher, pinv_cutoff)?;
    let omega_star = &pinv.pinv * &pg;
    let residual_loss = loss_from(mdp, &omega_star, &values.adv, &values.nu_occ, &scores);
    Ok(NaturalGradientSolution {
        omega_star,
        fisher,
        pg,
        h_vec,
        residual_loss,
        row_space: pinv.projector,
        rank: pinv.rank,
    })
}

fn check_omega(params: &PolicyParams, omega: &DVector<f64>) -> Result<()> {
    if omega.len() != params.dim() {
        return Err(AnpgError::DimensionMismatch {
            what: "omega",
            expected: params.dim(),
            got: omega.len(),
        });
    }
    Ok(())
}

/// `(1/2) sum nu_w(s,a) [A(s,a)/(1-gamma) - omega^T score(s,a)]^2`, where
/// `nu_w` is the occupancy of `weighting` and `A` the advantage of `params`.
pub fn compatible_loss(
    mdp: &TabularMdp,
    params: &PolicyParams,
    omega: &DVector<f64>,
    weighting: &PolicyTable,
) -> Result<f64> {
    params.family().check_mdp(mdp)?;
    check_omega(params, omega)?;
    let values = exact_values(mdp, &params.policy_table())?;
    let weights = exact_values(mdp, weighting)?.nu_occ;
    Ok(loss_from(mdp, omega, &values.adv, &weights, &params.score_table()))
}

/// Gradient of the on-policy compatible loss: `F omega - grad J`.
pub fn compatible_loss_gradient(
    mdp: &TabularMdp,
    params: &PolicyParams,
    omega: &DVector<f64>,
) -> Result<DVector<f64>> {
    params.family().check_mdp(mdp)?;
    check_omega(params, omega)?;
    let values = exact_values(mdp, &params.policy_table())?;
    let scores = params.score_table();
    let pg = gradient_from(mdp, params, &values, &scores).pg;
    Ok(fisher_from(params, &values, &scores) * omega - pg)
}

#[derive(Clone, Debug)]
pub struct OptimalPolicy {
    pub actions: Vec<usize>,
    pub policy: PolicyTable,
    pub values: ExactQuantities,
    pub j_star: f64,
    pub bellman_residual: f64,
}

/// Policy iteration from the all-zeros action choice. Improvement switches
/// action only on a strict gain, so it terminates.
pub fn exact_optimal_policy(mdp: &TabularMdp) -> Result<OptimalPolicy> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; ns];
    let max_rounds = 10_000;
    for _ in 0..max_rounds {
        let policy = PolicyTable::deterministic(na, &actions)?;
        let values = exact_values(mdp, &policy)?;
        let mut changed = false;
        for s in 0..ns {
            let row = &values.q[s * na..(s + 1) * na];
            let current = row[actions[s]];
            let (best, best_q) = row
                .iter()
                .enumerate()
                .fold((actions[s], current), |acc, (a, &q)| if q > acc.1 { (a, q) } else { acc });
            let scale = 1.0 + current.abs();
            if best != actions[s] && best_q - current > 1e-13 * scale {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            let bellman_residual = (0..ns)
                .map(|s| {
                    let max_q = values.q[s * na..(s + 1) * na]
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    (values.v[s] - max_q).abs()
                })
                .fold(0.0, f64::max);
            let j_star = values.j;
            return Ok(OptimalPolicy {
                actions,
                policy,
                values,
                j_star,
                bellman_residual,
            });
        }
    }
    Err(AnpgError::Numerical("policy iteration did not terminate".into()))
}

/// Both sides of `J1 - J2 = (1/(1-gamma)) sum nu^1(s,a) A^2(s,a)`.
pub fn performance_difference(
    mdp: &TabularMdp,
    policy1: &PolicyTable,
    policy2: &PolicyTable,
) -> Result<(f64, f64)> {
    let v1 = exact_values(mdp, policy1)?;
    let v2 = exact_values(mdp, policy2)?;
    let rhs = v1
        .nu_occ
        .iter()
        .zip(&v2.adv)
        .map(|(n, a)| n * a)
        .sum::<f64>()
        / (1.0 - mdp.gamma());
    Ok((v1.j - v2.j, rhs))
}

/// `E_{s ~ d^{opt}} KL(opt(.|s) || pi_theta(.|s))`.
pub fn kl_to_optimal(mdp: &TabularMdp, optimal: &OptimalPolicy, params: &PolicyParams) -> Result<f64> {
    let na = mdp.n_actions();
    let mut kl = 0.0;
    for s in 0..mdp.n_states() {
        let d = optimal.values.d_occ[s];
        for a in 0..na {
            let p = optimal.policy.prob(s, a);
            if p > 0.0 {
                kl += d * p * (p.ln() - params.log_prob(s, a)?);
            }
        }
    }
    Ok(kl)
}

/// Compatible loss at `omega` weighted by the optimal policy's occupancy.
pub fn transferred_loss(
    mdp: &TabularMdp,
    params: &PolicyParams,
    omega: &DVector<f64>,
    optimal: &OptimalPolicy,
) -> Result<f64> {
    compatible_loss(mdp, params, omega, &optimal.policy)
}
