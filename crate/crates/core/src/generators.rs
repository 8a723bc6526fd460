//! Procedural MDP families.

use rand::seq::index;
use rand::Rng;

use crate::error::{AnpgError, Result};
use crate::mdp::TabularMdp;
use crate::rng::RngStream;

/// Deterministic chain of `n` states. Action 0 moves left, action 1 moves
/// right (both clamped at the ends). Moving right from the last state pays 1,
/// moving left from the first state pays 0.1, everything else pays 0.
pub fn chain(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n == 0 {
        return Err(AnpgError::invalid("n", "chain needs at least one state"));
    }
    let na = 2;
    let mut reward = vec![0.0; n * na];
    let mut transition = vec![0.0; n * na * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        transition[(s * na) * n + left] = 1.0;
        transition[(s * na + 1) * n + right] = 1.0;
    }
    reward[(n - 1) * na + 1] = 1.0;
    reward[0] = 0.1;
    TabularMdp::new(n, na, gamma, vec![1.0 / n as f64; n], reward, transition)
}

/// `width x height` grid with actions up, down, left, right. The intended
/// move happens with probability 0.9; otherwise a uniformly random move is
/// taken. Walls clamp. Every action in the far corner pays 1.
pub fn gridworld(width: usize, height: usize, gamma: f64) -> Result<TabularMdp> {
    if width == 0 || height == 0 {
        return Err(AnpgError::invalid("gridworld", "width and height must be positive"));
    }
    const SLIP: f64 = 0.1;
    const MOVES: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
    let ns = width * height;
    let na = MOVES.len();
    let target = |s: usize, m: usize| {
        let (x, y) = ((s % width) as isize, (s / width) as isize);
        let nx = (x + MOVES[m].0).clamp(0, width as isize - 1) as usize;
        let ny = (y + MOVES[m].1).clamp(0, height as isize - 1) as usize;
        ny * width + nx
    };
    let goal = ns - 1;
    let mut reward = vec![0.0; ns * na];
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            row[target(s, a)] += 1.0 - SLIP;
            for m in 0..na {
                row[target(s, m)] += SLIP / na as f64;
            }
            if s == goal {
                reward[s * na + a] = 1.0;
            }
        }
    }
    TabularMdp::new(ns, na, gamma, vec![1.0 / ns as f64; ns], reward, transition)
}

/// Random MDP: each `(s, a)` moves to `branching` distinct successors with
/// random weights; rewards are uniform on [0, 1); `rho` has full support.
pub fn random(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    branching: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(AnpgError::invalid("random", "n_states and n_actions must be positive"));
    }
    if branching == 0 || branching > n_states {
        return Err(AnpgError::invalid(
            "branching",
            format!("{branching} not in 1..={n_states}"),
        ));
    }
    let mut rng = RngStream::new(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    for pair in 0..n_states * n_actions {
        let row = &mut transition[pair * n_states..(pair + 1) * n_states];
        let targets = index::sample(&mut rng, n_states, branching);
        let weights: Vec<f64> = (0..branching).map(|_| 0.1 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for (t, w) in targets.iter().zip(weights) {
            row[t] = w / total;
        }
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let rho_w: Vec<f64> = (0..n_states).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = rho_w.iter().sum();
    let rho = rho_w.iter().map(|w| w / total).collect();
    TabularMdp::new(n_states, n_actions, gamma, rho, reward, transition)
}
