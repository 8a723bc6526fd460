//! Fixed problem instances shared by the audits, the acceptance suite and
//! the command line.

use crate::driver::Problem;
use crate::error::Result;
use crate::generators;
use crate::policy::{FeatureTable, PolicyFamily};

/// Two states, two actions, discount 0.9, tabular softmax.
pub fn two_state() -> Result<Problem> {
    Ok(Problem::tabular(generators::random(2, 2, 11, 2, 0.9)?))
}

/// Three states, two actions, discount 0.8, tabular softmax.
pub fn three_state() -> Result<Problem> {
    Ok(Problem::tabular(generators::random(3, 2, 3, 2, 0.8)?))
}

/// Four states, two actions, discount 0.9, tabular softmax.
pub fn four_state() -> Result<Problem> {
    Ok(Problem::tabular(generators::random(4, 2, 21, 2, 0.9)?))
}

/// Two states, three actions, discount 0.8, planar ring features. The
/// Fisher matrix is full rank (`F = I/2` at the uniform policy).
pub fn ring() -> Result<Problem> {
    let mdp = generators::random(2, 3, 5, 2, 0.8)?;
    let family = PolicyFamily::FeatureSoftmax(FeatureTable::ring(2, 3));
    Problem::new(mdp, family)
}

/// Looks an instance up by name.
pub fn by_name(name: &str) -> Option<Result<Problem>> {
    match name {
        "two_state" => Some(two_state()),
        "three_state" => Some(three_state()),
        "four_state" => Some(four_state()),
        "ring" => Some(ring()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["two_state", "three_state", "four_state", "ring"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn all_instances_build() {
        for name in NAMES {
            assert!(by_name(name).unwrap().is_ok(), "{name}");
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn ring_fisher_is_half_identity_at_origin() {
        let p = ring().unwrap();
        let f = oracle::exact_fisher(&p.mdp, &p.zeros()).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f[(1, 1)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f[(0, 1)], 0.0, epsilon = 1e-12);
    }
}
