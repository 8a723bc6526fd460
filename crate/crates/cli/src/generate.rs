//! Parsing of generator expressions such as `chain(3)`, `gridworld(2,2)` and
//! `random(5,3,seed=7,branching=2)`.

use anpg::generators;
use anpg::mdp::TabularMdp;

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Chain { n: usize },
    Gridworld { width: usize, height: usize },
    Random { n_states: usize, n_actions: usize, seed: u64, branching: usize },
}

const RANDOM_KEYS: [&str; 4] = ["n_states", "n_actions", "seed", "branching"];

fn parse_int<T: std::str::FromStr>(expr: &str, key: &str, raw: &str) -> Result<T, Failure> {
    raw.trim()
        .parse()
        .map_err(|_| Failure::config(format!("generator `{expr}`: `{key}` must be a non-negative integer, got `{raw}`")))
}

/// Arguments in positional order, with `key=value` pairs slotted into their
/// named position.
fn arguments(expr: &str, args: &str, keys: &[&str]) -> Result<Vec<String>, Failure> {
    let mut slots: Vec<Option<String>> = vec![None; keys.len()];
    let parts: Vec<&str> = if args.trim().is_empty() { Vec::new() } else { args.split(',').collect() };
    let mut next = 0;
    for part in parts {
        let (idx, value) = match part.split_once('=') {
            Some((k, v)) => {
                let k = k.trim();
                let idx = keys
                    .iter()
                    .position(|key| *key == k)
                    .ok_or_else(|| Failure::config(format!("generator `{expr}`: unknown argument `{k}`")))?;
                (idx, v.trim())
            }
            None => {
                while next < keys.len() && slots[next].is_some() {
                    next += 1;
                }
                if next == keys.len() {
                    return Err(Failure::config(format!("generator `{expr}`: too many arguments")));
                }
                (next, part.trim())
            }
        };
        if slots[idx].is_some() {
            return Err(Failure::config(format!("generator `{expr}`: `{}` given twice", keys[idx])));
        }
        slots[idx] = Some(value.to_string());
    }
    slots
        .into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| Failure::config(format!("generator `{expr}`: missing `{k}`"))))
        .collect()
}

impl Generator {
    pub fn parse(expr: &str) -> Result<Self, Failure> {
        let expr = expr.trim();
        let (name, rest) = expr
            .split_once('(')
            .ok_or_else(|| Failure::config(format!("generator `{expr}`: expected name(arguments)")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| Failure::config(format!("generator `{expr}`: missing closing parenthesis")))?;
        match name.trim() {
            "chain" => {
                let a = arguments(expr, args, &["n"])?;
                Ok(Self::Chain { n: parse_int(expr, "n", &a[0])? })
            }
            "gridworld" => {
                let a = arguments(expr, args, &["width", "height"])?;
                Ok(Self::Gridworld {
                    width: parse_int(expr, "width", &a[0])?,
                    height: parse_int(expr, "height", &a[1])?,
                })
            }
            "random" => {
                let a = arguments(expr, args, &RANDOM_KEYS)?;
                Ok(Self::Random {
                    n_states: parse_int(expr, "n_states", &a[0])?,
                    n_actions: parse_int(expr, "n_actions", &a[1])?,
                    seed: parse_int(expr, "seed", &a[2])?,
                    branching: parse_int(expr, "branching", &a[3])?,
                })
            }
            other => Err(Failure::config(format!(
                "generator `{expr}`: unknown generator `{other}` (expected chain, gridworld or random)"
            ))),
        }
    }

    pub fn build(&self, gamma: f64) -> Result<TabularMdp, Failure> {
        let mdp = match *self {
            Self::Chain { n } => generators::chain(n, gamma),
            Self::Gridworld { width, height } => generators::gridworld(width, height, gamma),
            Self::Random {
                n_states,
                n_actions,
                seed,
                branching,
            } => generators::random(n_states, n_actions, seed, branching, gamma),
        };
        mdp.map_err(Failure::from_core)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_and_named_forms_agree() {
        let a = Generator::parse("random(5,3,7,2)").unwrap();
        let b = Generator::parse("random(5, 3, seed=7, branching=2)").unwrap();
        assert_eq!(a, b);
        assert_eq!(Generator::parse("chain(3)").unwrap(), Generator::Chain { n: 3 });
    }

    #[test]
    fn malformed_expressions_rejected() {
        for bad in ["chain", "chain(x)", "ring(2)", "random(5,3,7)", "chain(3,4)", "random(5,3,seed=1,seed=2,1)"] {
            assert!(Generator::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn invalid_sizes_fail_at_build() {
        assert!(Generator::parse("chain(0)").unwrap().build(0.9).is_err());
        assert_eq!(Generator::parse("gridworld(2,2)").unwrap().build(0.9).unwrap().n_states(), 4);
    }
}
