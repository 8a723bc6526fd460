//! Experiment spec files: which MDP, which policy family, run settings,
//! sweep axes, audits and thresholds.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anpg::audit::AuditThresholds;
use anpg::driver::{AnpgConfig, GridSpec, InnerSolver, Problem, StepSize};
use anpg::instances;
use anpg::mdp::{MdpFile, TabularMdp};
use anpg::policy::{FeatureTable, PolicyFamily};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;
use crate::generate::Generator;

pub const DEFAULT_GAMMA: f64 = 0.9;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub output_dir: Option<PathBuf>,
    pub mdp: MdpSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub audits: AuditSection,
    #[serde(default)]
    pub thresholds: AuditThresholds,
}

fn default_name() -> String {
    "experiment".to_string()
}

/// Exactly one of `instance`, `file` or `generator`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    pub instance: Option<String>,
    pub file: Option<PathBuf>,
    pub generator: Option<String>,
    /// Overrides the discount of the source.
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// `tabular`, `ring`, or `features` (read from `features_file`, or from
    /// the MDP file when absent).
    pub family: String,
    pub features_file: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            family: "tabular".to_string(),
            features_file: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Named(String),
    Value(f64),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub eta: EtaSetting,
    pub inner_solver: String,
    pub sgd_step: Option<f64>,
    pub seed: u64,
    pub pinv_cutoff: f64,
    pub mu_floor: f64,
    #[serde(rename = "min_inner_H")]
    pub min_inner_h: usize,
    pub max_horizon: Option<u64>,
    pub probe_bias: bool,
    pub divergence_limit: f64,
    pub grid_points: usize,
    pub grid_radius: f64,
    pub theta0: Option<Vec<f64>>,
}

impl Default for RunSection {
    fn default() -> Self {
        let c = AnpgConfig::default();
        Self {
            k: c.k,
            h: c.h,
            eta: EtaSetting::Named("auto".to_string()),
            inner_solver: "asgd".to_string(),
            sgd_step: None,
            seed: c.seed,
            pinv_cutoff: c.pinv_cutoff,
            mu_floor: c.mu_floor,
            min_inner_h: c.min_inner_h,
            max_horizon: None,
            probe_bias: c.probe_bias,
            divergence_limit: c.divergence_limit,
            grid_points: c.grid.points,
            grid_radius: c.grid.radius,
            theta0: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    #[serde(rename = "H")]
    pub h: Vec<usize>,
    pub gamma: Vec<f64>,
    pub seed: Vec<u64>,
    pub max_points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k: Vec::new(),
            h: Vec::new(),
            gamma: Vec::new(),
            seed: Vec::new(),
            max_points: 10_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub lemma1: bool,
    pub lemma5: bool,
    pub lemma6: bool,
    pub lemma7: bool,
    pub corollary1: bool,
    pub scaling: bool,
    #[serde(rename = "oracle-selfcheck")]
    pub oracle_selfcheck: bool,
    pub moments: bool,
    #[serde(rename = "inner-comparison")]
    pub inner_comparison: bool,
    /// Monte-Carlo sample count for estimator audits.
    pub samples: usize,
    /// Random `(theta, omega)` cases for estimator audits.
    pub cases: usize,
    /// Seeds for inner-loop and outer-loop audits.
    pub seeds: usize,
    /// Random MDPs for the oracle self-check.
    pub instances: usize,
    pub horizons: Vec<usize>,
    pub bias_horizons: Vec<usize>,
    pub scaling_pairs: Vec<[usize; 2]>,
    pub gammas: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            lemma1: false,
            lemma5: false,
            lemma6: false,
            lemma7: false,
            corollary1: false,
            scaling: false,
            oracle_selfcheck: false,
            moments: false,
            inner_comparison: false,
            samples: 100_000,
            cases: 10,
            seeds: 10,
            instances: 50,
            horizons: vec![64, 128, 256, 512, 1024, 2048, 4096],
            bias_horizons: vec![16, 32, 64, 128, 256],
            scaling_pairs: vec![[50, 64], [100, 128], [200, 256]],
            gammas: vec![0.5, 0.8],
            seed: 0,
        }
    }
}

pub const AUDIT_NAMES: [&str; 9] = [
    "oracle-selfcheck",
    "lemma1",
    "moments",
    "lemma5",
    "lemma6",
    "lemma7",
    "corollary1",
    "scaling",
    "inner-comparison",
];

impl AuditSection {
    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [
            self.oracle_selfcheck,
            self.lemma1,
            self.moments,
            self.lemma5,
            self.lemma6,
            self.lemma7,
            self.corollary1,
            self.scaling,
            self.inner_comparison,
        ];
        AUDIT_NAMES.iter().zip(flags).filter(|(_, on)| *on).map(|(n, _)| *n).collect()
    }
}

/// One point of the sweep grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        format!("K{}_H{}_gamma{}_seed{}", self.k, self.h, self.gamma, self.seed)
    }
}

/// A parsed spec with paths resolved against the spec's directory.
#[derive(Clone, Debug)]
pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    pub base_dir: PathBuf,
}

impl LoadedSpec {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read spec {}: {e}", path.display())))?;
        let spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| Failure::config(format!("spec {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { spec, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks every setting that can be checked without running anything.
    pub fn validate(&self) -> Result<(), Failure> {
        let problem = self.problem()?;
        for point in self.sweep_points()? {
            self.problem_at(&problem, point.gamma)?;
            self.config_at(&problem, point)?.validate().map_err(Failure::from_core)?;
        }
        let a = &self.spec.audits;
        for (key, hs) in [("audits.horizons", &a.horizons), ("audits.bias_horizons", &a.bias_horizons)] {
            if hs.len() < 2 || hs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Failure::config(format!("{key} must hold at least two strictly increasing values")));
            }
            for &h in hs.iter() {
                anpg::asgd::check_horizon(h).map_err(|e| Failure::config(format!("{key}: {e}")))?;
            }
        }
        if a.scaling_pairs.is_empty() {
            return Err(Failure::config("audits.scaling_pairs must not be empty"));
        }
        for [_, h] in &a.scaling_pairs {
            anpg::asgd::check_horizon(*h).map_err(|e| Failure::config(format!("audits.scaling_pairs: {e}")))?;
        }
        for (key, v) in [("audits.samples", a.samples), ("audits.cases", a.cases), ("audits.seeds", a.seeds)] {
            if v == 0 {
                return Err(Failure::config(format!("{key} must be positive")));
            }
        }
        Ok(())
    }

    pub fn mdp_file(&self) -> Result<MdpFile, Failure> {
        let m = &self.spec.mdp;
        let sources = [m.instance.is_some(), m.file.is_some(), m.generator.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Failure::config("mdp: give exactly one of `instance`, `file` or `generator`"));
        }
        let mut file = if let Some(name) = &m.instance {
            let problem = instances::by_name(name)
                .ok_or_else(|| {
                    Failure::config(format!(
                        "mdp.instance: unknown instance `{name}` (expected one of {})",
                        instances::NAMES.join(", ")
                    ))
                })?
                .map_err(Failure::from_core)?;
            problem.mdp.to_file()
        } else if let Some(path) = &m.file {
            let path = self.resolve(path);
            MdpFile::read(&path).map_err(|e| Failure::config(format!("mdp.file {}: {e}", path.display())))?
        } else {
            let generator = m.generator.as_deref().unwrap_or_default();
            Generator::parse(generator)?.build(m.gamma.unwrap_or(DEFAULT_GAMMA))?.to_file()
        };
        if let Some(g) = m.gamma {
            file.gamma = g;
        }
        Ok(file)
    }

    pub fn problem(&self) -> Result<Problem, Failure> {
        let file = self.mdp_file()?;
        let mdp = TabularMdp::from_file(&file).map_err(|e| Failure::config(format!("mdp: {e}")))?;
        let family = match self.spec.policy.family.as_str() {
            "tabular" => PolicyFamily::tabular(&mdp),
            "ring" => PolicyFamily::FeatureSoftmax(FeatureTable::ring(mdp.n_states(), mdp.n_actions())),
            "features" => {
                let table = match &self.spec.policy.features_file {
                    Some(p) => FeatureTable::read(self.resolve(p)),
                    None => FeatureTable::from_file(&file),
                };
                PolicyFamily::FeatureSoftmax(table.map_err(|e| Failure::config(format!("policy.features_file: {e}")))?)
            }
            other => {
                return Err(Failure::config(format!(
                    "policy.family: unknown family `{other}` (expected tabular, ring or features)"
                )))
            }
        };
        Problem::new(mdp, family).map_err(|e| Failure::config(format!("policy: {e}")))
    }

    pub fn problem_at(&self, base: &Problem, gamma: f64) -> Result<Problem, Failure> {
        if gamma == base.mdp.gamma() {
            return Ok(base.clone());
        }
        let mdp = base
            .mdp
            .with_gamma(gamma)
            .map_err(|e| Failure::config(format!("sweep.gamma: {e}")))?;
        Ok(Problem {
            mdp,
            family: Arc::clone(&base.family),
        })
    }

    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>, Failure> {
        let s = &self.spec.sweep;
        let r = &self.spec.run;
        let ks = if s.k.is_empty() { vec![r.k] } else { s.k.clone() };
        let hs = if s.h.is_empty() { vec![r.h] } else { s.h.clone() };
        let gammas = if s.gamma.is_empty() {
            vec![self.mdp_file()?.gamma]
        } else {
            s.gamma.clone()
        };
        let seeds = if s.seed.is_empty() { vec![r.seed] } else { s.seed.clone() };
        let size = ks.len() * hs.len() * gammas.len() * seeds.len();
        if size > s.max_points {
            return Err(Failure::config(format!(
                "sweep: {size} points exceed sweep.max_points = {}",
                s.max_points
            )));
        }
        let mut points = Vec::with_capacity(size);
        for &gamma in &gammas {
            for &k in &ks {
                for &h in &hs {
                    for &seed in &seeds {
                        points.push(SweepPoint { k, h, gamma, seed });
                    }
                }
            }
        }
        Ok(points)
    }

    pub fn base_point(&self) -> Result<SweepPoint, Failure> {
        Ok(SweepPoint {
            k: self.spec.run.k,
            h: self.spec.run.h,
            gamma: self.mdp_file()?.gamma,
            seed: self.spec.run.seed,
        })
    }

    pub fn config_at(&self, problem: &Problem, point: SweepPoint) -> Result<AnpgConfig, Failure> {
        let r = &self.spec.run;
        let eta = match &r.eta {
            EtaSetting::Named(s) if s == "auto" => StepSize::Auto,
            EtaSetting::Named(s) => {
                return Err(Failure::config(format!("run.eta: expected \"auto\" or a number, got `{s}`")))
            }
            EtaSetting::Value(v) => StepSize::Fixed(*v),
        };
        let inner_solver = match r.inner_solver.as_str() {
            "asgd" => InnerSolver::Asgd,
            "sgd" => InnerSolver::Sgd { step: r.sgd_step },
            "exact" => InnerSolver::ExactOracle,
            other => {
                return Err(Failure::config(format!(
                    "run.inner_solver: unknown solver `{other}` (expected asgd, sgd or exact)"
                )))
            }
        };
        let theta0 = match &r.theta0 {
            Some(v) if v.len() != problem.family.dim() => {
                return Err(Failure::config(format!(
                    "run.theta0: expected {} entries, got {}",
                    problem.family.dim(),
                    v.len()
                )))
            }
            Some(v) => Some(DVector::from_vec(v.clone())),
            None => None,
        };
        let defaults = AnpgConfig::default();
        Ok(AnpgConfig {
            k: point.k,
            h: point.h,
            eta,
            inner_solver,
            seed: point.seed,
            pinv_cutoff: r.pinv_cutoff,
            mu_floor: r.mu_floor,
            min_inner_h: r.min_inner_h,
            grid: GridSpec {
                points: r.grid_points,
                radius: r.grid_radius,
            },
            theta0,
            divergence_limit: r.divergence_limit,
            probe_bias: r.probe_bias,
            max_horizon: r.max_horizon,
            ..defaults
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<LoadedSpec, Failure> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        let loaded = LoadedSpec {
            spec,
            base_dir: PathBuf::new(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    #[test]
    fn minimal_spec_uses_defaults() {
        let s = load("[mdp]\ninstance = \"three_state\"\n").unwrap();
        let points = s.sweep_points().unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!((points[0].k, points[0].h, points[0].seed), (10, 64, 0));
        assert_eq!(points[0].gamma, 0.8);
    }

    #[test]
    fn odd_h_names_the_key() {
        let err = load("[mdp]\ninstance = \"two_state\"\n[run]\nH = 63\n").unwrap_err();
        assert!(err.message.contains("H must be even"), "{}", err.message);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load("[mdp]\ninstance = \"two_state\"\n[run]\nhorizon = 4\n").unwrap_err();
        assert!(err.message.contains("horizon"), "{}", err.message);
    }

    #[test]
    fn sweep_is_a_cartesian_product_with_cap() {
        let s = load("[mdp]\ninstance = \"two_state\"\n[sweep]\nK = [1, 2]\nH = [64, 128]\nseed = [0, 1, 2]\n").unwrap();
        assert_eq!(s.sweep_points().unwrap().len(), 12);
        let err = load("[mdp]\ninstance = \"two_state\"\n[sweep]\nseed = [0, 1, 2]\nmax_points = 2\n").unwrap_err();
        assert!(err.message.contains("max_points"));
    }

    #[test]
    fn mdp_source_must_be_unique() {
        assert!(load("[mdp]\ninstance = \"two_state\"\ngenerator = \"chain(3)\"\n").is_err());
        assert!(load("[mdp]\n").is_err());
        assert!(load("[mdp]\ninstance = \"nope\"\n").is_err());
    }

    #[test]
    fn generator_source_and_gamma_override() {
        let s = load("[mdp]\ngenerator = \"random(5,3,7,2)\"\ngamma = 0.7\n").unwrap();
        let p = s.problem().unwrap();
        assert_eq!(p.mdp.n_states(), 5);
        assert_eq!(p.mdp.gamma(), 0.7);
    }

    #[test]
    fn bad_eta_and_solver_rejected() {
        assert!(load("[mdp]\ninstance = \"two_state\"\n[run]\neta = \"big\"\n").is_err());
        assert!(load("[mdp]\ninstance = \"two_state\"\n[run]\ninner_solver = \"adam\"\n").is_err());
        assert!(load("[mdp]\ninstance = \"two_state\"\n[run]\neta = -1.0\n").is_err());
    }

    #[test]
    fn audit_toggles() {
        let s = load("[mdp]\ninstance = \"two_state\"\n[audits]\nlemma1 = true\nscaling = true\n").unwrap();
        assert_eq!(s.spec.audits.enabled(), vec!["lemma1", "scaling"]);
    }
}
