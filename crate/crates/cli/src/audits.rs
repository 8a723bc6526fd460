//! Runs a named audit against the problem and settings of a spec.

use anpg::audit::{self, AuditReport};
use nalgebra::DVector;

use crate::failure::Failure;
use crate::spec::{LoadedSpec, AUDIT_NAMES};

fn core(err: anpg::AnpgError) -> Failure {
    Failure::runtime(err.to_string())
}

pub fn run_audit(name: &str, loaded: &LoadedSpec) -> Result<AuditReport, Failure> {
    let spec = &loaded.spec;
    let a = &spec.audits;
    let th = &spec.thresholds;
    let problem = loaded.problem()?;
    let base = loaded.config_at(&problem, loaded.base_point()?)?;
    let theta0 = base
        .theta0
        .clone()
        .unwrap_or_else(|| DVector::zeros(problem.family.dim()));
    let params = problem.params(theta0.clone()).map_err(Failure::from_core)?;

    let report = match name {
        "oracle-selfcheck" => audit::oracle_selfcheck(a.instances, a.seed, th),
        "lemma1" => {
            let cases = audit::cases_on(&problem, a.cases, a.seed);
            audit::lemma1(&cases, a.samples, a.seed, th)
        }
        "moments" => {
            let mut problems = Vec::new();
            for &g in &a.gammas {
                let p = loaded.problem_at(&problem, g)?;
                problems.push((format!("spec problem gamma={g}"), p));
            }
            audit::moment_bounds(&problems, a.samples, a.seed, th)
        }
        "lemma5" => {
            let mut cases = vec![("theta0".to_string(), problem.clone(), theta0)];
            for (i, c) in audit::cases_on(&problem, a.cases.saturating_sub(1), a.seed).into_iter().enumerate() {
                cases.push((format!("random theta {i}"), problem.clone(), c.theta));
            }
            audit::lemma5(&cases, a.samples, a.seed, th)
        }
        "lemma6" => audit::lemma6(&problem, &params, &a.horizons, a.seeds, a.seed, th),
        "lemma7" => audit::lemma7(&problem, &params, &a.bias_horizons, th),
        "corollary1" => audit::run_seeds(&problem, &base, a.seeds)
            .and_then(|runs| audit::corollary1(&spec.name, &runs, th)),
        "scaling" => {
            let pairs: Vec<(usize, usize)> = a.scaling_pairs.iter().map(|p| (p[0], p[1])).collect();
            audit::scaling(&problem, &base, &pairs, a.seeds, th).map(|(r, _)| r)
        }
        "inner-comparison" => audit::inner_comparison(&problem, &base, spec.run.sgd_step, a.seeds),
        other => {
            return Err(Failure::config(format!(
                "unknown audit `{other}` (expected one of {})",
                AUDIT_NAMES.join(", ")
            )))
        }
    };
    report.map_err(core)
}

/// One-line description of the first failing check.
pub fn failure_message(report: &AuditReport) -> String {
    match report.failures().next() {
        Some(c) => format!(
            "audit {} failed: {} measured {} (threshold {})",
            report.name, c.check, c.measured, c.threshold
        ),
        None => format!("audit {} produced no checks", report.name),
    }
}
