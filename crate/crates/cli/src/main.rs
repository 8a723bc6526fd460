//! `anpg`: run ANPG experiments and sweeps, audit the estimator and solvers,
//! and generate MDP files.

mod audits;
mod failure;
mod generate;
mod output;
mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anpg::audit::AuditReport;
use anpg::driver::{self, RunHistory};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::failure::Failure;
use crate::generate::Generator;
use crate::spec::{LoadedSpec, SweepPoint};

#[derive(Parser)]
#[command(name = "anpg", about = "Accelerated natural policy gradient experiments on tabular MDPs")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every sweep point of a spec and any audits it enables.
    Run { spec: PathBuf },
    /// Run one audit against a spec.
    Audit { name: String, spec: PathBuf },
    /// Write a generated MDP, e.g. `chain(3)` or `random(5,3,7,2)`.
    Gen {
        generator: String,
        out: PathBuf,
        #[arg(long, default_value_t = spec::DEFAULT_GAMMA)]
        gamma: f64,
        /// Replace `out` if it exists.
        #[arg(long)]
        force: bool,
    },
    /// Print the version.
    Version,
}

#[derive(Serialize)]
struct RunSummary {
    file: Option<String>,
    point: SweepPoint,
    status: String,
    averaged_gap: Option<f64>,
    final_gap: Option<f64>,
    j_star: Option<f64>,
    env_steps: Option<u64>,
    grad_calls: Option<u64>,
    eta: Option<f64>,
    warnings: Vec<String>,
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct AuditSummary {
    name: String,
    file: String,
    passed: bool,
    notes: Vec<String>,
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct Manifest {
    name: String,
    version: &'static str,
    command: String,
    spec: spec::ExperimentSpec,
    runs: Vec<RunSummary>,
    audits: Vec<AuditSummary>,
    wall_clock_secs: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run { spec } => cmd_run(&spec),
        Command::Audit { name, spec } => cmd_audit(&name, &spec),
        Command::Gen {
            generator,
            out,
            gamma,
            force,
        } => cmd_gen(&generator, &out, gamma, force),
        Command::Version => {
            println!("anpg {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn output_dir(loaded: &LoadedSpec, name: &str) -> Result<PathBuf, Failure> {
    let root = output::output_root(
        std::env::var(output::OUTPUT_ENV).ok(),
        loaded.spec.output_dir.as_deref(),
        &loaded.base_dir,
    );
    Ok(output::fresh_dir(&root, name)?)
}

fn write_report(dir: &Path, report: &AuditReport, started: Instant) -> Result<AuditSummary, Failure> {
    let file = format!("audit_{}.csv", report.name);
    let csv = report.csv_string().map_err(|e| Failure::runtime(e.to_string()))?;
    output::write_new(&dir.join(&file), csv.as_bytes())?;
    Ok(AuditSummary {
        name: report.name.clone(),
        file,
        passed: report.passed(),
        notes: report.notes.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn print_report(report: &AuditReport) {
    println!("{} {}", if report.passed() { "PASS" } else { "FAIL" }, report.name);
    for c in report.gating() {
        println!(
            "  {} {}: measured {} threshold {}",
            if c.pass { "ok  " } else { "FAIL" },
            c.check,
            c.measured,
            c.threshold
        );
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Failure::runtime(e.to_string()))?;
    output::write_new(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(())
}

fn execute_point(loaded: &LoadedSpec, problem: &driver::Problem, point: SweepPoint) -> Result<RunHistory, String> {
    let problem = loaded.problem_at(problem, point.gamma).map_err(|f| f.message)?;
    let config = loaded.config_at(&problem, point).map_err(|f| f.message)?;
    driver::run_anpg(&problem, &config).map_err(|e| e.to_string())
}

fn cmd_run(spec_path: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let loaded = LoadedSpec::read(spec_path)?;
    let problem = loaded.problem()?;
    let points = loaded.sweep_points()?;
    let dir = output_dir(&loaded, &loaded.spec.name)?;

    let results: Vec<(SweepPoint, Result<RunHistory, String>, f64)> = points
        .par_iter()
        .map(|&point| {
            let t = Instant::now();
            let r = execute_point(&loaded, &problem, point);
            (point, r, t.elapsed().as_secs_f64())
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    let mut failed_runs = Vec::new();
    for (point, result, secs) in results {
        match result {
            Ok(history) => {
                let file = format!("run_{}.csv", point.label());
                let csv = history.csv_string().map_err(|e| Failure::runtime(e.to_string()))?;
                output::write_new(&dir.join(&file), csv.as_bytes())?;
                runs.push(RunSummary {
                    file: Some(file),
                    point,
                    status: "completed".to_string(),
                    averaged_gap: Some(history.averaged_gap()),
                    final_gap: Some(history.final_theta_gap()),
                    j_star: Some(history.j_star),
                    env_steps: Some(history.total_env_steps()),
                    grad_calls: Some(history.grad_calls),
                    eta: Some(history.eta),
                    warnings: history.warnings.clone(),
                    wall_clock_secs: secs,
                });
            }
            Err(message) => {
                failed_runs.push(format!("{}: {message}", point.label()));
                runs.push(RunSummary {
                    file: None,
                    point,
                    status: format!("failed: {message}"),
                    averaged_gap: None,
                    final_gap: None,
                    j_star: None,
                    env_steps: None,
                    grad_calls: None,
                    eta: None,
                    warnings: Vec::new(),
                    wall_clock_secs: secs,
                });
            }
        }
    }

    let mut audit_summaries = Vec::new();
    let mut audit_failures = Vec::new();
    for name in loaded.spec.audits.enabled() {
        let t = Instant::now();
        let report = audits::run_audit(name, &loaded)?;
        print_report(&report);
        if !report.passed() {
            audit_failures.push(audits::failure_message(&report));
        }
        audit_summaries.push(write_report(&dir, &report, t)?);
    }

    write_manifest(
        &dir,
        &Manifest {
            name: loaded.spec.name.clone(),
            version: env!("CARGO_PKG_VERSION"),
            command: "run".to_string(),
            spec: loaded.spec.clone(),
            runs,
            audits: audit_summaries,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    )?;
    println!("wrote {} run(s) to {}", points.len() - failed_runs.len(), dir.display());

    if !failed_runs.is_empty() {
        return Err(Failure::runtime(format!("{} run(s) failed; first: {}", failed_runs.len(), failed_runs[0])));
    }
    if !audit_failures.is_empty() {
        return Err(Failure::audit(audit_failures.join("; ")));
    }
    Ok(())
}

fn cmd_audit(name: &str, spec_path: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    if !spec::AUDIT_NAMES.contains(&name) {
        return Err(Failure::config(format!(
            "unknown audit `{name}` (expected one of {})",
            spec::AUDIT_NAMES.join(", ")
        )));
    }
    let loaded = LoadedSpec::read(spec_path)?;
    let report = audits::run_audit(name, &loaded)?;
    print_report(&report);
    let dir = output_dir(&loaded, &format!("{}-{name}", loaded.spec.name))?;
    let summary = write_report(&dir, &report, started)?;
    write_manifest(
        &dir,
        &Manifest {
            name: loaded.spec.name.clone(),
            version: env!("CARGO_PKG_VERSION"),
            command: format!("audit {name}"),
            spec: loaded.spec.clone(),
            runs: Vec::new(),
            audits: vec![summary],
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    )?;
    println!("wrote report to {}", dir.display());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::audit(audits::failure_message(&report)))
    }
}

fn cmd_gen(expr: &str, out: &Path, gamma: f64, force: bool) -> Result<(), Failure> {
    let mdp = Generator::parse(expr)?.build(gamma)?;
    if out.exists() && !force {
        return Err(Failure::config(format!("{} exists; pass --force to replace it", out.display())));
    }
    mdp.to_file()
        .write(out)
        .map_err(|e| Failure::runtime(format!("writing {}: {e}", out.display())))?;
    println!("wrote {}-state, {}-action MDP to {}", mdp.n_states(), mdp.n_actions(), out.display());
    Ok(())
}
