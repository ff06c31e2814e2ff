use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freehorizon::cost::TerminalSetLevel;
use freehorizon::diagnostics::{
    check_bellman_consistency, check_first_hit, check_jacobians, check_lyapunov_decrease,
    CheckReport,
};
use freehorizon::horizon::{m_sweep, solve_acocp, solve_discounted_acocp};
use freehorizon::ilqr::solve_fhocp;
use freehorizon::Problem;
use serde::Serialize;
use serde_json::json;

use crate::config::{Scenario, ScenarioConfig};
use crate::error::CliError;
use crate::output::*;

/// Env var capping the worker threads of parallel sweeps and checks.
pub const THREADS_ENV: &str = "FREEHORIZON_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    Solve { horizon: usize },
    Sweep,
    Msweep { levels: Vec<f64> },
    Discounted { beta: f64, budget: usize },
    Check,
}

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: ScenarioConfig,
    pub wall_clock_seconds: f64,
    pub phases: Vec<Phase>,
    /// Files written to the output directory, manifest included.
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

struct Recorder {
    dir: PathBuf,
    files: Vec<String>,
    phases: Vec<Phase>,
}

impl Recorder {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Argument(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs one command and writes its artifacts plus `manifest.json` into the
/// config's output directory (or `output_dir` when given).
pub fn run_scenario(
    config: &ScenarioConfig,
    command: &Command,
    output_dir: Option<&Path>,
) -> Result<RunOutput, CliError> {
    let scenario = config.scenario()?;
    let dir = output_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Argument(format!("cannot start worker threads: {e}")))?;

    let start = Instant::now();
    let mut rec = Recorder {
        dir: dir.clone(),
        files: Vec::new(),
        phases: Vec::new(),
    };
    let outcome = pool.install(|| execute(config, &scenario, command, &mut rec));
    // A failed check still leaves its reports and manifest behind.
    if let Err(e) = outcome {
        if !matches!(e, CliError::ChecksFailed(_)) {
            return Err(e);
        }
        write_manifest(config, command, start, rec)?;
        return Err(e);
    }
    let manifest = write_manifest(config, command, start, rec)?;
    Ok(RunOutput { dir, manifest })
}

fn write_manifest(
    config: &ScenarioConfig,
    command: &Command,
    start: Instant,
    mut rec: Recorder,
) -> Result<RunManifest, CliError> {
    let manifest_path = rec.path("manifest.json");
    let manifest = RunManifest {
        tool: "freehorizon".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        phases: rec.phases,
        files: rec.files,
    };
    write_json(&manifest, &manifest_path)?;
    Ok(manifest)
}

fn execute(
    config: &ScenarioConfig,
    scenario: &Scenario,
    command: &Command,
    rec: &mut Recorder,
) -> Result<(), CliError> {
    let Scenario {
        problem,
        level,
        sweep,
        solver,
    } = scenario;
    match command {
        Command::Solve { horizon } => {
            let result = rec.phase("solve", || solve_fhocp(problem, *horizon, None, solver))?;
            let phi = problem.cost.terminal_cost(result.final_state());
            write_trajectory_csv(
                &result.trajectory,
                &problem.cost,
                &rec.path("trajectory.csv"),
            )?;
            let summary = json!({
                "horizon": horizon,
                "converged": result.converged,
                "iterations": result.iterations,
                "transfer_cost": result.breakdown.transfer,
                "terminal_cost": result.breakdown.terminal,
                "total_cost": result.breakdown.total,
                "terminal_phi": phi,
                "hit": phi <= level.value(),
            });
            write_json(&summary, &rec.path("solve_result.json"))
        }
        Command::Sweep => {
            let ac = rec.phase("sweep", || solve_acocp(problem, *level, sweep, solver))?;
            write_sweep_csv(&ac.sweep, &rec.path("sweep.csv"))?;
            let summary = json!({
                "T_star": ac.t_star,
                "J_M": ac.j_m,
                "M": ac.level,
                "beta": problem.cost.beta(),
                "transfer_cost": ac.solution.breakdown.transfer,
                "terminal_phi": problem.cost.terminal_cost(ac.solution.final_state()),
                "terminal_gap": ac.terminal_gap,
                "converged": ac.solution.converged,
            });
            write_json(&summary, &rec.path("ac_result.json"))
        }
        Command::Msweep { levels } => {
            let result = rec.phase("msweep", || {
                m_sweep(
                    problem,
                    levels,
                    sweep,
                    solver,
                    config.sweep.reference_horizon,
                )
            })?;
            write_msweep_csv(&result, &rec.path("msweep.csv"))
        }
        Command::Discounted { beta, budget } => {
            let cost = problem
                .cost
                .with_beta(*beta)
                .map_err(|_| CliError::Argument(format!("beta must lie in (0, 1), got {beta}")))?;
            let discounted = Problem {
                cost,
                ..problem.clone()
            };
            let result = rec.phase("discounted", || {
                solve_discounted_acocp(&discounted, *level, *budget, sweep, solver)
            })?;
            write_discounted_csv(
                result.beta,
                result.entered,
                result.t_star,
                result.j_m,
                &rec.path("discounted.csv"),
            )
        }
        Command::Check => {
            let reports = run_checks(config, scenario, rec)?;
            write_jsonl(&reports, &rec.path("checks.jsonl"))?;
            let failed: Vec<String> = reports
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name.clone())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::ChecksFailed(failed))
            }
        }
    }
}

fn run_checks(
    config: &ScenarioConfig,
    scenario: &Scenario,
    rec: &mut Recorder,
) -> Result<Vec<CheckReport>, CliError> {
    let Scenario {
        problem,
        level,
        sweep,
        solver,
    } = scenario;
    let check = &config.check;
    let ac = rec.phase("sweep", || solve_acocp(problem, *level, sweep, solver))?;
    let first_hit = check_first_hit(&ac.sweep, ac.t_star, TerminalSetLevel::new(ac.level)?);
    let bellman = rec.phase("bellman", || {
        check_bellman_consistency(
            problem,
            &ac,
            check.bellman_stride,
            check.bellman_tolerance,
            solver,
        )
    })?;
    let lyapunov = rec.phase("lyapunov", || check_lyapunov_decrease(problem, &ac, solver))?;
    let jacobians = rec.phase("jacobians", || {
        check_jacobians(&problem.model, check.jacobian_samples, check.seed)
    })?;
    Ok(vec![first_hit, bellman, lyapunov, jacobians])
}
