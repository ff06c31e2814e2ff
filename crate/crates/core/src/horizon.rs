//! Free-final-time solutions by horizon sweeping.
//!
//! The alternative construction minimizes `sum c(x_k, u_k) + max(phi(x_T), M)`
//! over both the controls and the horizon `T`, subject to `x_T` lying in the
//! terminal set `{phi <= M}`. Its optimal horizon is the first `T` whose
//! fixed-horizon solution ends inside the set, so we solve the fixed-horizon
//! problem over a grid of horizons and take the first hit. Hitting times are
//! only resolved on that grid (unit steps after refinement).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{Objective, TerminalFree, TerminalSetLevel};
use crate::dynamics::{ControlVec, Trajectory};
use crate::error::{Error, Result};
use crate::ilqr::{solve_fhocp, solve_with_objective, SolveResult, SolverOptions};
use crate::problem::Problem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub t_min: usize,
    pub t_max: usize,
    pub t_step: usize,
    /// Re-solve at unit spacing just below the first grid hit.
    pub refine: bool,
    /// Cold-start every horizon and solve them concurrently.
    pub parallel: bool,
    /// Stop scanning once `T > overshoot * T_hit`; `None` sweeps the full range.
    pub overshoot: Option<f64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            t_min: 10,
            t_max: 1000,
            t_step: 5,
            refine: true,
            parallel: false,
            overshoot: None,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::invalid("sweep", "need 1 <= t_min <= t_max"));
        }
        if self.t_step == 0 {
            return Err(Error::invalid("t_step", "must be at least 1"));
        }
        if let Some(f) = self.overshoot {
            if !(f >= 1.0) {
                return Err(Error::invalid("overshoot", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Summary of the fixed-horizon solution at one swept horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub horizon: usize,
    pub total_cost: f64,
    pub transfer_cost: f64,
    /// Undiscounted `phi(x_T)`.
    pub terminal_phi: f64,
    pub hit: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// Solution of the alternative construction at level `M`.
#[derive(Debug, Clone)]
pub struct ACResult {
    pub t_star: usize,
    pub level: f64,
    /// `transfer(T*) + beta^T* * M`.
    pub j_m: f64,
    /// `phi(x_T*) - M`; at most zero, and small at unit sweep resolution.
    pub terminal_gap: f64,
    pub solution: SolveResult,
    pub sweep: Vec<SweepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MSweepRow {
    pub level: f64,
    pub t_star: usize,
    pub j_m: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSweepResult {
    pub rows: Vec<MSweepRow>,
    pub j_ref: f64,
    pub reference_horizon: usize,
    pub reference_converged: bool,
}

#[derive(Debug, Clone)]
pub struct DiscountedResult {
    pub entered: bool,
    pub t_star: Option<usize>,
    pub j_m: Option<f64>,
    pub budget_t: usize,
    pub beta: f64,
    pub sweep: Vec<SweepRecord>,
}

struct Sweep {
    records: Vec<SweepRecord>,
    /// Solutions of hitting records, keyed by horizon.
    hits: BTreeMap<usize, SolveResult>,
}

fn warm_start(prev: &[ControlVec], horizon: usize, zero: &ControlVec) -> Vec<ControlVec> {
    let mut controls: Vec<ControlVec> = prev.iter().take(horizon).cloned().collect();
    controls.resize(horizon, zero.clone());
    controls
}

fn record_from(problem: &Problem, horizon: usize, level: f64, result: &SolveResult) -> SweepRecord {
    let terminal_phi = problem.cost.terminal_cost(result.final_state());
    SweepRecord {
        horizon,
        total_cost: result.breakdown.total,
        transfer_cost: result.breakdown.transfer,
        terminal_phi,
        hit: terminal_phi <= level,
        converged: result.converged,
        iterations: result.iterations,
    }
}

/// Outcome of one horizon: the solution (possibly an unconverged last
/// iterate) and a failure note when the solver gave up.
type Attempt = (Option<SolveResult>, Option<String>);

fn solve_one(
    problem: &Problem,
    horizon: usize,
    init: Option<&[ControlVec]>,
    options: &SolverOptions,
) -> Attempt {
    match solve_fhocp(problem, horizon, init, options) {
        Ok(r) => (Some(r), None),
        Err(Error::SolverDiverged { last, iterations }) => (
            Some(*last),
            Some(format!("diverged after {iterations} iterations")),
        ),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn failed_record(horizon: usize) -> SweepRecord {
    SweepRecord {
        horizon,
        total_cost: f64::NAN,
        transfer_cost: f64::NAN,
        terminal_phi: f64::NAN,
        hit: false,
        converged: false,
        iterations: 0,
    }
}

struct SweepState<'a> {
    problem: &'a Problem,
    level: f64,
    options: &'a SolverOptions,
    records: BTreeMap<usize, SweepRecord>,
    hits: BTreeMap<usize, SolveResult>,
    /// Controls per solved horizon, for warm starts in serial mode.
    warm: BTreeMap<usize, Vec<ControlVec>>,
    failures: Vec<(usize, String)>,
}

impl<'a> SweepState<'a> {
    fn insert(&mut self, horizon: usize, (result, failure): Attempt, keep_warm: bool) {
        if let Some(msg) = failure {
            self.failures.push((horizon, msg));
        }
        let Some(result) = result else {
            self.records.insert(horizon, failed_record(horizon));
            return;
        };
        let record = record_from(self.problem, horizon, self.level, &result);
        if keep_warm {
            self.warm
                .insert(horizon, result.trajectory.controls.clone());
        }
        if record.hit {
            self.hits.insert(horizon, result);
        }
        self.records.insert(horizon, record);
    }

    fn solve_serial(&mut self, horizon: usize) {
        let zero = self.problem.model.zero_control();
        let init = self
            .warm
            .range(..horizon)
            .next_back()
            .map(|(_, prev)| warm_start(prev, horizon, &zero));
        let attempt = solve_one(self.problem, horizon, init.as_deref(), self.options);
        self.insert(horizon, attempt, true);
    }

    fn solve_batch(&mut self, horizons: &[usize]) {
        let (problem, options) = (self.problem, self.options);
        let attempts: Vec<_> = horizons
            .par_iter()
            .map(|&h| (h, solve_one(problem, h, None, options)))
            .collect();
        for (h, attempt) in attempts {
            self.insert(h, attempt, false);
        }
    }

    fn first_hit(&self) -> Option<usize> {
        self.records
            .values()
            .find(|r| r.hit && r.converged)
            .map(|r| r.horizon)
    }
}

fn run_sweep(
    problem: &Problem,
    level: f64,
    params: &SweepParams,
    options: &SolverOptions,
) -> Result<Sweep> {
    params.validate()?;
    options.validate()?;
    let grid: Vec<usize> = (params.t_min..=params.t_max)
        .step_by(params.t_step)
        .collect();
    let mut state = SweepState {
        problem,
        level,
        options,
        records: BTreeMap::new(),
        hits: BTreeMap::new(),
        warm: BTreeMap::new(),
        failures: Vec::new(),
    };
    let past_overshoot =
        |state: &SweepState, horizon: usize| match (params.overshoot, state.first_hit()) {
            (Some(f), Some(hit)) => horizon as f64 > f * hit as f64,
            _ => false,
        };

    if params.parallel {
        let batch = rayon::current_num_threads().max(1);
        for chunk in grid.chunks(batch) {
            let todo: Vec<usize> = chunk
                .iter()
                .copied()
                .filter(|&h| !past_overshoot(&state, h))
                .collect();
            if todo.is_empty() {
                break;
            }
            state.solve_batch(&todo);
        }
    } else {
        for &h in &grid {
            if past_overshoot(&state, h) {
                break;
            }
            state.solve_serial(h);
        }
    }

    if params.refine {
        if let Some(hit) = state.first_hit() {
            if let Some((&lower, _)) = state.records.range(..hit).next_back() {
                let gaps: Vec<usize> = (lower + 1..hit).collect();
                if params.parallel {
                    state.solve_batch(&gaps);
                } else {
                    for h in gaps {
                        state.solve_serial(h);
                    }
                }
            }
        }
    }

    let records: Vec<SweepRecord> = state.records.into_values().collect();
    if !records.is_empty() && records.iter().all(|r| !r.total_cost.is_finite()) {
        return Err(Error::SweepFailed {
            diagnostics: state.failures,
        });
    }
    Ok(Sweep {
        records,
        hits: state.hits,
    })
}

/// Fixed-horizon solutions over the horizon grid of `params`, in increasing `T`.
pub fn sweep_horizons(
    problem: &Problem,
    level: TerminalSetLevel,
    params: &SweepParams,
    options: &SolverOptions,
) -> Result<Vec<SweepRecord>> {
    run_sweep(problem, level.value(), params, options).map(|s| s.records)
}

/// Smallest swept horizon whose solution converged and ended inside the set.
pub fn first_hitting_time(sweep: &[SweepRecord], level: TerminalSetLevel) -> Option<usize> {
    sweep
        .iter()
        .find(|r| r.converged && r.terminal_phi <= level.value())
        .map(|r| r.horizon)
}

fn positive_level(level: TerminalSetLevel) -> Result<f64> {
    if level.value() > 0.0 {
        Ok(level.value())
    } else {
        Err(Error::invalid("M", "must be positive"))
    }
}

fn ac_result(problem: &Problem, level: f64, sweep: Sweep, t_max: usize) -> Result<ACResult> {
    let t_star = first_hitting_time(&sweep.records, TerminalSetLevel::new(level)?)
        .ok_or(Error::NoHittingTime { t_max, level })?;
    let solution = sweep
        .hits
        .get(&t_star)
        .cloned()
        .expect("hitting records keep their solution");
    let record = sweep
        .records
        .iter()
        .find(|r| r.horizon == t_star)
        .expect("first hit is a swept record");
    let j_m = record.transfer_cost + problem.cost.discount(t_star) * level;
    Ok(ACResult {
        t_star,
        level,
        j_m,
        terminal_gap: record.terminal_phi - level,
        solution,
        sweep: sweep.records,
    })
}

/// Free-final-time solution: the first hitting time of the terminal set and
/// the associated cost `J_M`.
pub fn solve_acocp(
    problem: &Problem,
    level: TerminalSetLevel,
    params: &SweepParams,
    options: &SolverOptions,
) -> Result<ACResult> {
    let m = positive_level(level)?;
    let sweep = run_sweep(problem, m, params, options)?;
    if problem.cost.terminal_cost(&problem.x0) <= m {
        return Ok(immediate_hit(problem, m, sweep.records));
    }
    ac_result(problem, m, sweep, params.t_max)
}

/// A start inside the terminal set is optimal with the empty horizon: no
/// transfer cost is paid and the terminal payoff is exactly `M`.
fn immediate_hit(problem: &Problem, level: f64, sweep: Vec<SweepRecord>) -> ACResult {
    let trajectory = Trajectory {
        states: vec![problem.x0.clone()],
        controls: Vec::new(),
    };
    let breakdown = problem
        .cost
        .breakdown(&trajectory.states, &trajectory.controls);
    ACResult {
        t_star: 0,
        level,
        j_m: level,
        terminal_gap: problem.cost.terminal_cost(&problem.x0) - level,
        solution: SolveResult {
            trajectory,
            breakdown,
            converged: true,
            iterations: 0,
            feedback_gains: Vec::new(),
            cost_history: vec![breakdown.total],
        },
        sweep,
    }
}

/// Solves the free-final-time problem for each level (strictly decreasing)
/// and compares `J_M` with a long-horizon solve that has no terminal cost.
pub fn m_sweep(
    problem: &Problem,
    levels: &[f64],
    params: &SweepParams,
    options: &SolverOptions,
    reference_horizon: usize,
) -> Result<MSweepResult> {
    if levels.is_empty() {
        return Err(Error::invalid("levels", "need at least one level"));
    }
    if levels.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::invalid("levels", "every level must be positive"));
    }
    if levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("levels", "must be strictly decreasing"));
    }
    let reference = solve_with_objective(
        &problem.model,
        &TerminalFree(&problem.cost),
        &problem.x0,
        reference_horizon,
        None,
        options,
    )?;
    let j_ref = reference.breakdown.total;
    let rows = levels
        .iter()
        .map(|&m| {
            let ac = solve_acocp(problem, TerminalSetLevel::new(m)?, params, options)?;
            Ok(MSweepRow {
                level: m,
                t_star: ac.t_star,
                j_m: ac.j_m,
                gap: (ac.j_m - j_ref).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MSweepResult {
        rows,
        j_ref,
        reference_horizon,
        reference_converged: reference.converged,
    })
}

/// Discounted variant: sweeps horizons up to `budget_t` and reports whether
/// the discounted solution ever enters the terminal set. Not entering is a
/// legitimate outcome.
pub fn solve_discounted_acocp(
    problem: &Problem,
    level: TerminalSetLevel,
    budget_t: usize,
    params: &SweepParams,
    options: &SolverOptions,
) -> Result<DiscountedResult> {
    let m = positive_level(level)?;
    let beta = problem.cost.beta();
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(
            "beta",
            format!("must lie in (0, 1), got {beta}"),
        ));
    }
    let params = SweepParams {
        t_max: budget_t,
        overshoot: Some(1.0),
        ..params.clone()
    };
    let sweep = run_sweep(problem, m, &params, options)?;
    if problem.cost.terminal_cost(&problem.x0) <= m {
        return Ok(DiscountedResult {
            entered: true,
            t_star: Some(0),
            j_m: Some(m),
            budget_t,
            beta,
            sweep: sweep.records,
        });
    }
    if first_hitting_time(&sweep.records, level).is_none() {
        return Ok(DiscountedResult {
            entered: false,
            t_star: None,
            j_m: None,
            budget_t,
            beta,
            sweep: sweep.records,
        });
    }
    let ac = ac_result(problem, m, sweep, budget_t)?;
    Ok(DiscountedResult {
        entered: true,
        t_star: Some(ac.t_star),
        j_m: Some(ac.j_m),
        budget_t,
        beta,
        sweep: ac.sweep,
    })
}

/// First hitting time from an arbitrary state, searched locally around a
/// guessed horizon with warm starts instead of a full sweep.
#[derive(Debug, Clone)]
pub struct LocalHit {
    pub t_star: usize,
    pub j_m: f64,
    pub solution: Option<SolveResult>,
}

pub fn local_first_hit(
    problem: &Problem,
    level: TerminalSetLevel,
    guess: usize,
    warm: &[ControlVec],
    max_horizon: usize,
    options: &SolverOptions,
) -> Result<LocalHit> {
    let m = positive_level(level)?;
    if problem.cost.terminal_cost(&problem.x0) <= m {
        return Ok(LocalHit {
            t_star: 0,
            j_m: m,
            solution: None,
        });
    }
    let zero = problem.model.zero_control();
    let hits = |r: &SolveResult| r.converged && problem.cost.terminal_cost(r.final_state()) <= m;
    let solve = |h: usize, seed: &[ControlVec]| {
        solve_fhocp(problem, h, Some(&warm_start(seed, h, &zero)), options)
    };

    let mut horizon = guess.clamp(1, max_horizon.max(1));
    let mut current = solve(horizon, warm)?;
    if hits(&current) {
        while horizon > 1 {
            let shorter = solve(horizon - 1, current.controls())?;
            if !hits(&shorter) {
                break;
            }
            horizon -= 1;
            current = shorter;
        }
    } else {
        loop {
            if horizon >= max_horizon {
                return Err(Error::NoHittingTime {
                    t_max: max_horizon,
                    level: m,
                });
            }
            horizon += 1;
            current = solve(horizon, current.controls())?;
            if hits(&current) {
                break;
            }
        }
    }
    let j_m = current.breakdown.transfer + problem.cost.discount(horizon) * m;
    Ok(LocalHit {
        t_star: horizon,
        j_m,
        solution: Some(current),
    })
}
