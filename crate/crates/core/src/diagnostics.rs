//! Numerical checks of solver output: dynamic-programming consistency,
//! decrease of the optimal cost along the closed loop, Jacobian accuracy,
//! and a discrete Riccati fixed point used as an exact LQR reference.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::TerminalSetLevel;
use crate::dynamics::{ControlVec, Model, StateVec};
use crate::error::{Error, Result};
use crate::horizon::{local_first_hit, ACResult, SweepRecord};
use crate::ilqr::SolverOptions;
use crate::problem::Problem;

pub const BELLMAN_TOLERANCE: f64 = 1e-3;
pub const JACOBIAN_TOLERANCE: f64 = 1e-4;
/// Lyapunov slack relative to the optimal cost at the initial state.
pub const LYAPUNOV_RELATIVE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSample {
    pub index: usize,
    pub violation: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub details: Vec<CheckSample>,
}

impl CheckReport {
    fn from_samples(name: &str, tolerance: f64, details: Vec<CheckSample>) -> Self {
        let worst_violation = details.iter().map(|s| s.violation).fold(0.0, |a: f64, v| {
            if v.is_nan() {
                f64::NAN
            } else {
                a.max(v)
            }
        });
        CheckReport {
            name: name.to_string(),
            passed: details.iter().all(|s| s.passed),
            worst_violation,
            tolerance,
            details,
        }
    }
}

/// Infinite-horizon LQR solution `(P, K)` with `u = -K x`, by iterating the
/// Riccati recursion from `P = Q`.
pub fn dare_fixed_point(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    dare_from(a, b, q, r, q.clone())
}

/// Same iteration started from an arbitrary symmetric `p0`.
pub fn dare_from(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p0: DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 100_000;
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || p0.shape() != (n, n) {
        return Err(Error::OracleFailed("inconsistent matrix shapes".into()));
    }
    if r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::OracleFailed("R does not match B".into()));
    }
    let mut p = p0;
    for _ in 0..MAX_ITER {
        let (next, k) = riccati_step(a, b, q, r, &p)?;
        let change = (&next - &p).amax();
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= TOL {
            return Ok((p, k));
        }
    }
    Err(Error::OracleFailed(format!(
        "Riccati iteration did not settle within {MAX_ITER} steps"
    )))
}

fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let k = s
        .cholesky()
        .ok_or_else(|| Error::OracleFailed("R + B'PB is not positive definite".into()))?
        .solve(&(&bt_p * a));
    let at_p = a.transpose() * p;
    let next = q + &at_p * a - (&at_p * b) * &k;
    Ok(((&next + next.transpose()) * 0.5, k))
}

/// Every swept horizon below `T*` must end outside the terminal set.
pub fn check_first_hit(
    sweep: &[SweepRecord],
    t_star: usize,
    level: TerminalSetLevel,
) -> CheckReport {
    let m = level.value();
    let details = sweep
        .iter()
        .filter(|r| r.horizon < t_star)
        .map(|r| {
            let violation = (m - r.terminal_phi).max(0.0);
            CheckSample {
                index: r.horizon,
                violation,
                passed: r.terminal_phi > m,
                note: (!r.converged).then(|| "unconverged".to_string()),
            }
        })
        .collect();
    CheckReport::from_samples("first_hit_minimality", 0.0, details)
}

/// Optimal free-final-time cost from each requested step of the solution,
/// obtained by re-solving from the realized state. Steps inside the terminal
/// set cost exactly `M`.
fn cost_to_go(
    problem: &Problem,
    ac: &ACResult,
    steps: &[usize],
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    let level = TerminalSetLevel::new(ac.level)?;
    let states = &ac.solution.trajectory.states;
    let controls = &ac.solution.trajectory.controls;
    let max_horizon = 2 * ac.t_star + 50;
    steps
        .par_iter()
        .map(|&k| {
            if k == 0 {
                return Ok(ac.j_m);
            }
            let local = problem.from_state(states[k].clone())?;
            let remaining = ac.t_star - k;
            let hit = local_first_hit(
                &local,
                level,
                remaining,
                &controls[k..],
                max_horizon,
                options,
            )?;
            Ok(hit.j_m)
        })
        .collect()
}

/// `J(x_k) = c(x_k, u_k) + beta * J(x_{k+1})` along the solution, sampled
/// every `stride` steps and always at the last step before the hit.
pub fn check_bellman_consistency(
    problem: &Problem,
    ac: &ACResult,
    stride: usize,
    tolerance: f64,
    options: &SolverOptions,
) -> Result<CheckReport> {
    if stride == 0 {
        return Err(Error::invalid("stride", "must be at least 1"));
    }
    let t = ac.t_star;
    if t == 0 {
        return Ok(CheckReport::from_samples(
            "bellman_consistency",
            tolerance,
            Vec::new(),
        ));
    }
    let mut samples: Vec<usize> = (0..t).step_by(stride).collect();
    if samples.last() != Some(&(t - 1)) {
        samples.push(t - 1);
    }
    let mut needed: Vec<usize> = samples.iter().flat_map(|&k| [k, k + 1]).collect();
    needed.sort_unstable();
    needed.dedup();
    let values = cost_to_go(problem, ac, &needed, options)?;
    let value_at = |k: usize| values[needed.binary_search(&k).expect("requested step")];

    let beta = problem.cost.beta();
    let traj = &ac.solution.trajectory;
    let details = samples
        .iter()
        .map(|&k| {
            let stage = problem.cost.stage_cost(&traj.states[k], &traj.controls[k]);
            let lhs = value_at(k);
            let residual = lhs - stage - beta * value_at(k + 1);
            let violation = residual.abs() / lhs.abs().max(f64::MIN_POSITIVE);
            CheckSample {
                index: k,
                violation,
                passed: violation <= tolerance,
                note: None,
            }
        })
        .collect();
    Ok(CheckReport::from_samples(
        "bellman_consistency",
        tolerance,
        details,
    ))
}

/// Decrease condition `V_{k+1} - V_k <= -c_k + tolerance` with strict decrease,
/// checked only where the state lies outside the terminal set. `values` has
/// one more entry than `stage_costs` and `outside`.
pub fn lyapunov_report(
    values: &[f64],
    stage_costs: &[f64],
    outside: &[bool],
    tolerance: f64,
) -> Result<CheckReport> {
    if values.len() != stage_costs.len() + 1 || outside.len() != stage_costs.len() {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov samples",
            expected: stage_costs.len() + 1,
            actual: values.len(),
        });
    }
    let details = (0..stage_costs.len())
        .filter(|&k| outside[k])
        .map(|k| {
            let delta = values[k + 1] - values[k];
            let violation = (delta + stage_costs[k]).max(0.0);
            let strict = delta < 0.0;
            CheckSample {
                index: k,
                violation,
                passed: violation <= tolerance && strict,
                note: (!strict).then(|| format!("no decrease: delta = {delta:e}")),
            }
        })
        .collect();
    Ok(CheckReport::from_samples(
        "lyapunov_decrease",
        tolerance,
        details,
    ))
}

/// Re-solves from every state of the solution before the hit and checks that
/// the optimal cost decreases by at least the stage cost at each step.
pub fn check_lyapunov_decrease(
    problem: &Problem,
    ac: &ACResult,
    options: &SolverOptions,
) -> Result<CheckReport> {
    let level = TerminalSetLevel::new(ac.level)?;
    let steps: Vec<usize> = (0..=ac.t_star).collect();
    let values = cost_to_go(problem, ac, &steps, options)?;
    let traj = &ac.solution.trajectory;
    let stage_costs: Vec<f64> = (0..ac.t_star)
        .map(|k| problem.cost.stage_cost(&traj.states[k], &traj.controls[k]))
        .collect();
    let outside: Vec<bool> = (0..ac.t_star)
        .map(|k| !problem.cost.in_terminal_set(&traj.states[k], level))
        .collect();
    lyapunov_report(
        &values,
        &stage_costs,
        &outside,
        LYAPUNOV_RELATIVE_SLACK * ac.j_m.abs(),
    )
}

/// Central-difference linearization against a forward-difference reference
/// at `n_samples` random points (states in [-2, 2], controls in [-0.5, 0.5]).
pub fn check_jacobians(model: &Model, n_samples: usize, seed: u64) -> Result<CheckReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut details = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let x = StateVec::from_fn(n, |_, _| rng.gen_range(-2.0..=2.0));
        let u = ControlVec::from_fn(m, |_, _| rng.gen_range(-0.5..=0.5));
        let lin = model.linearize(&x, &u)?;
        let (fa, fb) = forward_difference(model, &x, &u)?;
        let violation = relative_gap(&lin.a, &fa).max(relative_gap(&lin.b, &fb));
        details.push(CheckSample {
            index,
            violation,
            passed: violation <= JACOBIAN_TOLERANCE,
            note: None,
        });
    }
    Ok(CheckReport::from_samples(
        "jacobians",
        JACOBIAN_TOLERANCE,
        details,
    ))
}

fn relative_gap(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(reference.iter())
        .map(|(x, r)| (x - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn forward_difference(
    model: &Model,
    x: &StateVec,
    u: &ControlVec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let base = model.step(x, u)?;
    let mut fa = DMatrix::zeros(x.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += 1e-5 * x[j].abs().max(1.0);
        let width = xp[j] - x[j];
        fa.set_column(j, &((model.step(&xp, u)? - &base) / width));
    }
    let mut fb = DMatrix::zeros(x.len(), u.len());
    for j in 0..u.len() {
        let mut up = u.clone();
        up[j] += 1e-5 * u[j].abs().max(1.0);
        let width = up[j] - u[j];
        fb.set_column(j, &((model.step(x, &up)? - &base) / width));
    }
    Ok((fa, fb))
}
