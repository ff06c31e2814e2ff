//! Fixed-horizon iterative LQR.
//!
//! Each iteration linearizes the dynamics along the nominal trajectory, runs a
//! Riccati-like backward recursion on the quadratic cost expansion and rolls the
//! resulting affine policy forward with a backtracking line search. The control
//! Hessian is Levenberg-Marquardt regularized; the regularization is zero while
//! iterations succeed and is raised only after a failed backward or forward pass.

use nalgebra::{DMatrix, DVector};

use crate::cost::{CostBreakdown, Objective, QuadExpansion, TerminalExpansion};
use crate::dynamics::{check_len, ControlVec, Linearization, Model, StateVec, Trajectory};
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Minimum fraction of the predicted decrease a line-search step must realize.
pub const ARMIJO_FACTOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative cost change below which the solve is considered converged.
    pub cost_tolerance: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_scale: f64,
    /// Line-search step sizes, tried in order.
    pub alphas: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            cost_tolerance: 1e-7,
            reg_init: 1.0,
            reg_min: 1e-8,
            reg_max: 1e8,
            reg_scale: 2.0,
            alphas: (0..=10).map(|i| 0.5f64.powi(i)).collect(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        if !(self.cost_tolerance > 0.0) {
            return Err(Error::invalid("cost_tolerance", "must be positive"));
        }
        if !(0.0 < self.reg_min && self.reg_min <= self.reg_init && self.reg_init <= self.reg_max) {
            return Err(Error::invalid(
                "regularization",
                "need 0 < reg_min <= reg_init <= reg_max",
            ));
        }
        if !(self.reg_scale > 1.0) {
            return Err(Error::invalid("reg_scale", "must exceed 1"));
        }
        let decreasing = self.alphas.windows(2).all(|w| w[0] > w[1]);
        let in_range = self.alphas.iter().all(|&a| a > 0.0 && a <= 1.0);
        if self.alphas.is_empty() || !decreasing || !in_range {
            return Err(Error::invalid(
                "alphas",
                "must be non-empty, strictly decreasing and within (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Affine policy corrections `du_k = alpha * feedforward_k + feedback_k * dx_k`.
#[derive(Debug, Clone)]
pub struct Gains {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
}

/// Quadratic model of the cost change: `alpha * linear + alpha^2 * quadratic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedDecrease {
    pub linear: f64,
    pub quadratic: f64,
}

impl ExpectedDecrease {
    /// Predicted reduction of the cost for step size `alpha` (non-negative when
    /// the backward pass succeeded).
    pub fn predicted(&self, alpha: f64) -> f64 {
        -(alpha * self.linear + alpha * alpha * self.quadratic)
    }
}

/// The regularized control Hessian was not positive definite at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndefiniteHessian {
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct Iterate {
    pub trajectory: Trajectory,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub iterate: Iterate,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub trajectory: Trajectory,
    pub breakdown: CostBreakdown,
    pub converged: bool,
    pub iterations: usize,
    pub feedback_gains: Vec<DMatrix<f64>>,
    /// Cost of every accepted iterate, starting with the initial rollout.
    pub cost_history: Vec<f64>,
}

impl SolveResult {
    pub fn horizon(&self) -> usize {
        self.trajectory.horizon()
    }

    pub fn controls(&self) -> &[ControlVec] {
        &self.trajectory.controls
    }

    pub fn final_state(&self) -> &StateVec {
        self.trajectory.final_state()
    }
}

pub fn backward_pass(
    linearizations: &[Linearization],
    stages: &[QuadExpansion],
    terminal: &TerminalExpansion,
    regularization: f64,
) -> std::result::Result<(Gains, ExpectedDecrease), IndefiniteHessian> {
    assert_eq!(linearizations.len(), stages.len());
    let horizon = stages.len();
    let mut v_x = terminal.v_x.clone();
    let mut v_xx = terminal.v_xx.clone();
    let mut feedforward = vec![DVector::zeros(0); horizon];
    let mut feedback = vec![DMatrix::zeros(0, 0); horizon];
    let mut expected = ExpectedDecrease {
        linear: 0.0,
        quadratic: 0.0,
    };

    for k in (0..horizon).rev() {
        let Linearization { a, b, .. } = &linearizations[k];
        let c = &stages[k];
        let at = a.transpose();
        let bt = b.transpose();
        let vxx_a = &v_xx * a;
        let vxx_b = &v_xx * b;

        let q_x = &c.c_x + &at * &v_x;
        let q_u = &c.c_u + &bt * &v_x;
        let q_xx = &c.c_xx + &at * &vxx_a;
        let q_uu = &c.c_uu + &bt * &vxx_b;
        let q_ux = &c.c_ux + &bt * &vxx_a;

        let mut q_uu_reg = q_uu.clone();
        for i in 0..q_uu_reg.nrows() {
            q_uu_reg[(i, i)] += regularization;
        }
        let q_uu_reg = (&q_uu_reg + q_uu_reg.transpose()) * 0.5;
        let chol = q_uu_reg.cholesky().ok_or(IndefiniteHessian { step: k })?;

        let k_ff = -chol.solve(&q_u);
        let k_fb = -chol.solve(&q_ux);
        if k_ff.iter().chain(k_fb.iter()).any(|v| !v.is_finite()) {
            return Err(IndefiniteHessian { step: k });
        }

        expected.linear += k_ff.dot(&q_u);
        expected.quadratic += 0.5 * k_ff.dot(&(&q_uu * &k_ff));

        let k_fb_t = k_fb.transpose();
        let q_ux_t = q_ux.transpose();
        v_x = &q_x + &k_fb_t * (&q_uu * &k_ff) + &k_fb_t * &q_u + &q_ux_t * &k_ff;
        let vxx = &q_xx + &k_fb_t * (&q_uu * &k_fb) + &k_fb_t * &q_ux + &q_ux_t * &k_fb;
        v_xx = (&vxx + vxx.transpose()) * 0.5;

        feedforward[k] = k_ff;
        feedback[k] = k_fb;
    }

    Ok((
        Gains {
            feedforward,
            feedback,
        },
        expected,
    ))
}

fn total_cost<O: Objective + ?Sized>(objective: &O, traj: &Trajectory) -> f64 {
    objective.breakdown(&traj.states, &traj.controls).total
}

fn rollout_policy<O: Objective + ?Sized>(
    model: &Model,
    objective: &O,
    nominal: &Trajectory,
    gains: &Gains,
    alpha: f64,
) -> Option<Iterate> {
    let horizon = nominal.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(nominal.states[0].clone());
    for k in 0..horizon {
        let dx = &states[k] - &nominal.states[k];
        let u = &nominal.controls[k] + &gains.feedforward[k] * alpha + &gains.feedback[k] * dx;
        let next = model.step(&states[k], &u).ok()?;
        controls.push(u);
        states.push(next);
    }
    let trajectory = Trajectory { states, controls };
    let cost = total_cost(objective, &trajectory);
    cost.is_finite().then_some(Iterate { trajectory, cost })
}

/// Backtracking line search over `alphas`. Returns `None` when no step size
/// yields a strict decrease of at least [`ARMIJO_FACTOR`] times the predicted one.
pub fn forward_pass<O: Objective + ?Sized>(
    model: &Model,
    objective: &O,
    nominal: &Iterate,
    gains: &Gains,
    expected: &ExpectedDecrease,
    alphas: &[f64],
) -> Option<Accepted> {
    if expected.predicted(1.0) <= 0.0 {
        return Some(Accepted {
            iterate: nominal.clone(),
            alpha: 0.0,
        });
    }
    alphas.iter().find_map(|&alpha| {
        let candidate = rollout_policy(model, objective, &nominal.trajectory, gains, alpha)?;
        let actual = nominal.cost - candidate.cost;
        (candidate.cost < nominal.cost && actual >= ARMIJO_FACTOR * expected.predicted(alpha))
            .then_some(Accepted {
                iterate: candidate,
                alpha,
            })
    })
}

fn relative(change: f64, reference: f64) -> f64 {
    if reference.abs() > 0.0 {
        change / reference.abs()
    } else {
        change.abs()
    }
}

/// Solves the fixed-horizon problem for `problem.cost`. Controls start at
/// zero unless `init_controls` is given.
pub fn solve_fhocp(
    problem: &Problem,
    horizon: usize,
    init_controls: Option<&[ControlVec]>,
    options: &SolverOptions,
) -> Result<SolveResult> {
    solve_with_objective(
        &problem.model,
        &problem.cost,
        &problem.x0,
        horizon,
        init_controls,
        options,
    )
}

pub fn solve_with_objective<O: Objective + ?Sized>(
    model: &Model,
    objective: &O,
    x0: &StateVec,
    horizon: usize,
    init_controls: Option<&[ControlVec]>,
    options: &SolverOptions,
) -> Result<SolveResult> {
    options.validate()?;
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let controls = match init_controls {
        Some(init) => {
            check_len("initial control sequence", horizon, init.len())?;
            for u in init {
                check_len("control", model.control_dim(), u.len())?;
            }
            init.to_vec()
        }
        None => vec![model.zero_control(); horizon],
    };
    let trajectory = model.rollout(x0, &controls)?;
    let cost = total_cost(objective, &trajectory);
    if !cost.is_finite() {
        return Err(Error::NumericOverflow { step: 0 });
    }
    let mut current = Iterate { trajectory, cost };
    let mut cost_history = vec![cost];
    let mut regularization = 0.0;
    let mut feedback_gains = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let finish = |current: Iterate, converged, iterations, feedback_gains, cost_history| {
        let breakdown =
            objective.breakdown(&current.trajectory.states, &current.trajectory.controls);
        SolveResult {
            trajectory: current.trajectory,
            breakdown,
            converged,
            iterations,
            feedback_gains,
            cost_history,
        }
    };

    let raise = |reg: f64| {
        if reg == 0.0 {
            options.reg_init
        } else {
            reg * options.reg_scale
        }
    };

    while iterations < options.max_iterations {
        iterations += 1;
        let traj = &current.trajectory;
        let linearizations = traj
            .states
            .iter()
            .zip(&traj.controls)
            .map(|(x, u)| model.linearize(x, u))
            .collect::<Result<Vec<_>>>()?;
        let stages: Vec<_> = traj
            .states
            .iter()
            .zip(&traj.controls)
            .enumerate()
            .map(|(k, (x, u))| objective.stage_expansion(x, u, k))
            .collect();
        let terminal = objective.terminal_expansion(traj.final_state(), horizon);

        let (gains, expected) = loop {
            match backward_pass(&linearizations, &stages, &terminal, regularization) {
                Ok(out) => break out,
                Err(_) => {
                    regularization = raise(regularization);
                    if regularization > options.reg_max {
                        let last = finish(current, false, iterations, feedback_gains, cost_history);
                        return Err(Error::SolverDiverged {
                            iterations,
                            last: Box::new(last),
                        });
                    }
                }
            }
        };

        if expected.predicted(1.0) <= options.cost_tolerance * current.cost.abs() {
            feedback_gains = gains.feedback;
            converged = true;
            break;
        }

        match forward_pass(
            model,
            objective,
            &current,
            &gains,
            &expected,
            &options.alphas,
        ) {
            Some(accepted) => {
                let change = relative(current.cost - accepted.iterate.cost, current.cost);
                current = accepted.iterate;
                cost_history.push(current.cost);
                feedback_gains = gains.feedback;
                regularization /= options.reg_scale;
                if regularization < options.reg_min {
                    regularization = 0.0;
                }
                if change <= options.cost_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                feedback_gains = gains.feedback;
                regularization = raise(regularization);
                if regularization > options.reg_max {
                    let last = finish(current, false, iterations, feedback_gains, cost_history);
                    return Err(Error::SolverDiverged {
                        iterations,
                        last: Box::new(last),
                    });
                }
            }
        }
    }

    Ok(finish(
        current,
        converged,
        iterations,
        feedback_gains,
        cost_history,
    ))
}
