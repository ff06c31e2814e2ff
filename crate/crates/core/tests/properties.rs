mod common;

use common::*;
use freehorizon::cost::{CostSpec, Objective, QuadExpansion, TerminalExpansion};
use freehorizon::dynamics::{ControlVec, Model, StateVec};
use freehorizon::horizon::{solve_acocp, SweepParams};
use freehorizon::ilqr::{solve_fhocp, solve_with_objective, SolverOptions};
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

/// Global RK4 error over a fixed interval at `dt` against a much finer solve.
fn rk4_global_error(model: &Model, x0: &StateVec, u: &ControlVec, dt: f64, duration: f64) -> f64 {
    let run = |h: f64| {
        let steps = (duration / h).round() as usize;
        (0..steps).fold(x0.clone(), |x, _| model.step_with_dt(&x, u, h).unwrap())
    };
    (run(dt) - run(dt / 64.0)).norm()
}

#[test]
fn rk4_error_ratio_on_halving_is_sixteen() {
    let model = Model::car_like(1.0, 0.01).unwrap();
    let x0 = dvector![0.0, 0.0, 0.3, 1.0];
    let u = dvector![0.4, 0.8];
    for dt in [0.2, 0.1] {
        let ratio = rk4_global_error(&model, &x0, &u, dt, 2.0)
            / rk4_global_error(&model, &x0, &u, dt / 2.0, 2.0);
        assert!((12.0..=20.0).contains(&ratio), "dt={dt}: ratio {ratio}");
    }
}

#[test]
fn linearization_remainder_is_second_order() {
    let model = Model::car_like(1.0, 0.01).unwrap();
    let x = dvector![0.5, -0.2, 0.7, 1.5];
    let u = dvector![0.2, -0.3];
    let lin = model.linearize(&x, &u).unwrap();
    let base = model.step(&x, &u).unwrap();
    let dx = dvector![1.0, -0.5, 2.0, 1.0];
    let du = dvector![1.0, 2.0];
    let remainder = |s: f64| {
        let next = model.step(&(&x + &dx * s), &(&u + &du * s)).unwrap();
        (next - &base - &lin.a * &dx * s - &lin.b * &du * s).norm()
    };
    for s in [1e-1, 5e-2, 2.5e-2] {
        let ratio = remainder(s) / remainder(s / 2.0);
        assert!((3.5..=4.5).contains(&ratio), "s={s}: ratio {ratio}");
    }
}

/// Undiscounted weights with an explicit table of per-step factors.
struct Prescaled {
    cost: CostSpec,
    weights: Vec<f64>,
}

impl Prescaled {
    fn new(cost: CostSpec, beta: f64, horizon: usize) -> Self {
        let mut weights = vec![1.0];
        for _ in 0..horizon {
            let last = *weights.last().unwrap();
            weights.push(last * beta);
        }
        Prescaled { cost, weights }
    }
}

impl Objective for Prescaled {
    fn stage(&self, x: &StateVec, u: &ControlVec, k: usize) -> f64 {
        self.weights[k] * self.cost.stage_cost(x, u)
    }

    fn terminal(&self, x: &StateVec, horizon: usize) -> f64 {
        self.weights[horizon] * self.cost.terminal_cost(x)
    }

    fn stage_expansion(&self, x: &StateVec, u: &ControlVec, k: usize) -> QuadExpansion {
        let e = self.cost.stage_expansion(x, u, k);
        let w = self.weights[k];
        QuadExpansion {
            c_x: e.c_x * w,
            c_u: e.c_u * w,
            c_xx: e.c_xx * w,
            c_uu: e.c_uu * w,
            c_ux: e.c_ux * w,
            value: e.value * w,
        }
    }

    fn terminal_expansion(&self, x: &StateVec, horizon: usize) -> TerminalExpansion {
        let e = self.cost.terminal_expansion(x, horizon);
        let w = self.weights[horizon];
        TerminalExpansion {
            v_x: e.v_x * w,
            v_xx: e.v_xx * w,
            value: e.value * w,
        }
    }
}

#[test]
fn discounting_equals_prescaled_stage_costs() {
    let problem = unicycle([0.0, 0.0, 0.0]);
    let horizon = 60;
    let beta = 0.97;
    let opts = SolverOptions::default();
    let discounted = solve_fhocp(&with_beta(&problem, beta), horizon, None, &opts).unwrap();
    let prescaled = Prescaled::new(problem.cost.clone(), beta, horizon);
    let reference = solve_with_objective(
        &problem.model,
        &prescaled,
        &problem.x0,
        horizon,
        None,
        &opts,
    )
    .unwrap();
    for (a, b) in discounted
        .trajectory
        .states
        .iter()
        .zip(&reference.trajectory.states)
    {
        assert!((a - b).amax() < 1e-8);
    }
    assert!((discounted.breakdown.total - reference.breakdown.total).abs() < 1e-8);
}

#[test]
fn solves_and_sweeps_are_bitwise_reproducible() {
    let problem = unicycle([-1.0, 2.0, 0.5]);
    let opts = SolverOptions::default();
    let a = solve_fhocp(&problem, 40, None, &opts).unwrap();
    let b = solve_fhocp(&problem, 40, None, &opts).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.cost_history, b.cost_history);

    for parallel in [false, true] {
        let params = SweepParams {
            parallel,
            ..unicycle_sweep()
        };
        let first = solve_acocp(&problem, level(0.05), &params, &opts).unwrap();
        let second = solve_acocp(&problem, level(0.05), &params, &opts).unwrap();
        assert_eq!(first.sweep, second.sweep);
        assert_eq!(first.j_m.to_bits(), second.j_m.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cost_history_never_increases(
        x in -3.0..3.0f64,
        y in -3.0..3.0f64,
        theta in -3.0..3.0f64,
        horizon in 5usize..60,
    ) {
        let problem = unicycle([x, y, theta]);
        let result = solve_fhocp(&problem, horizon, None, &SolverOptions::default()).unwrap();
        prop_assert!(result.cost_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*result.cost_history.last().unwrap(), result.breakdown.total);
    }

    #[test]
    fn double_integrator_cost_is_the_riccati_value(x in -5.0..5.0f64, v in -5.0..5.0f64, horizon in 1usize..60) {
        let (problem, p) = di_lqr([x, v]);
        let result = solve_fhocp(&problem, horizon, None, &SolverOptions::default()).unwrap();
        let x0 = DVector::from_vec(vec![x, v]);
        let exact = x0.dot(&(&p * &x0));
        prop_assert!((result.breakdown.total - exact).abs() <= 1e-8 * exact.max(1e-12));
    }
}
