#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

use freehorizon::cost::{CostSpec, TerminalSetLevel};
use freehorizon::diagnostics::dare_fixed_point;
use freehorizon::dynamics::Model;
use freehorizon::horizon::SweepParams;
use freehorizon::Problem;
use nalgebra::{DMatrix, DVector};

pub const CAR_LEVEL: f64 = 0.05;

/// Weights shared by both car scenarios (also shipped in the CLI configs).
pub fn car_cost() -> CostSpec {
    CostSpec::diagonal(
        DVector::from_vec(vec![1.0, 4.0, FRAC_PI_2, 0.0]),
        &[0.01; 4],
        &[0.001, 0.01],
        &[25.0, 25.0, 2.5, 25.0],
    )
    .unwrap()
}

pub fn car_case1() -> Problem {
    Problem::new(
        Model::car_like(1.0, 0.01).unwrap(),
        car_cost(),
        DVector::from_vec(vec![0.0, 0.0, FRAC_PI_3, 0.0]),
    )
    .unwrap()
}

pub fn car_case2() -> Problem {
    car_case1()
        .from_state(DVector::from_vec(vec![-1.0, -4.0, FRAC_PI_3, 0.0]))
        .unwrap()
}

pub fn with_beta(problem: &Problem, beta: f64) -> Problem {
    Problem {
        cost: problem.cost.with_beta(beta).unwrap(),
        ..problem.clone()
    }
}

pub fn unicycle_cost() -> CostSpec {
    CostSpec::diagonal(
        DVector::from_vec(vec![2.0, 1.0, FRAC_PI_2]),
        &[0.01; 3],
        &[0.01; 2],
        &[10.0, 10.0, 1.0],
    )
    .unwrap()
}

pub fn unicycle(x0: [f64; 3]) -> Problem {
    Problem::new(
        Model::unicycle(0.05).unwrap(),
        unicycle_cost(),
        DVector::from_row_slice(&x0),
    )
    .unwrap()
}

pub fn di_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    let model = Model::double_integrator(0.1).unwrap();
    let lin = model
        .linearize(&DVector::zeros(2), &DVector::zeros(1))
        .unwrap();
    (lin.a, lin.b)
}

/// Double integrator with Q = I, R = 1 and the Riccati fixed point as
/// terminal weight; returns the problem and that fixed point.
pub fn di_lqr(x0: [f64; 2]) -> (Problem, DMatrix<f64>) {
    let (a, b) = di_matrices();
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    let (p, _) = dare_fixed_point(&a, &b, &q, &r).unwrap();
    let cost = CostSpec::new(DVector::zeros(2), q, r, p.clone(), 1.0).unwrap();
    let problem = Problem::new(
        Model::double_integrator(0.1).unwrap(),
        cost,
        DVector::from_row_slice(&x0),
    )
    .unwrap();
    (problem, p)
}

pub fn level(m: f64) -> TerminalSetLevel {
    TerminalSetLevel::new(m).unwrap()
}

pub fn car_sweep() -> SweepParams {
    SweepParams {
        t_min: 10,
        t_max: 1500,
        t_step: 5,
        refine: true,
        parallel: false,
        overshoot: Some(2.0),
    }
}

pub fn unicycle_sweep() -> SweepParams {
    SweepParams {
        t_min: 5,
        t_max: 800,
        t_step: 5,
        refine: true,
        parallel: false,
        overshoot: Some(1.5),
    }
}

/// Max minus min over mean.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean
}
