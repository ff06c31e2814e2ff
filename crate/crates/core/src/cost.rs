//! Quadratic stage and terminal costs in goal-shifted coordinates, the
//! `max(phi, M)` terminal payoff and geometric discounting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_len, ControlVec, StateVec};
use crate::error::{Error, Result};

/// Weights and goal of a regulation problem.
///
/// Stage cost `c(x, u) = (x - g)' Q (x - g) + u' R u`, terminal cost
/// `phi(x) = (x - g)' Q_T (x - g)`, both weighted by `beta^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    goal: StateVec,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
    beta: f64,
}

/// Second-order expansion of a stage cost about `(x, u)`.
#[derive(Debug, Clone)]
pub struct QuadExpansion {
    pub c_x: DVector<f64>,
    pub c_u: DVector<f64>,
    pub c_xx: DMatrix<f64>,
    pub c_uu: DMatrix<f64>,
    pub c_ux: DMatrix<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TerminalExpansion {
    pub v_x: DVector<f64>,
    pub v_xx: DMatrix<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub transfer: f64,
    pub terminal: f64,
    pub total: f64,
}

/// Level `M >= 0` of the terminal set `{x : phi(x) <= M}`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TerminalSetLevel(f64);

impl TerminalSetLevel {
    pub fn new(level: f64) -> Result<Self> {
        if level >= 0.0 && level.is_finite() {
            Ok(TerminalSetLevel(level))
        } else {
            Err(Error::invalid(
                "M",
                format!("must be finite and >= 0, got {level}"),
            ))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Anything the trajectory optimizer can minimize.
pub trait Objective: Sync {
    fn stage(&self, x: &StateVec, u: &ControlVec, k: usize) -> f64;
    fn terminal(&self, x: &StateVec, horizon: usize) -> f64;
    fn stage_expansion(&self, x: &StateVec, u: &ControlVec, k: usize) -> QuadExpansion;
    fn terminal_expansion(&self, x: &StateVec, horizon: usize) -> TerminalExpansion;

    fn breakdown(&self, states: &[StateVec], controls: &[ControlVec]) -> CostBreakdown {
        let transfer: f64 = controls
            .iter()
            .zip(states)
            .enumerate()
            .map(|(k, (u, x))| self.stage(x, u, k))
            .sum();
        let terminal = self.terminal(states.last().expect("non-empty trajectory"), controls.len());
        CostBreakdown {
            transfer,
            terminal,
            total: transfer + terminal,
        }
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_square(name: &'static str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::invalid(
            name,
            format!("expected {dim}x{dim}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) || !is_symmetric(m) {
        return Err(Error::invalid(name, "must be finite and symmetric"));
    }
    Ok(())
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

impl CostSpec {
    pub fn new(
        goal: StateVec,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        beta: f64,
    ) -> Result<Self> {
        let n = goal.len();
        let p = r.nrows();
        check_square("Q", &q, n)?;
        check_square("R", &r, p)?;
        check_square("Q_T", &q_terminal, n)?;
        if goal.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("goal", "must be finite"));
        }
        if min_eigenvalue(&q) < -1e-12 {
            return Err(Error::invalid("Q", "must be positive semidefinite"));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::invalid("R", "must be positive definite"));
        }
        if q_terminal.clone().cholesky().is_none() {
            return Err(Error::invalid("Q_T", "must be positive definite"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("must lie in (0, 1], got {beta}"),
            ));
        }
        Ok(CostSpec {
            goal,
            q,
            r,
            q_terminal,
            beta,
        })
    }

    /// Diagonal weights, undiscounted.
    pub fn diagonal(goal: StateVec, q: &[f64], r: &[f64], q_terminal: &[f64]) -> Result<Self> {
        Self::new(
            goal,
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
            DMatrix::from_diagonal(&DVector::from_column_slice(q_terminal)),
            1.0,
        )
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(
            self.goal.clone(),
            self.q.clone(),
            self.r.clone(),
            self.q_terminal.clone(),
            beta,
        )
    }

    pub fn goal(&self) -> &StateVec {
        &self.goal
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn q_terminal(&self) -> &DMatrix<f64> {
        &self.q_terminal
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn state_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn discount(&self, k: usize) -> f64 {
        if self.beta == 1.0 {
            1.0
        } else {
            self.beta.powi(k.min(i32::MAX as usize) as i32)
        }
    }

    /// Undiscounted `c(x, u)`.
    pub fn stage_cost(&self, x: &StateVec, u: &ControlVec) -> f64 {
        let e = x - &self.goal;
        quad_form(&self.q, &e) + quad_form(&self.r, u)
    }

    /// Undiscounted `phi(x)`.
    pub fn terminal_cost(&self, x: &StateVec) -> f64 {
        quad_form(&self.q_terminal, &(x - &self.goal))
    }

    pub fn effective_terminal(&self, x: &StateVec, level: TerminalSetLevel) -> f64 {
        self.terminal_cost(x).max(level.value())
    }

    pub fn in_terminal_set(&self, x: &StateVec, level: TerminalSetLevel) -> bool {
        self.terminal_cost(x) <= level.value()
    }

    /// Discounted expansion of the stage cost at step `k` of a horizon-`horizon` problem.
    pub fn quadratize(
        &self,
        x: &StateVec,
        u: &ControlVec,
        k: usize,
        horizon: usize,
    ) -> Result<QuadExpansion> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("control", self.control_dim(), u.len())?;
        if k > horizon {
            return Err(Error::invalid(
                "k",
                format!("step {k} beyond horizon {horizon}"),
            ));
        }
        Ok(self.stage_expansion(x, u, k))
    }

    /// Transfer plus terminal cost of a trajectory. With `use_effective_terminal`
    /// the terminal payoff is `max(phi(x_T), M)`.
    pub fn trajectory_cost(
        &self,
        states: &[StateVec],
        controls: &[ControlVec],
        level: TerminalSetLevel,
        use_effective_terminal: bool,
    ) -> Result<CostBreakdown> {
        if states.len() != controls.len() + 1 {
            return Err(Error::DimensionMismatch {
                what: "trajectory states (controls + 1)",
                expected: controls.len() + 1,
                actual: states.len(),
            });
        }
        let mut breakdown = self.breakdown(states, controls);
        if use_effective_terminal {
            let horizon = controls.len();
            breakdown.terminal =
                self.discount(horizon) * self.effective_terminal(&states[horizon], level);
            breakdown.total = breakdown.transfer + breakdown.terminal;
        }
        Ok(breakdown)
    }
}

impl Objective for CostSpec {
    fn stage(&self, x: &StateVec, u: &ControlVec, k: usize) -> f64 {
        self.discount(k) * self.stage_cost(x, u)
    }

    fn terminal(&self, x: &StateVec, horizon: usize) -> f64 {
        self.discount(horizon) * self.terminal_cost(x)
    }

    fn stage_expansion(&self, x: &StateVec, u: &ControlVec, k: usize) -> QuadExpansion {
        let w = self.discount(k);
        let e = x - &self.goal;
        let qe = &self.q * &e;
        let ru = &self.r * u;
        QuadExpansion {
            value: w * (e.dot(&qe) + u.dot(&ru)),
            c_x: qe * (2.0 * w),
            c_u: ru * (2.0 * w),
            c_xx: &self.q * (2.0 * w),
            c_uu: &self.r * (2.0 * w),
            c_ux: DMatrix::zeros(u.len(), x.len()),
        }
    }

    fn terminal_expansion(&self, x: &StateVec, horizon: usize) -> TerminalExpansion {
        let w = self.discount(horizon);
        let e = x - &self.goal;
        let qe = &self.q_terminal * &e;
        TerminalExpansion {
            value: w * e.dot(&qe),
            v_x: qe * (2.0 * w),
            v_xx: &self.q_terminal * (2.0 * w),
        }
    }
}

/// The same stage costs with the terminal term removed; used for long-horizon
/// reference solves.
#[derive(Debug, Clone, Copy)]
pub struct TerminalFree<'a>(pub &'a CostSpec);

impl Objective for TerminalFree<'_> {
    fn stage(&self, x: &StateVec, u: &ControlVec, k: usize) -> f64 {
        self.0.stage(x, u, k)
    }

    fn terminal(&self, _x: &StateVec, _horizon: usize) -> f64 {
        0.0
    }

    fn stage_expansion(&self, x: &StateVec, u: &ControlVec, k: usize) -> QuadExpansion {
        self.0.stage_expansion(x, u, k)
    }

    fn terminal_expansion(&self, x: &StateVec, _horizon: usize) -> TerminalExpansion {
        let n = x.len();
        TerminalExpansion {
            v_x: DVector::zeros(n),
            v_xx: DMatrix::zeros(n, n),
            value: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};

    fn car_cost(beta: f64) -> CostSpec {
        CostSpec::diagonal(
            dvector![1.0, 4.0, FRAC_PI_2, 0.0],
            &[0.1, 0.1, 0.1, 0.1],
            &[0.01, 0.01],
            &[50.0, 50.0, 50.0, 50.0],
        )
        .unwrap()
        .with_beta(beta)
        .unwrap()
    }

    fn level(m: f64) -> TerminalSetLevel {
        TerminalSetLevel::new(m).unwrap()
    }

    #[test]
    fn validation() {
        let g = dvector![0.0, 0.0];
        assert!(CostSpec::diagonal(g.clone(), &[1.0, 0.0], &[1.0], &[1.0, 1.0]).is_ok());
        assert!(CostSpec::diagonal(g.clone(), &[1.0, -1.0], &[1.0], &[1.0, 1.0]).is_err());
        assert!(CostSpec::diagonal(g.clone(), &[1.0, 1.0], &[0.0], &[1.0, 1.0]).is_err());
        assert!(CostSpec::diagonal(g.clone(), &[1.0, 1.0], &[1.0], &[1.0, 0.0]).is_err());
        assert!(CostSpec::diagonal(g.clone(), &[1.0], &[1.0], &[1.0, 1.0]).is_err());
        let spec = CostSpec::diagonal(g, &[1.0, 1.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert!(spec.with_beta(0.0).is_err());
        assert!(spec.with_beta(1.5).is_err());
        assert!(spec.with_beta(0.3).is_ok());
        assert!(TerminalSetLevel::new(-1.0).is_err());
    }

    #[test]
    fn stage_cost_examples() {
        let spec =
            CostSpec::diagonal(dvector![0.0, 0.0], &[1.0, 1.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(spec.stage_cost(&dvector![1.0, 2.0], &dvector![3.0]), 14.0);
        let car = car_cost(1.0);
        assert_eq!(car.stage_cost(car.goal(), &dvector![0.0, 0.0]), 0.0);
    }

    #[test]
    fn terminal_cost_examples() {
        let goal = dvector![1.0, 4.0, FRAC_PI_2, 0.0];
        let spec =
            CostSpec::diagonal(goal.clone(), &[0.1; 4], &[0.01; 2], &[1.0, 1.0, 0.1, 0.1]).unwrap();
        assert_eq!(spec.terminal_cost(&goal), 0.0);
        let x = &goal + dvector![1.0, 4.0, FRAC_PI_6, 0.0];
        let expected = 1.0 + 16.0 + 0.1 * FRAC_PI_6 * FRAC_PI_6;
        assert!((spec.terminal_cost(&x) - expected).abs() < 1e-12);
        assert!((expected - 17.0274).abs() < 1e-4);
    }

    #[test]
    fn effective_terminal_examples() {
        let spec = CostSpec::diagonal(dvector![0.0], &[1.0], &[1.0], &[1.0]).unwrap();
        let x_small = dvector![0.02f64.sqrt()];
        let x_large = dvector![0.30f64.sqrt()];
        assert!((spec.effective_terminal(&x_small, level(0.05)) - 0.05).abs() < 1e-15);
        assert!((spec.effective_terminal(&x_large, level(0.05)) - 0.30).abs() < 1e-15);
        assert_eq!(
            spec.effective_terminal(&x_large, level(0.0)),
            spec.terminal_cost(&x_large)
        );
    }

    #[test]
    fn quadratize_at_goal_is_stationary_and_k_independent_when_undiscounted() {
        let spec = car_cost(1.0);
        let u0 = dvector![0.0, 0.0];
        let e = spec.quadratize(spec.goal(), &u0, 3, 10).unwrap();
        assert_eq!(e.c_x.amax(), 0.0);
        assert_eq!(e.c_u.amax(), 0.0);

        let x = dvector![0.3, 1.0, 0.2, -0.5];
        let u = dvector![0.7, -0.1];
        let a = spec.quadratize(&x, &u, 0, 10).unwrap();
        let b = spec.quadratize(&x, &u, 9, 10).unwrap();
        assert_eq!(a.c_x, b.c_x);
        assert_eq!(a.c_uu, b.c_uu);
        assert!(spec.quadratize(&x, &u, 11, 10).is_err());
    }

    #[test]
    fn quadratize_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let spec = car_cost(0.97);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for _ in 0..50 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let k = rng.gen_range(0..20);
            let e = spec.quadratize(&x, &u, k, 20).unwrap();
            let f = |x: &DVector<f64>, u: &DVector<f64>| spec.stage(x, u, k);
            let h = 1e-4;
            for i in 0..4 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let g = (f(&xp, &u) - f(&xm, &u)) / (2.0 * h);
                assert!(rel(g, e.c_x[i]) < 1e-6, "c_x[{i}]");
                // Central differences are exact on quadratics, so a wide
                // stencil keeps round-off out of the nested Hessian estimate.
                let wide = 1e-2;
                for j in 0..4 {
                    let gd = |xx: &DVector<f64>| {
                        let (mut a, mut b) = (xx.clone(), xx.clone());
                        a[j] += wide;
                        b[j] -= wide;
                        (f(&a, &u) - f(&b, &u)) / (2.0 * wide)
                    };
                    let (mut xpw, mut xmw) = (x.clone(), x.clone());
                    xpw[i] += wide;
                    xmw[i] -= wide;
                    let hess = (gd(&xpw) - gd(&xmw)) / (2.0 * wide);
                    assert!(rel(hess, e.c_xx[(i, j)]) < 1e-6, "c_xx[{i},{j}]");
                }
            }
            for i in 0..2 {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[i] += h;
                um[i] -= h;
                let g = (f(&x, &up) - f(&x, &um)) / (2.0 * h);
                assert!(rel(g, e.c_u[i]) < 1e-6, "c_u[{i}]");
                let hess = (spec.stage_expansion(&x, &up, k).c_u[i]
                    - spec.stage_expansion(&x, &um, k).c_u[i])
                    / (2.0 * h);
                assert!(rel(hess, e.c_uu[(i, i)]) < 1e-6);
                for j in 0..4 {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    let cross = (spec.stage_expansion(&xp, &u, k).c_u[i]
                        - spec.stage_expansion(&xm, &u, k).c_u[i])
                        / (2.0 * h);
                    assert!((cross - e.c_ux[(i, j)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn trajectory_cost_examples() {
        let spec = car_cost(1.0);
        let x0 = spec.goal().clone();
        let b = spec
            .trajectory_cost(&[x0.clone()], &[], level(0.05), true)
            .unwrap();
        assert!((b.total - 0.05).abs() < 1e-15);

        let states = vec![
            dvector![0.0, 0.0, FRAC_PI_3, 0.0],
            dvector![0.1, 0.2, FRAC_PI_3, 0.5],
            dvector![0.3, 0.5, 1.2, 0.6],
        ];
        let controls = vec![dvector![1.0, 0.1], dvector![-0.5, 0.2]];
        let b = spec
            .trajectory_cost(&states, &controls, level(0.05), false)
            .unwrap();
        let expected = spec.stage_cost(&states[0], &controls[0])
            + spec.stage_cost(&states[1], &controls[1])
            + spec.terminal_cost(&states[2]);
        assert_eq!(b.total, expected);

        assert!(spec
            .trajectory_cost(&states[..2], &controls, level(0.05), false)
            .is_err());
    }

    #[test]
    fn discount_telescopes_over_concatenation() {
        let spec = car_cost(0.9);
        let states: Vec<_> = (0..9)
            .map(|k| dvector![k as f64 * 0.1, 1.0, 0.2, -0.3])
            .collect();
        let controls: Vec<_> = (0..8).map(|k| dvector![0.5, k as f64 * 0.05]).collect();
        let m = level(0.05);
        let full = spec.trajectory_cost(&states, &controls, m, true).unwrap();
        let head_len = 3;
        let head_transfer: f64 = (0..head_len)
            .map(|k| spec.stage(&states[k], &controls[k], k))
            .sum();
        let tail = spec
            .trajectory_cost(&states[head_len..], &controls[head_len..], m, true)
            .unwrap();
        let recombined = head_transfer + spec.discount(head_len) * tail.total;
        assert!((full.total - recombined).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn stage_cost_positive_away_from_minimum(
            dx in proptest::collection::vec(-5.0f64..5.0, 4),
            u in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let spec = car_cost(1.0);
            let x = spec.goal() + DVector::from_vec(dx.clone());
            let u = DVector::from_vec(u);
            let c = spec.stage_cost(&x, &u);
            if dx.iter().chain(u.iter()).any(|v| *v != 0.0) {
                prop_assert!(c > 0.0);
            } else {
                prop_assert_eq!(c, 0.0);
            }
        }

        #[test]
        fn terminal_sets_are_nested(
            dx in proptest::collection::vec(-1.0f64..1.0, 4),
            m1 in 0.0f64..10.0,
            extra in 0.0f64..10.0,
        ) {
            let spec = car_cost(1.0);
            let x = spec.goal() + DVector::from_vec(dx);
            let phi = spec.terminal_cost(&x);
            prop_assert_eq!(spec.in_terminal_set(&x, level(m1)), phi <= m1);
            if spec.in_terminal_set(&x, level(m1)) {
                prop_assert!(spec.in_terminal_set(&x, level(m1 + extra)));
            }
        }

        #[test]
        fn effective_terminal_never_lowers_cost(
            dx in proptest::collection::vec(-0.2f64..0.2, 4),
            m in 0.0f64..1.0,
        ) {
            let spec = car_cost(1.0);
            let states = vec![spec.goal().clone(), spec.goal() + DVector::from_vec(dx)];
            let controls = vec![dvector![0.1, 0.0]];
            let on = spec.trajectory_cost(&states, &controls, level(m), true).unwrap();
            let off = spec.trajectory_cost(&states, &controls, level(m), false).unwrap();
            prop_assert!(on.total >= off.total);
            prop_assert_eq!(on.total == off.total, spec.terminal_cost(&states[1]) >= m);
        }
    }
}
