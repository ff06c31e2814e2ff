//! Continuous-time robot models and their RK4 discretization.
//!
//! Every model exposes the discrete map `x_{k+1} = f(x_k, u_k)` through
//! [`Model::step`], which integrates the continuous dynamics with one classical
//! Runge-Kutta step while holding the control constant over the interval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVec = DVector<f64>;
pub type ControlVec = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    /// Kinematic bicycle: states (px, py, heading, speed), inputs (accel, steering angle).
    CarLike,
    /// States (px, py, heading), inputs (forward speed, turn rate).
    Unicycle,
    /// States (position, velocity), input (acceleration).
    DoubleIntegrator,
}

impl ModelId {
    pub fn state_dim(self) -> usize {
        match self {
            ModelId::CarLike => 4,
            ModelId::Unicycle => 3,
            ModelId::DoubleIntegrator => 2,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            ModelId::CarLike => 2,
            ModelId::Unicycle => 2,
            ModelId::DoubleIntegrator => 1,
        }
    }

    /// Default integration step in seconds.
    pub fn default_dt(self) -> f64 {
        match self {
            ModelId::CarLike => 0.01,
            ModelId::Unicycle => 0.05,
            ModelId::DoubleIntegrator => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Axle distance; only read by the car-like model.
    pub wheelbase: f64,
    pub dt: f64,
}

/// A model together with its parameters. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    id: ModelId,
    params: ModelParams,
}

/// Jacobians of the discrete step about `(x, u)`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x: StateVec,
    pub u: ControlVec,
}

/// `T + 1` states driven by `T` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlVec>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &StateVec {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }
}

impl Model {
    pub fn new(id: ModelId, params: ModelParams) -> Result<Self> {
        if !(params.dt > 0.0 && params.dt.is_finite()) {
            return Err(Error::invalid(
                "dt",
                format!("must be positive, got {}", params.dt),
            ));
        }
        if id == ModelId::CarLike && !(params.wheelbase > 0.0 && params.wheelbase.is_finite()) {
            return Err(Error::invalid(
                "wheelbase",
                format!("must be positive, got {}", params.wheelbase),
            ));
        }
        Ok(Model { id, params })
    }

    pub fn car_like(wheelbase: f64, dt: f64) -> Result<Self> {
        Self::new(ModelId::CarLike, ModelParams { wheelbase, dt })
    }

    pub fn unicycle(dt: f64) -> Result<Self> {
        Self::new(ModelId::Unicycle, ModelParams { wheelbase: 1.0, dt })
    }

    pub fn double_integrator(dt: f64) -> Result<Self> {
        Self::new(
            ModelId::DoubleIntegrator,
            ModelParams { wheelbase: 1.0, dt },
        )
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn state_dim(&self) -> usize {
        self.id.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.id.control_dim()
    }

    pub(crate) fn check_dims(&self, x: &StateVec, u: &ControlVec) -> Result<()> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("control", self.control_dim(), u.len())
    }

    /// Time derivative of the state under control `u`.
    pub fn derivative(&self, x: &StateVec, u: &ControlVec) -> Result<StateVec> {
        self.check_dims(x, u)?;
        Ok(self.rates(x, u))
    }

    fn rates(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        match self.id {
            ModelId::CarLike => {
                let (theta, v) = (x[2], x[3]);
                let (accel, steer) = (u[0], u[1]);
                DVector::from_vec(vec![
                    v * theta.cos(),
                    v * theta.sin(),
                    v * steer.tan() / self.params.wheelbase,
                    accel,
                ])
            }
            ModelId::Unicycle => {
                let theta = x[2];
                let (v, omega) = (u[0], u[1]);
                DVector::from_vec(vec![v * theta.cos(), v * theta.sin(), omega])
            }
            ModelId::DoubleIntegrator => DVector::from_vec(vec![x[1], u[0]]),
        }
    }

    fn rk4(&self, x: &StateVec, u: &ControlVec, dt: f64) -> StateVec {
        let k1 = self.rates(x, u);
        let k2 = self.rates(&(x + &k1 * (0.5 * dt)), u);
        let k3 = self.rates(&(x + &k2 * (0.5 * dt)), u);
        let k4 = self.rates(&(x + &k3 * dt), u);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    /// One RK4 step of length `dt` with `u` held constant.
    pub fn step_with_dt(&self, x: &StateVec, u: &ControlVec, dt: f64) -> Result<StateVec> {
        self.check_dims(x, u)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let next = self.rk4(x, u, dt);
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(Error::NumericOverflow { step: 0 })
        }
    }

    /// The discrete map `f(x, u)` at the model's own time step.
    pub fn step(&self, x: &StateVec, u: &ControlVec) -> Result<StateVec> {
        self.step_with_dt(x, u, self.params.dt)
    }

    /// Central-difference Jacobians of [`Model::step`], perturbing coordinate
    /// `z_i` by `1e-6 * max(1, |z_i|)`.
    pub fn linearize(&self, x: &StateVec, u: &ControlVec) -> Result<Linearization> {
        self.check_dims(x, u)?;
        let (n, p) = (self.state_dim(), self.control_dim());
        let dt = self.params.dt;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, p);

        let mut xp = x.clone();
        let mut xm = x.clone();
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            xm[i] = x[i] - h;
            let width = xp[i] - xm[i];
            let col = (self.rk4(&xp, u, dt) - self.rk4(&xm, u, dt)) / width;
            a.set_column(i, &col);
            xp[i] = x[i];
            xm[i] = x[i];
        }

        let mut up = u.clone();
        let mut um = u.clone();
        for j in 0..p {
            let h = 1e-6 * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            um[j] = u[j] - h;
            let width = up[j] - um[j];
            let col = (self.rk4(x, &up, dt) - self.rk4(x, &um, dt)) / width;
            b.set_column(j, &col);
            up[j] = u[j];
            um[j] = u[j];
        }

        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { step: 0 });
        }
        Ok(Linearization {
            a,
            b,
            x: x.clone(),
            u: u.clone(),
        })
    }

    /// Propagates `x0` through `controls`. Overflow errors carry the index of
    /// the failing step.
    pub fn rollout(&self, x0: &StateVec, controls: &[ControlVec]) -> Result<Trajectory> {
        check_len("state", self.state_dim(), x0.len())?;
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        for (k, u) in controls.iter().enumerate() {
            let next = self.step(&states[k], u).map_err(|e| match e {
                Error::NumericOverflow { .. } => Error::NumericOverflow { step: k },
                other => other,
            })?;
            states.push(next);
        }
        Ok(Trajectory {
            states,
            controls: controls.to_vec(),
        })
    }

    pub fn zero_control(&self) -> ControlVec {
        DVector::zeros(self.control_dim())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
