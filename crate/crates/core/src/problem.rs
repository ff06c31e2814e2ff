use crate::cost::CostSpec;
use crate::dynamics::{check_len, Model, StateVec};
use crate::error::{Error, Result};

/// Model, cost and initial state of one regulation task.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub cost: CostSpec,
    pub x0: StateVec,
}

impl Problem {
    pub fn new(model: Model, cost: CostSpec, x0: StateVec) -> Result<Self> {
        check_len("initial state", model.state_dim(), x0.len())?;
        check_len("goal", model.state_dim(), cost.state_dim())?;
        check_len("control weight", model.control_dim(), cost.control_dim())?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0", "must be finite"));
        }
        Ok(Problem { model, cost, x0 })
    }

    /// Same dynamics and weights, started from `x0`.
    pub fn from_state(&self, x0: StateVec) -> Result<Self> {
        Self::new(self.model, self.cost.clone(), x0)
    }
}
