//! Free-final-time trajectory optimization for infinite-horizon nonlinear
//! optimal control.
//!
//! Build a [`Problem`] from a [`dynamics::Model`] and a [`cost::CostSpec`],
//! then solve fixed horizons with [`ilqr::solve_fhocp`] or search the first
//! horizon whose terminal state enters `{x : phi(x) <= M}` with
//! [`horizon::solve_acocp`].

pub mod cost;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod horizon;
pub mod ilqr;
pub mod problem;

pub use error::{Error, Result};
pub use problem::Problem;
