//! Scenario files: TOML with a few top-level keys and the sections `[model]`,
//! `[cost]`, `[sweep]`, `[solver]` and `[check]`. Unknown keys are errors.

use std::path::PathBuf;

use freehorizon::cost::{CostSpec, TerminalSetLevel};
use freehorizon::diagnostics::dare_fixed_point;
use freehorizon::dynamics::{Model, ModelId, ModelParams};
use freehorizon::horizon::SweepParams;
use freehorizon::ilqr::SolverOptions;
use freehorizon::Problem;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub x0: Vec<f64>,
    pub goal: Vec<f64>,
    /// Terminal set level `M`.
    pub level: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub cost: CostSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub check: CheckSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelId,
    /// Defaults to 1 m; only the car-like model reads it.
    pub wheelbase: Option<f64>,
    /// Defaults to the model's own step.
    pub dt: Option<f64>,
}

/// Weights are given either as diagonals (`q`, `r`, `q_terminal`) or as full
/// matrices (`q_full`, ...). `riccati_terminal` replaces the terminal weight
/// by the infinite-horizon LQR cost-to-go of the model linearized at the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    pub q_terminal: Option<Vec<f64>>,
    pub q_full: Option<Vec<Vec<f64>>>,
    pub r_full: Option<Vec<Vec<f64>>>,
    pub q_terminal_full: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub riccati_terminal: bool,
    #[serde(default = "one")]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub t_min: usize,
    pub t_max: usize,
    pub t_step: usize,
    pub refine: bool,
    pub parallel: bool,
    pub overshoot: Option<f64>,
    /// Horizon of the terminal-cost-free reference solve used by `msweep`.
    pub reference_horizon: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let p = SweepParams::default();
        SweepSection {
            t_min: p.t_min,
            t_max: p.t_max,
            t_step: p.t_step,
            refine: p.refine,
            parallel: p.parallel,
            overshoot: p.overshoot,
            reference_horizon: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_scale: f64,
    pub alphas: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverSection {
            max_iterations: o.max_iterations,
            cost_tolerance: o.cost_tolerance,
            reg_init: o.reg_init,
            reg_min: o.reg_min,
            reg_max: o.reg_max,
            reg_scale: o.reg_scale,
            alphas: o.alphas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub bellman_stride: usize,
    pub bellman_tolerance: f64,
    pub jacobian_samples: usize,
    pub seed: u64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            bellman_stride: 10,
            bellman_tolerance: freehorizon::diagnostics::BELLMAN_TOLERANCE,
            jacobian_samples: 100,
            seed: 7,
        }
    }
}

/// Everything a run needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: Problem,
    pub level: TerminalSetLevel,
    pub sweep: SweepParams,
    pub solver: SolverOptions,
}

/// A validation failure before line numbers are attached.
struct Invalid {
    section: Option<&'static str>,
    key: &'static str,
    message: String,
}

fn invalid(
    section: Option<&'static str>,
    key: &'static str,
    message: impl Into<String>,
) -> Invalid {
    Invalid {
        section,
        key,
        message: message.into(),
    }
}

/// Parses and validates a scenario file, filling in every default so the
/// returned config is a complete description of the run.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let mut config: ScenarioConfig = toml::from_str(text).map_err(|e| syntax_error(text, &e))?;
    config.apply_defaults();
    config.build().map_err(|bad| {
        let key = match bad.section {
            Some(section) => format!("{section}.{}", bad.key),
            None => bad.key.to_string(),
        };
        CliError::Config {
            line: locate(text, bad.section, bad.key),
            key: Some(key),
            message: bad.message,
        }
    })?;
    Ok(config)
}

fn syntax_error(text: &str, err: &toml::de::Error) -> CliError {
    let line = err
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    let message = err.message().to_string();
    let key = ["unknown field `", "missing field `"]
        .iter()
        .find_map(|prefix| message.strip_prefix(prefix))
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    CliError::Config { key, line, message }
}

/// 1-based line on which `key` is assigned inside `section` (top level when
/// `None`), if it is present at all.
fn locate(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = header.split(']').next().map(|s| s.trim().to_string());
            continue;
        }
        let assigned = line
            .split('=')
            .next()
            .map(|lhs| lhs.trim() == key)
            .unwrap_or(false);
        if assigned && line.contains('=') && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

fn matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>, String> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(format!("expected a {dim}x{dim} matrix"));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn weight(
    diagonal: &Option<Vec<f64>>,
    full: &Option<Vec<Vec<f64>>>,
    dim: usize,
    keys: (&'static str, &'static str),
) -> Result<DMatrix<f64>, Invalid> {
    match (diagonal, full) {
        (Some(d), None) if d.len() == dim => {
            Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
        }
        (Some(d), None) => Err(invalid(
            Some("cost"),
            keys.0,
            format!("expected {dim} entries, got {}", d.len()),
        )),
        (None, Some(m)) => matrix(m, dim).map_err(|msg| invalid(Some("cost"), keys.1, msg)),
        (Some(_), Some(_)) => Err(invalid(
            Some("cost"),
            keys.1,
            format!("give either {} or {}, not both", keys.0, keys.1),
        )),
        (None, None) => Err(invalid(Some("cost"), keys.0, "missing weight")),
    }
}

impl ScenarioConfig {
    fn apply_defaults(&mut self) {
        if self.model.wheelbase.is_none() {
            self.model.wheelbase = Some(1.0);
        }
        if self.model.dt.is_none() {
            self.model.dt = Some(self.model.kind.default_dt());
        }
    }

    /// Validated problem, sweep and solver settings.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let mut config = self.clone();
        config.apply_defaults();
        config.build().map_err(|bad| CliError::Config {
            key: Some(match bad.section {
                Some(s) => format!("{s}.{}", bad.key),
                None => bad.key.to_string(),
            }),
            line: None,
            message: bad.message,
        })
    }

    fn build(&self) -> Result<Scenario, Invalid> {
        let params = ModelParams {
            wheelbase: self.model.wheelbase.unwrap_or(1.0),
            dt: self
                .model
                .dt
                .unwrap_or_else(|| self.model.kind.default_dt()),
        };
        let model = Model::new(self.model.kind, params).map_err(|e| match e {
            freehorizon::Error::InvalidParameter {
                name: "wheelbase",
                reason,
            } => invalid(Some("model"), "wheelbase", reason),
            other => invalid(Some("model"), "dt", other.to_string()),
        })?;
        let (n, p) = (model.state_dim(), model.control_dim());
        for (key, v) in [("x0", &self.x0), ("goal", &self.goal)] {
            if v.len() != n {
                return Err(invalid(
                    None,
                    key,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(None, key, "entries must be finite"));
            }
        }
        if !(self.level > 0.0 && self.level.is_finite()) {
            return Err(invalid(
                None,
                "level",
                format!("must be positive, got {}", self.level),
            ));
        }
        if !(self.cost.beta > 0.0 && self.cost.beta <= 1.0) {
            return Err(invalid(
                Some("cost"),
                "beta",
                format!("must lie in (0, 1], got {}", self.cost.beta),
            ));
        }

        let c = &self.cost;
        let q = weight(&c.q, &c.q_full, n, ("q", "q_full"))?;
        let r = weight(&c.r, &c.r_full, p, ("r", "r_full"))?;
        let goal = DVector::from_column_slice(&self.goal);
        let q_terminal = if c.riccati_terminal {
            if c.q_terminal.is_some() || c.q_terminal_full.is_some() {
                return Err(invalid(
                    Some("cost"),
                    "riccati_terminal",
                    "conflicts with an explicit terminal weight",
                ));
            }
            let lin = model
                .linearize(&goal, &model.zero_control())
                .map_err(|e| invalid(Some("cost"), "riccati_terminal", e.to_string()))?;
            dare_fixed_point(&lin.a, &lin.b, &q, &r)
                .map_err(|e| invalid(Some("cost"), "riccati_terminal", e.to_string()))?
                .0
        } else {
            weight(
                &c.q_terminal,
                &c.q_terminal_full,
                n,
                ("q_terminal", "q_terminal_full"),
            )?
        };
        let cost = CostSpec::new(goal, q, r, q_terminal, c.beta).map_err(|e| match e {
            freehorizon::Error::InvalidParameter { name, reason } => {
                let key = match name {
                    "Q" => {
                        if c.q_full.is_some() {
                            "q_full"
                        } else {
                            "q"
                        }
                    }
                    "R" => {
                        if c.r_full.is_some() {
                            "r_full"
                        } else {
                            "r"
                        }
                    }
                    "Q_T" => {
                        if c.q_terminal_full.is_some() {
                            "q_terminal_full"
                        } else {
                            "q_terminal"
                        }
                    }
                    _ => "beta",
                };
                invalid(Some("cost"), key, reason)
            }
            other => invalid(Some("cost"), "q", other.to_string()),
        })?;
        let problem = Problem::new(model, cost, DVector::from_column_slice(&self.x0))
            .map_err(|e| invalid(None, "x0", e.to_string()))?;

        let s = &self.sweep;
        let sweep = SweepParams {
            t_min: s.t_min,
            t_max: s.t_max,
            t_step: s.t_step,
            refine: s.refine,
            parallel: s.parallel,
            overshoot: s.overshoot,
        };
        sweep.validate().map_err(|e| {
            let key = match &e {
                freehorizon::Error::InvalidParameter { name: "t_step", .. } => "t_step",
                freehorizon::Error::InvalidParameter {
                    name: "overshoot", ..
                } => "overshoot",
                _ => "t_min",
            };
            invalid(Some("sweep"), key, e.to_string())
        })?;
        if s.reference_horizon == 0 {
            return Err(invalid(
                Some("sweep"),
                "reference_horizon",
                "must be at least 1",
            ));
        }

        let o = &self.solver;
        let solver = SolverOptions {
            max_iterations: o.max_iterations,
            cost_tolerance: o.cost_tolerance,
            reg_init: o.reg_init,
            reg_min: o.reg_min,
            reg_max: o.reg_max,
            reg_scale: o.reg_scale,
            alphas: o.alphas.clone(),
        };
        solver.validate().map_err(|e| {
            let key = match &e {
                freehorizon::Error::InvalidParameter { name, .. } => match *name {
                    "max_iterations" => "max_iterations",
                    "cost_tolerance" => "cost_tolerance",
                    "reg_scale" => "reg_scale",
                    "alphas" => "alphas",
                    _ => "reg_init",
                },
                _ => "max_iterations",
            };
            invalid(Some("solver"), key, e.to_string())
        })?;

        let k = &self.check;
        if k.bellman_stride == 0 {
            return Err(invalid(
                Some("check"),
                "bellman_stride",
                "must be at least 1",
            ));
        }
        if k.jacobian_samples == 0 {
            return Err(invalid(
                Some("check"),
                "jacobian_samples",
                "must be at least 1",
            ));
        }
        if !(k.bellman_tolerance > 0.0) {
            return Err(invalid(
                Some("check"),
                "bellman_tolerance",
                "must be positive",
            ));
        }

        Ok(Scenario {
            problem,
            level: TerminalSetLevel::new(self.level).expect("level checked above"),
            sweep,
            solver,
        })
    }
}
