//! Batch front end for the `freehorizon` solver: scenario files in, CSV and
//! JSON artifacts out.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{parse_config, ScenarioConfig};
pub use error::CliError;
pub use run::{run_scenario, Command, RunManifest};
