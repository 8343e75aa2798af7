//! Pseudo-spectral simulator for chemotaxis-driven fertilization models on
//! the periodic torus, with the diagnostics and verification harness used to
//! check it.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fluid;
pub mod integrator;
pub mod model;
pub mod output;
pub mod presets;
pub mod spectral;
pub mod verification;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{Error, Result};
pub use integrator::{run, SimHistory};
pub use model::{ModelParams, State, Variant};
pub use spectral::{Grid, ScalarField, VectorField};
