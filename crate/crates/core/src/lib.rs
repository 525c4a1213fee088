//! Electro-thermal equivalent-circuit battery models and their
//! identification by ensemble Kalman inversion with adaptive likelihood
//! tempering.
//!
//! - [`model`]: Thevenin and NDC models coupled to a two-node thermal model.
//! - [`sim`]: fixed-step simulation, measurement noise and output stacking.
//! - [`enki`]: the ensemble solver and its identification driver.
//! - [`io`]: CSV time series, TOML run configuration and JSON results.

pub mod enki;
pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use model::{CellModel, FixedConstants, InputSample, ModelKind, ModelState, OutputSample, ParameterVector};
pub use sim::{DriveCycle, IntegratorSettings, MeasurementSeries, NoiseSpec, Trajectory};
