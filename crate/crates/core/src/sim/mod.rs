//! Forward simulation over drive cycles.

pub mod cycle;
pub mod measure;
pub mod profile;
pub mod rk4;
pub mod simulate;

pub use cycle::{CycleSample, DriveCycle, DEFAULT_MAX_CURRENT};
pub use measure::{add_noise, rmse, stack, unstack, MeasurementSeries, NoiseSpec};
pub use profile::{
    four_condition_segments, synth_composite, synth_profile, ProfileSpec, PulseSpec, RandomSpec,
};
pub use rk4::{rk4_step, Rk4};
pub use simulate::{simulate, simulate_parameters, simulate_stacked, IntegratorSettings, Trajectory};
