//! Ensemble Kalman inversion with adaptive likelihood tempering.

pub mod diagnostics;
pub mod driver;
pub mod ensemble;
pub mod prior;
pub mod tempering;
pub mod update;

pub use diagnostics::{BoxplotStats, IterationRecord};
pub use driver::{
    run_identification, EnkiSettings, Identification, IdentificationProblem, MisfitSource,
    Positivity,
};
pub use ensemble::{ensemble_stats, quarantine_member, Ensemble, EnsembleStats, MemberHealth};
pub use prior::{draw_prior_ensemble, PriorSpec};
pub use tempering::{dmc_alpha, misfit, DmcConfig, DmcDimension, DmcVariance, TemperState};
pub use update::{enki_update, single_shot_update, GaussianMoments};
