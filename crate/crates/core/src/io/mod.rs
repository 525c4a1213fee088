//! Persistence: CSV time series, TOML run configuration, JSON results.

pub mod config;
pub mod results;
pub mod series;

pub use config::{
    format_parameters, load_config, load_parameters, parse_config, parse_parameters, ConfigFile,
    DataKey, RunConfig,
};
pub use results::{
    read_results, relative_errors, write_results, FitRmse, NamedValue, Provenance, RelativeError,
    ResultBundle,
};
pub use series::{
    pair_with_cycle, parse_drive_cycle, read_measurements, write_drive_cycle, write_measurements,
};
