//! Measurement noise, measurement series and output stacking.
//!
//! Stacked vectors are step-major: `[V_1, T_s1, V_2, T_s2, ..]`, so the
//! stacked noise covariance is `diag(σ²_V, σ²_T, σ²_V, σ²_T, ..)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::simulate::Trajectory;
use crate::error::{Error, Result};
use crate::model::OutputSample;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Voltage noise variance [V²].
    pub voltage_var: f64,
    /// Surface-temperature noise variance [K²].
    pub temp_var: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            voltage_var: 1e-4,
            temp_var: 1e-3,
        }
    }
}

impl NoiseSpec {
    pub fn new(voltage_var: f64, temp_var: f64) -> Result<Self> {
        let spec = Self {
            voltage_var,
            temp_var,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero-noise spec for tests; not accepted by [`NoiseSpec::validate`].
    pub fn noiseless() -> Self {
        Self {
            voltage_var: 0.0,
            temp_var: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("voltage_var", self.voltage_var), ("temp_var", self.temp_var)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    format!("noise.{name}"),
                    format!("variance must be positive, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Diagonal of the stacked covariance for `steps` samples.
    pub fn stacked_diagonal(&self, steps: usize) -> Vec<f64> {
        (0..2 * steps)
            .map(|j| if j % 2 == 0 { self.voltage_var } else { self.temp_var })
            .collect()
    }
}

/// Noisy outputs `y_k = [V, T_s]` at the sample instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    pub times: Vec<f64>,
    pub samples: Vec<OutputSample>,
}

impl MeasurementSeries {
    pub fn new(times: Vec<f64>, samples: Vec<OutputSample>) -> Result<Self> {
        if times.len() != samples.len() {
            return Err(Error::LengthMismatch(format!(
                "{} times for {} samples",
                times.len(),
                samples.len()
            )));
        }
        Ok(Self { times, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn noiseless(traj: &Trajectory) -> Self {
        Self {
            times: traj.times().to_vec(),
            samples: traj.outputs().to_vec(),
        }
    }
}

/// Adds independent Gaussian noise to every output channel at every
/// sample. Deterministic for a fixed seed.
pub fn add_noise(traj: &Trajectory, noise: &NoiseSpec, seed: u64) -> MeasurementSeries {
    let mut rng = rng::stream(seed, Domain::MeasurementNoise, 0, 0);
    let (sv, st) = (noise.voltage_var.sqrt(), noise.temp_var.sqrt());
    let samples = traj
        .outputs()
        .iter()
        .map(|y| {
            let zv: f64 = rng.sample(StandardNormal);
            let zt: f64 = rng.sample(StandardNormal);
            OutputSample {
                voltage: y.voltage + sv * zv,
                surf_temp: y.surf_temp + st * zt,
            }
        })
        .collect();
    MeasurementSeries {
        times: traj.times().to_vec(),
        samples,
    }
}

/// Step-major stacked vector of length `2H`.
pub fn stack(series: &MeasurementSeries) -> Vec<f64> {
    series
        .samples
        .iter()
        .flat_map(|y| [y.voltage, y.surf_temp])
        .collect()
}

pub fn unstack(stacked: &[f64], times: &[f64]) -> Result<MeasurementSeries> {
    if stacked.len() != 2 * times.len() {
        return Err(Error::LengthMismatch(format!(
            "stacked vector of length {} for {} sample times",
            stacked.len(),
            times.len()
        )));
    }
    let samples = stacked
        .chunks_exact(2)
        .map(|c| OutputSample {
            voltage: c[0],
            surf_temp: c[1],
        })
        .collect();
    Ok(MeasurementSeries {
        times: times.to_vec(),
        samples,
    })
}

/// Root-mean-square differences `(V, T_s)` between two aligned series.
pub fn rmse(a: &MeasurementSeries, b: &MeasurementSeries) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "cannot compare series of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (sv, st) = a
        .samples
        .iter()
        .zip(&b.samples)
        .fold((0.0, 0.0), |(sv, st), (x, y)| {
            (
                sv + (x.voltage - y.voltage).powi(2),
                st + (x.surf_temp - y.surf_temp).powi(2),
            )
        });
    Ok(((sv / n).sqrt(), (st / n).sqrt()))
}
