use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InputSample;

/// Relative tolerance on sample spacing.
pub const SPACING_RTOL: f64 = 1e-9;
/// Default current limit [A].
pub const DEFAULT_MAX_CURRENT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSample {
    pub time: f64,
    pub current: f64,
    pub ambient: f64,
}

impl CycleSample {
    pub fn input(&self) -> InputSample {
        InputSample::new(self.current, self.ambient)
    }
}

/// Uniformly sampled input sequence `u(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    samples: Vec<CycleSample>,
    dt: f64,
}

impl DriveCycle {
    pub fn new(samples: Vec<CycleSample>, max_current: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("drive cycle", "no samples"));
        }
        for (k, s) in samples.iter().enumerate() {
            if !(s.time.is_finite() && s.current.is_finite() && s.ambient.is_finite()) {
                return Err(Error::invalid("drive cycle", format!("non-finite value at sample {k}")));
            }
            if s.current.abs() > max_current {
                return Err(Error::invalid(
                    "drive cycle",
                    format!(
                        "|I| = {} exceeds the {max_current} A limit at sample {k}",
                        s.current.abs()
                    ),
                ));
            }
            if !(s.ambient > 0.0) {
                return Err(Error::invalid(
                    "drive cycle",
                    format!("ambient temperature must be positive kelvin at sample {k}"),
                ));
            }
        }
        let dt = if samples.len() > 1 {
            samples[1].time - samples[0].time
        } else {
            1.0
        };
        if let Some(k) = spacing_violation(samples.iter().map(|s| s.time)) {
            return Err(Error::invalid(
                "drive cycle",
                format!("non-uniform spacing at sample {k}"),
            ));
        }
        Ok(Self { samples, dt })
    }

    /// Builds a cycle with a single sample spacing and ambient temperature.
    pub fn from_currents(currents: &[f64], dt: f64, ambient: f64, max_current: f64) -> Result<Self> {
        let samples = currents
            .iter()
            .enumerate()
            .map(|(k, &i)| CycleSample {
                time: k as f64 * dt,
                current: i,
                ambient,
            })
            .collect();
        Self::new(samples, max_current)
    }

    /// Joins cycles end to end on a continuous time axis. All parts must
    /// share the same spacing.
    pub fn concat(parts: &[DriveCycle]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("drive cycle", "nothing to concatenate"))?;
        let dt = first.dt;
        let mut samples = Vec::with_capacity(parts.iter().map(DriveCycle::len).sum());
        for (p, part) in parts.iter().enumerate() {
            if part.len() > 1 && ((part.dt - dt).abs() > SPACING_RTOL * dt) {
                return Err(Error::invalid(
                    "drive cycle",
                    format!("segment {p} has spacing {} but {dt} is required", part.dt),
                ));
            }
            for s in &part.samples {
                let time = samples.len() as f64 * dt;
                samples.push(CycleSample { time, ..*s });
            }
        }
        let max = samples.iter().fold(0.0f64, |m, s| m.max(s.current.abs()));
        Self::new(samples, max)
    }

    pub fn samples(&self) -> &[CycleSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn max_abs_current(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.current.abs()))
    }
}

/// Index of the first sample whose spacing breaks uniformity (or ordering).
pub(crate) fn spacing_violation(times: impl Iterator<Item = f64>) -> Option<usize> {
    let mut dt = None;
    let mut prev: Option<f64> = None;
    for (k, t) in times.enumerate() {
        if let Some(p) = prev {
            let step = t - p;
            if !(step > 0.0) {
                return Some(k);
            }
            match dt {
                None => dt = Some(step),
                Some(d) if (step - d).abs() > SPACING_RTOL * d.abs().max(1.0) => return Some(k),
                _ => {}
            }
        }
        prev = Some(t);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> CycleSample {
        CycleSample {
            time: t,
            current: 0.0,
            ambient: 298.0,
        }
    }

    #[test]
    fn uniform_cycle_accepted() {
        let c = DriveCycle::new(vec![sample(0.0), sample(1.0), sample(2.0)], 4.0).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dt(), 1.0);
    }

    #[test]
    fn non_uniform_rejected() {
        let err = DriveCycle::new(vec![sample(0.0), sample(1.0), sample(2.5)], 4.0).unwrap_err();
        assert!(err.to_string().contains("sample 2"), "{err}");
        assert!(DriveCycle::new(vec![sample(0.0), sample(0.0)], 4.0).is_err());
    }

    #[test]
    fn current_limit_enforced() {
        let mut s = sample(0.0);
        s.current = -4.5;
        assert!(DriveCycle::new(vec![s], 4.0).is_err());
    }

    #[test]
    fn concat_renumbers_time() {
        let a = DriveCycle::from_currents(&[1.0, 2.0], 1.0, 313.0, 4.0).unwrap();
        let b = DriveCycle::from_currents(&[-1.0, -2.0, 0.0], 1.0, 283.0, 4.0).unwrap();
        let c = DriveCycle::concat(&[a, b]).unwrap();
        assert_eq!(c.times(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.samples()[2].ambient, 283.0);
        assert_eq!(c.samples()[1].ambient, 313.0);
    }
}
