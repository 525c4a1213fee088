//! Synthetic current profiles: a signed pulse train superimposed on a
//! band-limited pseudo-random component and a constant offset, clipped to
//! the amplitude cap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cycle::{DriveCycle, DEFAULT_MAX_CURRENT};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Alternating pulses: even periods discharge at `discharge_a`, odd periods
/// charge at `charge_a`, each active for `duty · period_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseSpec {
    pub period_s: f64,
    pub duty: f64,
    pub discharge_a: f64,
    pub charge_a: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            period_s: 120.0,
            duty: 0.5,
            discharge_a: 3.0,
            charge_a: 2.0,
        }
    }
}

/// Random levels drawn uniformly in `[-amplitude_a, amplitude_a]`, held for
/// `hold_s` and passed through a first-order low-pass with time constant
/// `smoothing_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSpec {
    pub amplitude_a: f64,
    pub hold_s: f64,
    pub smoothing_s: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            amplitude_a: 1.5,
            hold_s: 10.0,
            smoothing_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSpec {
    pub duration_s: f64,
    pub dt_s: f64,
    pub amplitude_cap_a: f64,
    pub ambient_k: f64,
    /// Constant current added everywhere; negative values drain the cell.
    pub offset_a: f64,
    pub pulse: PulseSpec,
    pub random: RandomSpec,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            duration_s: 1800.0,
            dt_s: 1.0,
            amplitude_cap_a: DEFAULT_MAX_CURRENT,
            ambient_k: 298.15,
            offset_a: -0.5,
            pulse: PulseSpec::default(),
            random: RandomSpec::default(),
        }
    }
}

impl ProfileSpec {
    /// Charge of one pulse [A·s] (the larger of the two pulse amplitudes).
    pub fn pulse_quantum(&self) -> f64 {
        self.pulse.discharge_a.abs().max(self.pulse.charge_a.abs())
            * self.pulse.duty
            * self.pulse.period_s
    }

    fn validate(&self) -> Result<usize> {
        let positive = [
            ("duration_s", self.duration_s),
            ("dt_s", self.dt_s),
            ("amplitude_cap_a", self.amplitude_cap_a),
            ("ambient_k", self.ambient_k),
            ("pulse.period_s", self.pulse.period_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("profile.{name}"), format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pulse.duty) {
            return Err(Error::invalid("profile.pulse.duty", "must lie in [0, 1]"));
        }
        if self.random.amplitude_a < 0.0 || self.random.hold_s < 0.0 || self.random.smoothing_s < 0.0
        {
            return Err(Error::invalid("profile.random", "entries must be non-negative"));
        }
        let ratio = self.duration_s / self.dt_s;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(
                "profile.duration_s",
                format!("{} s is not a multiple of dt = {} s", self.duration_s, self.dt_s),
            ));
        }
        Ok(steps as usize)
    }

    fn pulse_at(&self, t: f64) -> f64 {
        let p = &self.pulse;
        let period = (t / p.period_s).floor();
        let phase = t - period * p.period_s;
        if phase >= p.duty * p.period_s {
            0.0
        } else if period as i64 % 2 == 0 {
            -p.discharge_a
        } else {
            p.charge_a
        }
    }
}

/// Generates `duration_s / dt_s` samples starting at `t = 0`.
pub fn synth_profile(spec: &ProfileSpec, seed: u64) -> Result<DriveCycle> {
    synth_segment(spec, seed, 0)
}

/// Concatenates one synthetic segment per spec, each with its own ambient
/// temperature and random stream, on a continuous time axis.
pub fn synth_composite(segments: &[ProfileSpec], seed: u64) -> Result<DriveCycle> {
    let parts = segments
        .iter()
        .enumerate()
        .map(|(i, spec)| synth_segment(spec, seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    DriveCycle::concat(&parts)
}

/// The four-ambient composite used for synthetic identification: segments
/// at 313, 298, 283 and 303 K, `segment_s` seconds each, differing in
/// pulse shape so that each covers a different excitation band.
pub fn four_condition_segments(segment_s: f64) -> Vec<ProfileSpec> {
    let shapes = [
        (313.0, 60.0, 4.0, 3.5, 2.0),
        (298.0, 120.0, 4.0, 3.5, 2.0),
        (283.0, 240.0, 4.0, 3.5, 2.0),
        (303.0, 90.0, 4.0, 3.5, 2.0),
    ];
    shapes
        .iter()
        .map(|&(ambient_k, period_s, discharge_a, charge_a, amplitude_a)| ProfileSpec {
            duration_s: segment_s,
            ambient_k,
            pulse: PulseSpec {
                period_s,
                duty: 0.9,
                discharge_a,
                charge_a,
            },
            random: RandomSpec {
                amplitude_a,
                ..RandomSpec::default()
            },
            ..ProfileSpec::default()
        })
        .collect()
}

fn synth_segment(spec: &ProfileSpec, seed: u64, segment: u64) -> Result<DriveCycle> {
    let steps = spec.validate()?;
    let mut rng = rng::stream(seed, Domain::Profile, segment, 0);
    let r = &spec.random;
    let hold_steps = ((r.hold_s / spec.dt_s).round() as usize).max(1);
    let smoothing = if r.smoothing_s > 0.0 {
        1.0 - (-spec.dt_s / r.smoothing_s).exp()
    } else {
        1.0
    };
    let cap = spec.amplitude_cap_a;
    let mut level = 0.0;
    let mut filtered = 0.0;
    let currents: Vec<f64> = (0..steps)
        .map(|k| {
            let t = k as f64 * spec.dt_s;
            if r.amplitude_a > 0.0 {
                if k % hold_steps == 0 {
                    level = rng.random_range(-r.amplitude_a..=r.amplitude_a);
                }
                filtered += smoothing * (level - filtered);
            }
            (spec.pulse_at(t) + spec.offset_a + filtered).clamp(-cap, cap)
        })
        .collect();
    DriveCycle::from_currents(&currents, spec.dt_s, spec.ambient_k, cap)
}
