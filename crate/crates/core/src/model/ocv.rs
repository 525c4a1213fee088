//! Open-circuit voltage curves over a normalized argument `s`.
//!
//! The argument is SoC for the Thevenin model and the surface-capacitor
//! voltage `V_s` for the NDC model. Both representations extrapolate
//! linearly outside `[0, 1]` so that ensemble members drifting out of range
//! still produce finite outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of interior points used to verify polynomial monotonicity.
const MONOTONE_GRID: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcvSpec {
    /// `h(s) = c[0] + c[1] s + c[2] s^2 + ...`
    Polynomial { coefficients: Vec<f64> },
    /// Breakpoints `(s_j, V_j)` with linear interpolation.
    Table { s: Vec<f64>, voltage: Vec<f64> },
}

/// Terminal-voltage limits of the cell. OCV endpoints must lie inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for VoltageWindow {
    fn default() -> Self {
        Self {
            v_min: 2.5,
            v_max: 4.2,
        }
    }
}

/// A validated, strictly increasing OCV curve.
#[derive(Debug, Clone, PartialEq)]
pub struct OcvCurve {
    repr: Repr,
    spec: OcvSpec,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Polynomial {
        coefficients: Vec<f64>,
        slope_lo: f64,
        slope_hi: f64,
    },
    Table {
        s: Vec<f64>,
        voltage: Vec<f64>,
    },
}

impl OcvCurve {
    pub fn new(spec: OcvSpec, window: VoltageWindow) -> Result<Self> {
        let repr = match &spec {
            OcvSpec::Polynomial { coefficients } => {
                if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid(
                        "OCV polynomial",
                        "coefficients must be non-empty and finite",
                    ));
                }
                let coefficients = coefficients.clone();
                // Strictly increasing on [0, 1]: positive derivative on a fine
                // grid and increasing sampled values.
                let mut prev = horner(&coefficients, 0.0);
                for k in 1..=MONOTONE_GRID {
                    let s = k as f64 / MONOTONE_GRID as f64;
                    let v = horner(&coefficients, s);
                    if v <= prev || poly_derivative(&coefficients, s) < 0.0 {
                        return Err(Error::invalid(
                            "OCV polynomial",
                            format!("not strictly increasing on [0, 1] near s = {s:.4}"),
                        ));
                    }
                    prev = v;
                }
                Repr::Polynomial {
                    slope_lo: poly_derivative(&coefficients, 0.0),
                    slope_hi: poly_derivative(&coefficients, 1.0),
                    coefficients,
                }
            }
            OcvSpec::Table { s, voltage } => {
                if s.len() != voltage.len() {
                    return Err(Error::invalid(
                        "OCV table",
                        format!("{} breakpoints but {} voltages", s.len(), voltage.len()),
                    ));
                }
                if s.len() < 2 {
                    return Err(Error::invalid("OCV table", "needs at least two breakpoints"));
                }
                if s.iter().chain(voltage).any(|x| !x.is_finite()) {
                    return Err(Error::invalid("OCV table", "non-finite entry"));
                }
                for j in 1..s.len() {
                    if s[j] <= s[j - 1] {
                        return Err(Error::invalid(
                            "OCV table",
                            format!("breakpoint {j} is not strictly after breakpoint {}", j - 1),
                        ));
                    }
                    if voltage[j] <= voltage[j - 1] {
                        return Err(Error::invalid(
                            "OCV table",
                            format!("voltage at breakpoint {j} is not strictly increasing"),
                        ));
                    }
                }
                Repr::Table {
                    s: s.clone(),
                    voltage: voltage.clone(),
                }
            }
        };
        let curve = Self { repr, spec };
        for end in [0.0, 1.0] {
            let v = curve.eval(end);
            if v < window.v_min || v > window.v_max {
                return Err(Error::invalid(
                    "OCV curve",
                    format!(
                        "h({end}) = {v} lies outside the voltage window [{}, {}]",
                        window.v_min, window.v_max
                    ),
                ));
            }
        }
        Ok(curve)
    }

    /// The linear fixture `3.0 + 1.2 s` used throughout the tests.
    pub fn linear_fixture() -> Self {
        Self::new(
            OcvSpec::Polynomial {
                coefficients: vec![3.0, 1.2],
            },
            VoltageWindow::default(),
        )
        .expect("fixture curve is valid")
    }

    pub fn spec(&self) -> &OcvSpec {
        &self.spec
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial {
                coefficients,
                slope_lo,
                slope_hi,
            } => {
                if s < 0.0 {
                    coefficients[0] + slope_lo * s
                } else if s > 1.0 {
                    horner(coefficients, 1.0) + slope_hi * (s - 1.0)
                } else {
                    horner(coefficients, s)
                }
            }
            Repr::Table { s: xs, voltage } => {
                let n = xs.len();
                // Segment index j such that xs[j] <= s < xs[j+1], clamped to
                // the outermost segments for extrapolation.
                let j = match xs.partition_point(|&x| x <= s) {
                    0 => 0,
                    p if p >= n => n - 2,
                    p => p - 1,
                };
                let (x0, x1) = (xs[j], xs[j + 1]);
                let (v0, v1) = (voltage[j], voltage[j + 1]);
                v0 + (v1 - v0) * (s - x0) / (x1 - x0)
            }
        }
    }
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * s + ck)
}

fn poly_derivative(c: &[f64], s: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * s + k as f64 * ck)
}
