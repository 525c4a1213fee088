//! Data misfit and the data-misfit controller (DMC) for choosing the
//! tempering increments `α_ℓ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Φ = ½ (Y_obs − Y)ᵀ R⁻¹ (Y_obs − Y)` for diagonal `R`.
pub fn misfit(y_obs: &[f64], y: &[f64], r_diag: &[f64]) -> Result<f64> {
    if y_obs.len() != y.len() || y.len() != r_diag.len() {
        return Err(Error::LengthMismatch(format!(
            "misfit over {}, {} and {} entries",
            y_obs.len(),
            y.len(),
            r_diag.len()
        )));
    }
    let mut acc = 0.0;
    for ((o, p), r) in y_obs.iter().zip(y).zip(r_diag) {
        if !(*r > 0.0) {
            return Err(Error::Solver("singular noise covariance".into()));
        }
        acc += (o - p) * (o - p) / r;
    }
    Ok(0.5 * acc)
}

/// Form of the variance term in the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmcVariance {
    /// `N / (2σ²_Φ)`.
    #[default]
    Linear,
    /// `√(N / (2σ²_Φ))`.
    Sqrt,
}

/// What `N` counts in the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmcDimension {
    /// Number of sample instants `H`.
    #[default]
    Steps,
    /// Total stacked output dimension `2H`.
    Outputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DmcConfig {
    pub variance: DmcVariance,
    pub dimension: DmcDimension,
}

/// Tempering history; `t` is the cumulative sum of the increments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemperState {
    alphas: Vec<f64>,
    t: f64,
}

impl TemperState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn is_complete(&self) -> bool {
        self.t >= 1.0
    }

    /// Starts from a partially tempered state (used in tests).
    pub fn at(t: f64) -> Self {
        Self {
            alphas: Vec::new(),
            t,
        }
    }
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Picks the next increment
/// `α = min(max(N/(2Φ̄), N/(2σ²_Φ)), 1 − t)` and advances `temper`.
///
/// Returns `None` once `t` has reached one. A zero mean or variance makes
/// the respective term infinite, so the increment becomes `1 − t`. The last
/// increment sets `t` to exactly one.
pub fn dmc_alpha(
    misfits: &[f64],
    steps: usize,
    temper: &mut TemperState,
    config: DmcConfig,
) -> Result<Option<f64>> {
    if temper.is_complete() {
        return Ok(None);
    }
    if misfits.len() < 2 {
        return Err(Error::invalid("misfits", "need at least two members"));
    }
    if misfits.iter().any(|m| !m.is_finite()) {
        return Err(Error::Solver("non-finite misfit".into()));
    }
    let n = match config.dimension {
        DmcDimension::Steps => steps,
        DmcDimension::Outputs => 2 * steps,
    } as f64;
    let (mean, var) = mean_and_variance(misfits);
    let mean_term = if mean > 0.0 { n / (2.0 * mean) } else { f64::INFINITY };
    let var_term = if var > 0.0 {
        let v = n / (2.0 * var);
        match config.variance {
            DmcVariance::Linear => v,
            DmcVariance::Sqrt => v.sqrt(),
        }
    } else {
        f64::INFINITY
    };
    let remaining = 1.0 - temper.t;
    let proposal = mean_term.max(var_term);
    let alpha = if proposal >= remaining {
        temper.t = 1.0;
        remaining
    } else {
        temper.t += proposal;
        proposal
    };
    temper.alphas.push(alpha);
    Ok(Some(alpha))
}
