//! Electro-thermal equivalent-circuit models.

pub mod ndct;
pub mod ocv;
pub mod params;
pub mod thermal;
pub mod thevenin;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ndct::NdctParams;
pub use ocv::{OcvCurve, OcvSpec, VoltageWindow};
pub use params::{
    ndct_reference, pack, parameter_count, parameter_names, reference_parameters,
    thevenin_reference, unpack, FixedConstants, ParameterVector,
};
pub use thermal::{arrhenius, heat_generation, thermal_derivatives, ThermalParams};
pub use thevenin::{RcPair, TheveninParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "TheveninT", alias = "theveninT")]
    Thevenin,
    #[serde(alias = "NDCT")]
    Ndct,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Thevenin => "thevenin",
            ModelKind::Ndct => "ndct",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thevenin" | "thevenint" => Ok(ModelKind::Thevenin),
            "ndct" => Ok(ModelKind::Ndct),
            other => Err(Error::invalid("model", format!("unknown model `{other}`"))),
        }
    }
}

/// Input `u = [I, T_amb]`; `I < 0` discharges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSample {
    pub current: f64,
    pub ambient: f64,
}

impl InputSample {
    pub fn new(current: f64, ambient: f64) -> Self {
        Self { current, ambient }
    }
}

/// Output `y = [V, T_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    pub voltage: f64,
    pub surf_temp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Thevenin {
        polarization: Vec<f64>,
        soc: f64,
        core_temp: f64,
        surf_temp: f64,
    },
    Ndct {
        bulk: f64,
        surface: f64,
        v1: f64,
        core_temp: f64,
        surf_temp: f64,
    },
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Thevenin { .. } => ModelKind::Thevenin,
            ModelState::Ndct { .. } => ModelKind::Ndct,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ModelState::Thevenin {
                polarization,
                soc,
                core_temp,
                surf_temp,
            } => {
                let mut v = polarization.clone();
                v.extend([*soc, *core_temp, *surf_temp]);
                v
            }
            ModelState::Ndct {
                bulk,
                surface,
                v1,
                core_temp,
                surf_temp,
            } => vec![*bulk, *surface, *v1, *core_temp, *surf_temp],
        }
    }

    pub fn from_flat(kind: ModelKind, x: &[f64]) -> Result<Self> {
        match kind {
            ModelKind::Thevenin => {
                if x.len() < 4 {
                    return Err(Error::LengthMismatch(format!(
                        "thevenin state needs at least 4 entries, got {}",
                        x.len()
                    )));
                }
                let n = x.len() - 3;
                Ok(ModelState::Thevenin {
                    polarization: x[..n].to_vec(),
                    soc: x[n],
                    core_temp: x[n + 1],
                    surf_temp: x[n + 2],
                })
            }
            ModelKind::Ndct => {
                if x.len() != ndct::STATE_DIM {
                    return Err(Error::LengthMismatch(format!(
                        "ndct state needs 5 entries, got {}",
                        x.len()
                    )));
                }
                Ok(ModelState::Ndct {
                    bulk: x[0],
                    surface: x[1],
                    v1: x[2],
                    core_temp: x[3],
                    surf_temp: x[4],
                })
            }
        }
    }

    pub fn core_temp(&self) -> f64 {
        match self {
            ModelState::Thevenin { core_temp, .. } | ModelState::Ndct { core_temp, .. } => {
                *core_temp
            }
        }
    }

    pub fn surf_temp(&self) -> f64 {
        match self {
            ModelState::Thevenin { surf_temp, .. } | ModelState::Ndct { surf_temp, .. } => {
                *surf_temp
            }
        }
    }

    /// The OCV argument (SoC or `V_s`).
    pub fn ocv_argument(&self) -> f64 {
        match self {
            ModelState::Thevenin { soc, .. } => *soc,
            ModelState::Ndct { surface, .. } => *surface,
        }
    }
}

/// A fully parameterized cell model.
#[derive(Debug, Clone, PartialEq)]
pub enum CellModel {
    Thevenin(TheveninParams),
    Ndct(NdctParams),
}

impl CellModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            CellModel::Thevenin(_) => ModelKind::Thevenin,
            CellModel::Ndct(_) => ModelKind::Ndct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellModel::Thevenin(p) => p.validate(),
            CellModel::Ndct(p) => p.validate(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            CellModel::Thevenin(p) => p.state_dim(),
            CellModel::Ndct(_) => ndct::STATE_DIM,
        }
    }

    /// Rest state at a given ambient temperature: fully charged, relaxed,
    /// thermally equilibrated.
    pub fn initial_state(&self, ambient: f64) -> ModelState {
        match self {
            CellModel::Thevenin(p) => ModelState::Thevenin {
                polarization: vec![0.0; p.pairs.len()],
                soc: 1.0,
                core_temp: ambient,
                surf_temp: ambient,
            },
            CellModel::Ndct(_) => ModelState::Ndct {
                bulk: 1.0,
                surface: 1.0,
                v1: 0.0,
                core_temp: ambient,
                surf_temp: ambient,
            },
        }
    }

    /// Index of the OCV argument in the flat state.
    pub(crate) fn ocv_index(&self) -> usize {
        match self {
            CellModel::Thevenin(p) => p.pairs.len(),
            CellModel::Ndct(_) => 1,
        }
    }

    /// Flat-state right-hand side `f(x, u)`.
    #[inline]
    pub fn derivative_into(&self, x: &[f64], u: &InputSample, dx: &mut [f64]) {
        match self {
            CellModel::Thevenin(p) => p.derivative(x, u, dx),
            CellModel::Ndct(p) => p.derivative(x, u, dx),
        }
    }

    /// Flat-state output map `g(x, u)`.
    #[inline]
    pub fn output_from(&self, x: &[f64], u: &InputSample) -> OutputSample {
        match self {
            CellModel::Thevenin(p) => p.output(x, u),
            CellModel::Ndct(p) => p.output(x, u),
        }
    }

    fn check_state(&self, x: &ModelState) -> Result<Vec<f64>> {
        if x.kind() != self.kind() {
            return Err(Error::invalid(
                "state",
                format!("{} state given to a {} model", x.kind(), self.kind()),
            ));
        }
        let flat = x.to_flat();
        if flat.len() != self.state_dim() {
            return Err(Error::LengthMismatch(format!(
                "state has {} entries, model expects {}",
                flat.len(),
                self.state_dim()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: 0 });
        }
        Ok(flat)
    }

    /// State derivative, returned in the same shape as the state.
    pub fn derivatives(&self, x: &ModelState, u: &InputSample) -> Result<ModelState> {
        let flat = self.check_state(x)?;
        let mut dx = vec![0.0; flat.len()];
        self.derivative_into(&flat, u, &mut dx);
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: 0 });
        }
        ModelState::from_flat(self.kind(), &dx)
    }

    pub fn outputs(&self, x: &ModelState, u: &InputSample) -> Result<OutputSample> {
        let flat = self.check_state(x)?;
        Ok(self.output_from(&flat, u))
    }
}
