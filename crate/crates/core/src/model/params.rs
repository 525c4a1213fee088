//! Packing between named parameter sets and the flat vector `θ` that the
//! ensemble solver works on. Fixed constants (capacity, reference
//! temperature, `R_s`, OCV curve) never enter `θ`.
//!
//! Orderings:
//! - Thevenin: `[R_o, R_1, C_1, .., R_n, C_n, C_core, C_surf, R_core, R_surf, κ1, κ2]`
//! - NDCT: `[C_b, C_s, R_b, R_o, C_core, C_surf, R_core, R_surf, κ1, κ2, R_1, C_1]`

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ndct::NdctParams;
use super::ocv::OcvCurve;
use super::thermal::ThermalParams;
use super::thevenin::{RcPair, TheveninParams};
use super::{CellModel, ModelKind};
use crate::error::{Error, Result};

/// Constants that parameterize a model but are not identified.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedConstants {
    /// Rated capacity [Ah] (Thevenin Coulomb counting).
    pub capacity_ah: f64,
    /// Arrhenius reference temperature [K].
    pub t_ref: f64,
    /// NDCT bulk-branch series resistance [Ω].
    pub r_s: f64,
    /// Number of RC pairs in the Thevenin model.
    pub rc_pairs: usize,
    pub ocv: Arc<OcvCurve>,
}

impl Default for FixedConstants {
    fn default() -> Self {
        Self {
            capacity_ah: 3.3,
            t_ref: 298.15,
            r_s: 0.0,
            rc_pairs: 1,
            ocv: Arc::new(OcvCurve::linear_fixture()),
        }
    }
}

/// Flat parameter vector in the model's schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Parameter names in schema order.
pub fn parameter_names(kind: ModelKind, rc_pairs: usize) -> Vec<String> {
    match kind {
        ModelKind::Thevenin => {
            let mut names = vec!["R_o".to_string()];
            for i in 1..=rc_pairs {
                names.push(format!("R_{i}"));
                names.push(format!("C_{i}"));
            }
            names.extend(
                ["C_core", "C_surf", "R_core", "R_surf", "kappa1", "kappa2"].map(String::from),
            );
            names
        }
        ModelKind::Ndct => [
            "C_b", "C_s", "R_b", "R_o", "C_core", "C_surf", "R_core", "R_surf", "kappa1",
            "kappa2", "R_1", "C_1",
        ]
        .map(String::from)
        .to_vec(),
    }
}

pub fn parameter_count(kind: ModelKind, rc_pairs: usize) -> usize {
    match kind {
        ModelKind::Thevenin => 7 + 2 * rc_pairs,
        ModelKind::Ndct => 12,
    }
}

pub fn pack(model: &CellModel) -> ParameterVector {
    let v = match model {
        CellModel::Thevenin(p) => {
            let mut v = vec![p.r_o];
            for pair in &p.pairs {
                v.push(pair.r);
                v.push(pair.c);
            }
            let t = &p.thermal;
            v.extend([t.c_core, t.c_surf, t.r_core, t.r_surf, p.kappa1, p.kappa2]);
            v
        }
        CellModel::Ndct(p) => {
            let t = &p.thermal;
            vec![
                p.c_b, p.c_s, p.r_b, p.r_o, t.c_core, t.c_surf, t.r_core, t.r_surf, p.kappa1,
                p.kappa2, p.r_1, p.c_1,
            ]
        }
    };
    ParameterVector(v)
}

/// Builds a validated model from `θ`. Non-positive resistances or
/// capacitances are rejected.
pub fn unpack(theta: &[f64], kind: ModelKind, fixed: &FixedConstants) -> Result<CellModel> {
    let expected = parameter_count(kind, fixed.rc_pairs);
    if theta.len() != expected {
        return Err(Error::Schema {
            model: kind.label(),
            expected,
            got: theta.len(),
        });
    }
    let model = match kind {
        ModelKind::Thevenin => {
            let n = fixed.rc_pairs;
            let pairs = (0..n)
                .map(|i| RcPair {
                    r: theta[1 + 2 * i],
                    c: theta[2 + 2 * i],
                })
                .collect();
            let rest = &theta[1 + 2 * n..];
            CellModel::Thevenin(TheveninParams {
                r_o: theta[0],
                pairs,
                thermal: ThermalParams {
                    c_core: rest[0],
                    c_surf: rest[1],
                    r_core: rest[2],
                    r_surf: rest[3],
                },
                kappa1: rest[4],
                kappa2: rest[5],
                capacity_ah: fixed.capacity_ah,
                t_ref: fixed.t_ref,
                ocv: Arc::clone(&fixed.ocv),
            })
        }
        ModelKind::Ndct => CellModel::Ndct(NdctParams {
            c_b: theta[0],
            c_s: theta[1],
            r_b: theta[2],
            r_o: theta[3],
            thermal: ThermalParams {
                c_core: theta[4],
                c_surf: theta[5],
                r_core: theta[6],
                r_surf: theta[7],
            },
            kappa1: theta[8],
            kappa2: theta[9],
            r_1: theta[10],
            c_1: theta[11],
            r_s: fixed.r_s,
            t_ref: fixed.t_ref,
            ocv: Arc::clone(&fixed.ocv),
        }),
    };
    model.validate()?;
    Ok(model)
}

/// Nominal parameters of the single-pair Thevenin model.
pub fn thevenin_reference() -> ParameterVector {
    ParameterVector(vec![0.026, 0.02, 3250.0, 40.0, 10.0, 4.0, 7.0, 30.0, 70.0])
}

/// Nominal parameters of the NDCT model.
pub fn ndct_reference() -> ParameterVector {
    ParameterVector(vec![
        10037.0, 973.0, 0.019, 0.026, 40.0, 10.0, 4.0, 7.0, 30.0, 70.0, 0.02, 3250.0,
    ])
}

pub fn reference_parameters(kind: ModelKind) -> ParameterVector {
    match kind {
        ModelKind::Thevenin => thevenin_reference(),
        ModelKind::Ndct => ndct_reference(),
    }
}
