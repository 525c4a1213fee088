use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-node lumped thermal submodel (core and surface nodes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// Core heat capacity [J/K].
    pub c_core: f64,
    /// Surface heat capacity [J/K].
    pub c_surf: f64,
    /// Core-to-surface conduction resistance [K/W].
    pub r_core: f64,
    /// Surface-to-ambient convection resistance [K/W].
    pub r_surf: f64,
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C_core", self.c_core),
            ("C_surf", self.c_surf),
            ("R_core", self.r_core),
            ("R_surf", self.r_surf),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Joule/overpotential heat `I (V - V_ocv)` [W].
///
/// With the charging-positive sign convention this is non-negative whenever
/// the overpotential opposes the current.
#[inline]
pub fn heat_generation(current: f64, voltage: f64, v_ocv: f64) -> f64 {
    current * (voltage - v_ocv)
}

/// Returns `(dT_c/dt, dT_s/dt)` in K/s.
#[inline]
pub fn thermal_derivatives(
    p: &ThermalParams,
    core_temp: f64,
    surf_temp: f64,
    ambient: f64,
    q_gen: f64,
) -> (f64, f64) {
    let conduction = (core_temp - surf_temp) / p.r_core;
    let convection = (surf_temp - ambient) / p.r_surf;
    (
        (q_gen - conduction) / p.c_core,
        (conduction - convection) / p.c_surf,
    )
}

/// Arrhenius scaling `R_ref exp(kappa (1/T_c - 1/T_ref))`.
pub fn arrhenius(r_ref: f64, kappa: f64, core_temp: f64, t_ref: f64) -> Result<f64> {
    if !(core_temp > 0.0) || !(t_ref > 0.0) {
        return Err(Error::Domain(format!(
            "temperatures must be positive kelvin (T_c = {core_temp}, T_ref = {t_ref})"
        )));
    }
    if !(r_ref > 0.0) {
        return Err(Error::Domain(format!(
            "reference resistance must be positive, got {r_ref}"
        )));
    }
    Ok(arrhenius_unchecked(r_ref, kappa, core_temp, t_ref))
}

/// Hot-path variant used inside the ODE right-hand sides. A non-physical
/// core temperature yields a non-finite or meaningless value which the
/// integrator then reports as a failed trajectory.
#[inline]
pub(crate) fn arrhenius_unchecked(r_ref: f64, kappa: f64, core_temp: f64, t_ref: f64) -> f64 {
    r_ref * (kappa * (1.0 / core_temp - 1.0 / t_ref)).exp()
}
