//! Nonlinear double-capacitor model with output RC pair and the two-node
//! thermal submodel. `R_b` is Arrhenius-corrected with `kappa2`, the ohmic
//! resistance with `kappa1`; the output pair `R_1 C_1` is not corrected.
//!
//! Flat state layout: `[V_b, V_s, V_1, T_c, T_s]`.

use std::sync::Arc;

use super::ocv::OcvCurve;
use super::thermal::{arrhenius_unchecked, heat_generation, thermal_derivatives, ThermalParams};
use super::{InputSample, OutputSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NdctParams {
    pub c_b: f64,
    pub c_s: f64,
    pub r_b: f64,
    pub r_o: f64,
    pub thermal: ThermalParams,
    pub kappa1: f64,
    pub kappa2: f64,
    pub r_1: f64,
    pub c_1: f64,
    /// Fixed series resistance in the bulk branch; zero gives the canonical
    /// diffusion subcircuit.
    pub r_s: f64,
    pub t_ref: f64,
    pub ocv: Arc<OcvCurve>,
}

pub(crate) const STATE_DIM: usize = 5;

impl NdctParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C_b", self.c_b),
            ("C_s", self.c_s),
            ("R_b", self.r_b),
            ("R_o", self.r_o),
            ("R_1", self.r_1),
            ("C_1", self.c_1),
            ("T_ref", self.t_ref),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.r_s >= 0.0 && self.r_s.is_finite()) {
            return Err(Error::invalid("R_s", format!("must be non-negative, got {}", self.r_s)));
        }
        if !(self.kappa1.is_finite() && self.kappa2.is_finite()) {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        self.thermal.validate()
    }

    #[inline]
    pub(crate) fn voltage(&self, x: &[f64], current: f64) -> f64 {
        let r_o_t = arrhenius_unchecked(self.r_o, self.kappa1, x[3], self.t_ref);
        self.ocv.eval(x[1]) - x[2] + r_o_t * current
    }

    pub(crate) fn derivative(&self, x: &[f64], u: &InputSample, dx: &mut [f64]) {
        let (vb, vs, v1, core_temp, surf_temp) = (x[0], x[1], x[2], x[3], x[4]);
        let i = u.current;
        let r_b_t = arrhenius_unchecked(self.r_b, self.kappa2, core_temp, self.t_ref);
        dx[0] = (vs - vb) / (self.c_b * r_b_t) + self.r_s * i / (self.c_b * r_b_t);
        dx[1] = (vb - vs) / (self.c_s * r_b_t) + i / self.c_s;
        dx[2] = -v1 / (self.r_1 * self.c_1) - i / self.c_1;
        let v = self.voltage(x, i);
        let q = heat_generation(i, v, self.ocv.eval(vs));
        let (dtc, dts) = thermal_derivatives(&self.thermal, core_temp, surf_temp, u.ambient, q);
        dx[3] = dtc;
        dx[4] = dts;
    }

    pub(crate) fn output(&self, x: &[f64], u: &InputSample) -> OutputSample {
        OutputSample {
            voltage: self.voltage(x, u.current),
            surf_temp: x[4],
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{CellModel, ModelState};
    use approx::assert_relative_eq;

    pub(crate) fn table_two() -> NdctParams {
        NdctParams {
            c_b: 10037.0,
            c_s: 973.0,
            r_b: 0.019,
            r_o: 0.026,
            thermal: ThermalParams {
                c_core: 40.0,
                c_surf: 10.0,
                r_core: 4.0,
                r_surf: 7.0,
            },
            kappa1: 30.0,
            kappa2: 70.0,
            r_1: 0.02,
            c_1: 3250.0,
            r_s: 0.0,
            t_ref: 298.15,
            ocv: Arc::new(OcvCurve::linear_fixture()),
        }
    }

    fn state(vb: f64, vs: f64, v1: f64, t: f64) -> ModelState {
        ModelState::Ndct {
            bulk: vb,
            surface: vs,
            v1,
            core_temp: t,
            surf_temp: t,
        }
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let m = CellModel::Ndct(table_two());
        let u = InputSample::new(0.0, 298.15);
        let x = state(0.7, 0.7, 0.0, 298.15);
        assert!(m.derivatives(&x, &u).unwrap().to_flat().iter().all(|&v| v == 0.0));
        assert_relative_eq!(m.outputs(&x, &u).unwrap().voltage, 3.0 + 1.2 * 0.7, epsilon = 1e-15);
    }

    #[test]
    fn bulk_rate_from_gradient() {
        let m = CellModel::Ndct(table_two());
        let d = m
            .derivatives(&state(0.5, 0.51, 0.0, 298.15), &InputSample::new(0.0, 298.15))
            .unwrap()
            .to_flat();
        let expected = 0.01 / (10037.0 * 0.019);
        assert_relative_eq!(d[0], expected, max_relative = 1e-9);
        assert_relative_eq!(d[0], 5.244e-5, max_relative = 1e-3);
    }

    #[test]
    fn terminal_voltage_under_charge() {
        let m = CellModel::Ndct(table_two());
        let y = m
            .outputs(&state(1.0, 1.0, 0.05, 298.15), &InputSample::new(2.0, 298.15))
            .unwrap();
        assert_relative_eq!(y.voltage, 4.202, epsilon = 1e-12);
    }

    #[test]
    fn charge_balance_rate_equals_current() {
        let p = table_two();
        let x = [0.4, 0.55, 0.01, 303.0, 301.0];
        let mut dx = [0.0; 5];
        p.derivative(&x, &InputSample::new(-1.7, 298.0), &mut dx);
        assert_relative_eq!(p.c_b * dx[0] + p.c_s * dx[1], -1.7, max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_matches_thevenin_open_circuit() {
        let th = CellModel::Thevenin(crate::model::thevenin::tests::table_one());
        let nd = CellModel::Ndct(table_two());
        let u = InputSample::new(0.0, 298.15);
        let a = th
            .outputs(
                &ModelState::Thevenin {
                    polarization: vec![0.0],
                    soc: 0.42,
                    core_temp: 298.15,
                    surf_temp: 298.15,
                },
                &u,
            )
            .unwrap();
        let b = nd.outputs(&state(0.42, 0.42, 0.0, 298.15), &u).unwrap();
        assert_eq!(a, b);
    }
}
