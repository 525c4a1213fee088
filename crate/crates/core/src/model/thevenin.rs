//! Thevenin model with `n` RC pairs, Coulomb-counted SoC and the two-node
//! thermal submodel. Resistances are Arrhenius-corrected by the core
//! temperature (`kappa1` for the ohmic resistance, `kappa2` for the pairs).
//!
//! Flat state layout: `[V_p1, .., V_pn, SoC, T_c, T_s]`.

use std::sync::Arc;

use super::ocv::OcvCurve;
use super::thermal::{arrhenius_unchecked, heat_generation, thermal_derivatives, ThermalParams};
use super::{InputSample, OutputSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcPair {
    pub r: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheveninParams {
    pub r_o: f64,
    pub pairs: Vec<RcPair>,
    pub thermal: ThermalParams,
    pub kappa1: f64,
    pub kappa2: f64,
    pub capacity_ah: f64,
    pub t_ref: f64,
    pub ocv: Arc<OcvCurve>,
}

impl TheveninParams {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("RC pairs", "at least one pair is required"));
        }
        let check = |name: String, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        check("R_o".into(), self.r_o)?;
        for (i, p) in self.pairs.iter().enumerate() {
            check(format!("R_{}", i + 1), p.r)?;
            check(format!("C_{}", i + 1), p.c)?;
        }
        check("Q".into(), self.capacity_ah)?;
        check("T_ref".into(), self.t_ref)?;
        if !(self.kappa1.is_finite() && self.kappa2.is_finite()) {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        self.thermal.validate()
    }

    pub fn state_dim(&self) -> usize {
        self.pairs.len() + 3
    }

    #[inline]
    fn r_o_t(&self, core_temp: f64) -> f64 {
        arrhenius_unchecked(self.r_o, self.kappa1, core_temp, self.t_ref)
    }

    /// Arrhenius factor shared by all RC pairs.
    #[inline]
    fn pair_factor(&self, core_temp: f64) -> f64 {
        arrhenius_unchecked(1.0, self.kappa2, core_temp, self.t_ref)
    }

    /// Terminal voltage from a flat state.
    #[inline]
    pub(crate) fn voltage(&self, x: &[f64], current: f64) -> f64 {
        let n = self.pairs.len();
        let vp_sum: f64 = x[..n].iter().sum();
        let core_temp = x[n + 1];
        self.ocv.eval(x[n]) - vp_sum + self.r_o_t(core_temp) * current
    }

    pub(crate) fn derivative(&self, x: &[f64], u: &InputSample, dx: &mut [f64]) {
        let n = self.pairs.len();
        let (soc, core_temp, surf_temp) = (x[n], x[n + 1], x[n + 2]);
        let i = u.current;
        let factor = self.pair_factor(core_temp);
        for (k, pair) in self.pairs.iter().enumerate() {
            let r_t = pair.r * factor;
            dx[k] = -x[k] / (r_t * pair.c) - i / pair.c;
        }
        dx[n] = i / (3600.0 * self.capacity_ah);
        let v = self.voltage(x, i);
        let q = heat_generation(i, v, self.ocv.eval(soc));
        let (dtc, dts) = thermal_derivatives(&self.thermal, core_temp, surf_temp, u.ambient, q);
        dx[n + 1] = dtc;
        dx[n + 2] = dts;
    }

    pub(crate) fn output(&self, x: &[f64], u: &InputSample) -> OutputSample {
        OutputSample {
            voltage: self.voltage(x, u.current),
            surf_temp: x[self.pairs.len() + 2],
        }
    }

    /// Steady-state polarization `-I R_{i,T}` of each pair at a core temperature.
    pub fn steady_polarization(&self, current: f64, core_temp: f64) -> Vec<f64> {
        let factor = self.pair_factor(core_temp);
        self.pairs.iter().map(|p| -current * p.r * factor).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{CellModel, ModelState};
    use approx::assert_relative_eq;

    pub(crate) fn table_one() -> TheveninParams {
        TheveninParams {
            r_o: 0.026,
            pairs: vec![RcPair { r: 0.02, c: 3250.0 }],
            thermal: ThermalParams {
                c_core: 40.0,
                c_surf: 10.0,
                r_core: 4.0,
                r_surf: 7.0,
            },
            kappa1: 30.0,
            kappa2: 70.0,
            capacity_ah: 3.3,
            t_ref: 298.15,
            ocv: Arc::new(OcvCurve::linear_fixture()),
        }
    }

    fn state(vp: f64, soc: f64, t: f64) -> ModelState {
        ModelState::Thevenin {
            polarization: vec![vp],
            soc,
            core_temp: t,
            surf_temp: t,
        }
    }

    #[test]
    fn rest_equilibrium_has_zero_derivative() {
        let m = CellModel::Thevenin(table_one());
        let u = InputSample::new(0.0, 298.15);
        let d = m.derivatives(&state(0.0, 0.6, 298.15), &u).unwrap();
        assert!(d.to_flat().iter().all(|&v| v == 0.0), "{d:?}");
        let y = m.outputs(&state(0.0, 0.6, 298.15), &u).unwrap();
        assert_relative_eq!(y.voltage, 3.0 + 1.2 * 0.6, epsilon = 1e-15);
    }

    #[test]
    fn polarization_decay_rate() {
        let m = CellModel::Thevenin(table_one());
        let d = m
            .derivatives(&state(0.01, 0.5, 298.15), &InputSample::new(0.0, 298.15))
            .unwrap();
        let flat = d.to_flat();
        assert_relative_eq!(flat[0], -0.01 / 65.0, max_relative = 1e-12);
        assert_relative_eq!(flat[0], -1.5385e-4, max_relative = 1e-4);
    }

    #[test]
    fn terminal_voltage_under_discharge() {
        let m = CellModel::Thevenin(table_one());
        let y = m
            .outputs(&state(0.0, 1.0, 298.15), &InputSample::new(-3.0, 298.15))
            .unwrap();
        assert_relative_eq!(y.voltage, 4.122, epsilon = 1e-12);
        assert_eq!(y.surf_temp, 298.15);
    }

    #[test]
    fn constant_current_fixed_point() {
        let p = table_one();
        let current = -2.5;
        let tc = 305.0;
        let vp = p.steady_polarization(current, tc);
        let x = [vp[0], 0.5, tc, 300.0];
        let mut dx = [0.0; 4];
        p.derivative(&x, &InputSample::new(current, 298.0), &mut dx);
        assert!(dx[0].abs() < 1e-15);
        // q_gen at the fixed point equals I^2 (R_oT + R_1T).
        let v = p.voltage(&x, current);
        let q = heat_generation(current, v, p.ocv.eval(0.5));
        let r_sum = p.r_o_t(tc) + p.pairs[0].r * p.pair_factor(tc);
        assert_relative_eq!(q, current * current * r_sum, max_relative = 1e-12);
        assert!(q >= 0.0);
    }

    #[test]
    fn validate_rejects_nonpositive() {
        let mut p = table_one();
        p.pairs[0].c = 0.0;
        assert!(p.validate().is_err());
        let mut p = table_one();
        p.pairs.clear();
        assert!(p.validate().is_err());
    }
}
