use serde::{Deserialize, Serialize};

use super::cycle::DriveCycle;
use super::rk4::Rk4;
use crate::error::{Error, Result};
use crate::model::{unpack, CellModel, FixedConstants, ModelKind, ModelState, OutputSample};

/// Fixed-step integration settings. Each sample interval `Δt` is split
/// into `substeps` RK4 steps with the input held constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub substeps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

impl IntegratorSettings {
    /// Settings for an internal step that must divide the sample interval.
    pub fn from_internal_step(sample_dt: f64, internal_dt: f64) -> Result<Self> {
        if !(internal_dt > 0.0) || internal_dt > sample_dt * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "internal step",
                format!("{internal_dt} s must lie in (0, {sample_dt}]"),
            ));
        }
        let ratio = sample_dt / internal_dt;
        let substeps = ratio.round();
        if (ratio - substeps).abs() > 1e-9 * ratio {
            return Err(Error::invalid(
                "internal step",
                format!("{internal_dt} s does not divide the sample interval {sample_dt} s"),
            ));
        }
        Ok(Self {
            substeps: substeps as usize,
        })
    }
}

/// States and noiseless outputs at every sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: ModelKind,
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    outputs: Vec<OutputSample>,
    range_flags: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn outputs(&self) -> &[OutputSample] {
        &self.outputs
    }

    pub fn state(&self, k: usize) -> ModelState {
        ModelState::from_flat(self.kind, &self.states[k * self.dim..(k + 1) * self.dim])
            .expect("stored states have the model's dimension")
    }

    pub fn flat_state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Per-step flag: OCV argument (SoC or `V_s`) outside `[0, 1]`.
    pub fn range_flags(&self) -> &[bool] {
        &self.range_flags
    }

    pub fn range_violated(&self) -> bool {
        self.range_flags.iter().any(|&f| f)
    }
}

/// Integrates `model` over `cycle` from `x0`, recording the state and the
/// noiseless output at every sample instant (the first record is `x0`).
pub fn simulate(
    model: &CellModel,
    cycle: &DriveCycle,
    x0: &ModelState,
    settings: IntegratorSettings,
) -> Result<Trajectory> {
    if x0.kind() != model.kind() {
        return Err(Error::invalid(
            "initial state",
            format!("{} state for a {} model", x0.kind(), model.kind()),
        ));
    }
    let x0 = x0.to_flat();
    let dim = model.state_dim();
    if x0.len() != dim {
        return Err(Error::LengthMismatch(format!(
            "initial state has {} entries, model expects {dim}",
            x0.len()
        )));
    }
    let h = cycle.len();
    let mut states = Vec::with_capacity(h * dim);
    let mut outputs = Vec::with_capacity(h);
    let mut range_flags = Vec::with_capacity(h);
    let ocv_index = model.ocv_index();
    integrate(model, cycle, &x0, settings, |_, x, y| {
        states.extend_from_slice(x);
        outputs.push(y);
        range_flags.push(!(0.0..=1.0).contains(&x[ocv_index]));
    })?;
    Ok(Trajectory {
        kind: model.kind(),
        dim,
        times: cycle.times(),
        states,
        outputs,
        range_flags,
    })
}

/// Unpacks `θ` and simulates from the default initial state at the first
/// sample's ambient temperature.
pub fn simulate_parameters(
    kind: ModelKind,
    theta: &[f64],
    fixed: &FixedConstants,
    cycle: &DriveCycle,
    settings: IntegratorSettings,
) -> Result<Trajectory> {
    let model = unpack(theta, kind, fixed)?;
    let x0 = model.initial_state(cycle.samples()[0].ambient);
    simulate(&model, cycle, &x0, settings)
}

/// Lean forward map for the ensemble solver: writes the step-major stacked
/// outputs `[V_1, T_s1, V_2, ...]` into `out` and returns whether the OCV
/// argument left `[0, 1]` at any sample.
pub fn simulate_stacked(
    model: &CellModel,
    cycle: &DriveCycle,
    x0: &[f64],
    settings: IntegratorSettings,
    out: &mut [f64],
) -> Result<bool> {
    if out.len() != 2 * cycle.len() {
        return Err(Error::LengthMismatch(format!(
            "stacked buffer has {} entries for {} samples",
            out.len(),
            cycle.len()
        )));
    }
    let ocv_index = model.ocv_index();
    let mut violated = false;
    integrate(model, cycle, x0, settings, |k, x, y| {
        out[2 * k] = y.voltage;
        out[2 * k + 1] = y.surf_temp;
        violated |= !(0.0..=1.0).contains(&x[ocv_index]);
    })?;
    Ok(violated)
}

fn integrate<F>(
    model: &CellModel,
    cycle: &DriveCycle,
    x0: &[f64],
    settings: IntegratorSettings,
    mut record: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64], OutputSample),
{
    let substeps = settings.substeps.max(1);
    let h = cycle.dt() / substeps as f64;
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x.len());
    let samples = cycle.samples();
    for (k, sample) in samples.iter().enumerate() {
        let u = sample.input();
        let y = model.output_from(&x, &u);
        if !(y.voltage.is_finite() && y.surf_temp.is_finite()) {
            return Err(Error::Integration { step: k });
        }
        record(k, &x, y);
        if k + 1 == samples.len() {
            break;
        }
        for _ in 0..substeps {
            if !rk.step(|x, dx| model.derivative_into(x, &u, dx), &mut x, h) {
                return Err(Error::Integration { step: k + 1 });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{ndct_reference, thevenin_reference};
    use approx::assert_abs_diff_eq;

    fn fixed() -> FixedConstants {
        FixedConstants::default()
    }

    #[test]
    fn rest_cycle_keeps_equilibrium() {
        let model = unpack(&thevenin_reference(), ModelKind::Thevenin, &fixed()).unwrap();
        let cycle = DriveCycle::from_currents(&[0.0; 50], 1.0, 298.15, 4.0).unwrap();
        let x0 = model.initial_state(298.15);
        let traj = simulate(&model, &cycle, &x0, IntegratorSettings::default()).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.state(k), x0);
            assert_eq!(traj.outputs()[k].voltage, 4.2);
        }
        assert!(!traj.range_violated());
    }

    #[test]
    fn coulomb_counting_full_depletion() {
        let model = unpack(&thevenin_reference(), ModelKind::Thevenin, &fixed()).unwrap();
        let cycle = DriveCycle::from_currents(&[-3.3; 3601], 1.0, 298.15, 4.0).unwrap();
        let traj =
            simulate(&model, &cycle, &model.initial_state(298.15), IntegratorSettings::default())
                .unwrap();
        let ModelState::Thevenin { soc, .. } = traj.state(3600) else {
            unreachable!()
        };
        assert_abs_diff_eq!(soc, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn internal_step_must_divide() {
        assert_eq!(IntegratorSettings::from_internal_step(1.0, 0.25).unwrap().substeps, 4);
        assert!(IntegratorSettings::from_internal_step(1.0, 0.3).is_err());
        assert!(IntegratorSettings::from_internal_step(1.0, 2.0).is_err());
    }

    #[test]
    fn stacked_matches_trajectory() {
        let model = unpack(&ndct_reference(), ModelKind::Ndct, &fixed()).unwrap();
        let currents: Vec<f64> = (0..200).map(|k| if k % 40 < 20 { -3.0 } else { 1.0 }).collect();
        let cycle = DriveCycle::from_currents(&currents, 1.0, 303.0, 4.0).unwrap();
        let x0 = model.initial_state(303.0);
        let traj = simulate(&model, &cycle, &x0, IntegratorSettings { substeps: 2 }).unwrap();
        let mut out = vec![0.0; 400];
        let flag = simulate_stacked(
            &model,
            &cycle,
            &x0.to_flat(),
            IntegratorSettings { substeps: 2 },
            &mut out,
        )
        .unwrap();
        assert_eq!(flag, traj.range_violated());
        for (k, y) in traj.outputs().iter().enumerate() {
            assert_eq!(out[2 * k], y.voltage);
            assert_eq!(out[2 * k + 1], y.surf_temp);
        }
    }

    #[test]
    fn charging_from_full_flags_range() {
        let model = unpack(&thevenin_reference(), ModelKind::Thevenin, &fixed()).unwrap();
        let cycle = DriveCycle::from_currents(&[2.0; 20], 1.0, 298.15, 4.0).unwrap();
        let traj =
            simulate(&model, &cycle, &model.initial_state(298.15), IntegratorSettings::default())
                .unwrap();
        assert!(!traj.range_flags()[0]);
        assert!(traj.range_flags()[1]);
        // OCV extrapolates instead of clamping.
        assert!(traj.outputs()[19].voltage.is_finite());
    }

    #[test]
    fn divergent_parameters_fail_with_step() {
        let mut theta = thevenin_reference();
        theta[2] = 1e-4; // C_1: time constant 2 µs, RK4 at 1 s is unstable
        let cycle = DriveCycle::from_currents(&[-2.0; 600], 1.0, 298.15, 4.0).unwrap();
        let err = simulate_parameters(
            ModelKind::Thevenin,
            &theta,
            &fixed(),
            &cycle,
            IntegratorSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integration { .. }), "{err}");
    }
}
