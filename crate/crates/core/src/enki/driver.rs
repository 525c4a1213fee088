//! The identification loop: prior draw, then per iteration a Monte Carlo
//! forward pass of every member, member quarantine, ensemble statistics, a
//! DMC-chosen tempering increment and the Kalman-type update. The estimate
//! is the mean of the final ensemble.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{BoxplotStats, IterationRecord};
use super::ensemble::{ensemble_stats, quarantine_member, Ensemble, MemberHealth};
use super::prior::{draw_prior_ensemble, PriorSpec};
use super::tempering::{dmc_alpha, misfit, DmcConfig, TemperState};
use super::update::enki_update;
use crate::error::{Error, Result};
use crate::model::{unpack, FixedConstants, ModelKind, ModelState, ParameterVector};
use crate::rng::{self, Domain};
use crate::sim::{simulate_stacked, stack, DriveCycle, IntegratorSettings, MeasurementSeries, NoiseSpec};

/// How members are kept physically meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// Entries below `floor_fraction · |μ₀|` are raised after every update.
    #[default]
    Floor,
    /// The ensemble lives in `ln θ`; the prior is moment-matched log-normal.
    Log,
    /// Unconstrained; non-physical members fail and are redrawn.
    None,
}

/// Which predictions the misfit compares against the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisfitSource {
    /// Noise-free forward-model outputs.
    #[default]
    Noiseless,
    /// The perturbed outputs used in the update.
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnkiSettings {
    pub ensemble_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub dmc: DmcConfig,
    /// Add fresh measurement noise to every member's outputs each iteration.
    pub perturb: bool,
    pub misfit_source: MisfitSource,
    pub positivity: Positivity,
    pub floor_fraction: f64,
    /// Redraw attempts for a member whose simulation failed.
    pub max_redraws: usize,
    /// Worker threads for the forward passes; 0 uses the global pool.
    pub threads: usize,
}

impl Default for EnkiSettings {
    fn default() -> Self {
        Self {
            ensemble_size: 200,
            max_iterations: 20,
            seed: 0,
            dmc: DmcConfig::default(),
            perturb: true,
            misfit_source: MisfitSource::default(),
            positivity: Positivity::default(),
            floor_fraction: 1e-6,
            max_redraws: 3,
            threads: 0,
        }
    }
}

/// The data and fixed model structure of one identification run.
#[derive(Debug, Clone)]
pub struct IdentificationProblem<'a> {
    pub kind: ModelKind,
    pub fixed: &'a FixedConstants,
    pub cycle: &'a DriveCycle,
    pub observations: &'a MeasurementSeries,
    /// Noise covariance used in the update and the perturbations.
    pub noise: NoiseSpec,
    pub integrator: IntegratorSettings,
    /// Defaults to the model's rest state at the first ambient temperature.
    pub initial_state: Option<ModelState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub estimate: ParameterVector,
    pub records: Vec<IterationRecord>,
    pub alphas: Vec<f64>,
    /// Tempering reached one before the iteration cap.
    pub complete: bool,
    /// Boxplots of the final ensemble, in schema order.
    pub final_parameters: Vec<BoxplotStats>,
    /// Final members in physical units (columns).
    pub final_ensemble: DMatrix<f64>,
}

struct Runner<'a> {
    problem: &'a IdentificationProblem<'a>,
    settings: &'a EnkiSettings,
    y_obs: Vec<f64>,
    r_diag: Vec<f64>,
    initial_state: Option<Vec<f64>>,
    floor: Vec<f64>,
}

impl Runner<'_> {
    fn to_physical(&self, theta: &[f64]) -> Vec<f64> {
        match self.settings.positivity {
            Positivity::Log => theta.iter().map(|v| v.exp()).collect(),
            _ => theta.to_vec(),
        }
    }

    fn physical_matrix(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        match self.settings.positivity {
            Positivity::Log => theta.map(f64::exp),
            _ => theta.clone(),
        }
    }

    fn apply_floor(&self, ens: &mut Ensemble) {
        if self.settings.positivity != Positivity::Floor {
            return;
        }
        for mut col in ens.theta_mut().column_iter_mut() {
            for (v, f) in col.iter_mut().zip(&self.floor) {
                if *v < *f {
                    *v = *f;
                }
            }
        }
    }

    /// Noise-free stacked outputs of one member; `Ok(true)` flags a range
    /// violation.
    fn forward(&self, theta: &[f64], out: &mut [f64]) -> Result<bool> {
        let p = self.problem;
        let model = unpack(&self.to_physical(theta), p.kind, p.fixed)?;
        let x0 = match &self.initial_state {
            Some(x) => x.clone(),
            None => model.initial_state(p.cycle.samples()[0].ambient).to_flat(),
        };
        simulate_stacked(&model, p.cycle, &x0, p.integrator, out)
    }

    /// Simulates every member, filling outputs and health flags.
    fn forward_all(&self, ens: &mut Ensemble) {
        let n = self.y_obs.len();
        let m = ens.members();
        let mut outputs = DMatrix::zeros(n, m);
        let theta = ens.theta().clone();
        let health: Vec<MemberHealth> = outputs
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .map(|(i, out)| match self.forward(theta.column(i).as_slice(), out) {
                Ok(false) => MemberHealth::Healthy,
                Ok(true) => MemberHealth::RangeViolation,
                Err(e) => {
                    log::debug!("member {i}: {e}");
                    MemberHealth::Failed
                }
            })
            .collect();
        ens.set_outputs(outputs).expect("member count unchanged");
        for (i, h) in health.into_iter().enumerate() {
            ens.set_health(i, h);
        }
    }

    /// Redraws failed members until they simulate or attempts run out.
    /// Returns the number of redraws performed.
    fn quarantine(&self, ens: &mut Ensemble) -> Result<usize> {
        let mut redraws = 0;
        let n = self.y_obs.len();
        for i in ens.failed() {
            for attempt in 0..self.settings.max_redraws as u64 {
                quarantine_member(ens, i, self.settings.seed, attempt)?;
                redraws += 1;
                if self.settings.positivity == Positivity::Floor {
                    let col = ens.theta().column(i).clone_owned();
                    let mut v = col.as_slice().to_vec();
                    for (x, f) in v.iter_mut().zip(&self.floor) {
                        *x = x.max(*f);
                    }
                    ens.theta_mut().column_mut(i).copy_from_slice(&v);
                }
                let theta = ens.theta().column(i).clone_owned();
                let mut out = vec![0.0; n];
                match self.forward(theta.as_slice(), &mut out) {
                    Ok(violated) => {
                        ens.outputs_mut().column_mut(i).copy_from_slice(&out);
                        ens.set_health(
                            i,
                            if violated {
                                MemberHealth::RangeViolation
                            } else {
                                MemberHealth::Healthy
                            },
                        );
                        break;
                    }
                    Err(_) => ens.set_health(i, MemberHealth::Failed),
                }
            }
        }
        Ok(redraws)
    }

    fn perturb(&self, ens: &mut Ensemble) {
        let sd: Vec<f64> = self.r_diag.iter().map(|r| r.sqrt()).collect();
        let n = sd.len();
        let iteration = ens.iteration as u64;
        let seed = self.settings.seed;
        ens.outputs_mut()
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, col)| {
                let mut rng = rng::stream(seed, Domain::Perturbation, i as u64, iteration);
                for (y, s) in col.iter_mut().zip(&sd) {
                    *y += s * rng.sample::<f64, _>(StandardNormal);
                }
            });
    }

    fn boxplots(&self, ens: &Ensemble) -> Vec<BoxplotStats> {
        let usable = ens.usable();
        let phys = self.physical_matrix(ens.theta());
        phys.row_iter()
            .map(|row| {
                let vals: Vec<f64> = usable.iter().map(|&i| row[i]).collect();
                BoxplotStats::from_values(&vals).unwrap_or_else(|| {
                    BoxplotStats::from_values(&[f64::INFINITY]).expect("non-empty")
                })
            })
            .collect()
    }

    fn run(&self, prior: &PriorSpec) -> Result<Identification> {
        let s = self.settings;
        let mut ens = draw_prior_ensemble(prior, s.ensemble_size, s.seed)?;
        let mut temper = TemperState::new();
        let mut records = Vec::new();
        let steps = self.problem.cycle.len();

        for iteration in 0..s.max_iterations {
            ens.iteration = iteration;
            self.forward_all(&mut ens);
            let failed = ens.failed().len();
            if 2 * failed > ens.members() {
                return Err(Error::TooManyFailures {
                    iteration,
                    failed,
                    total: ens.members(),
                });
            }
            let redrawn = self.quarantine(&mut ens)?;
            let parameters = self.boxplots(&ens);
            let usable = ens.usable();

            let misfit_of = |ens: &Ensemble| -> Result<Vec<f64>> {
                usable
                    .iter()
                    .map(|&i| misfit(&self.y_obs, ens.outputs().column(i).as_slice(), &self.r_diag))
                    .collect()
            };
            let misfits = match s.misfit_source {
                MisfitSource::Noiseless => {
                    let m = misfit_of(&ens)?;
                    if s.perturb {
                        self.perturb(&mut ens);
                    }
                    m
                }
                MisfitSource::Perturbed => {
                    if s.perturb {
                        self.perturb(&mut ens);
                    }
                    misfit_of(&ens)?
                }
            };

            let stats = ensemble_stats(&ens)?;
            let t_before = temper.t();
            let Some(alpha) = dmc_alpha(&misfits, steps, &mut temper, s.dmc)? else {
                break;
            };
            let n = misfits.len() as f64;
            let misfit_mean = misfits.iter().sum::<f64>() / n;
            let misfit_var =
                misfits.iter().map(|m| (m - misfit_mean).powi(2)).sum::<f64>() / (n - 1.0);
            let range_violations = ens
                .health()
                .iter()
                .filter(|h| **h == MemberHealth::RangeViolation)
                .count();
            log::info!(
                "iteration {iteration}: alpha {alpha:.4e}, t {:.4}, mean misfit {misfit_mean:.4e}, {failed} failed",
                temper.t()
            );
            records.push(IterationRecord {
                iteration,
                alpha,
                t_before,
                misfit_mean,
                misfit_var,
                parameters,
                failed_members: failed,
                redrawn_members: redrawn,
                range_violations,
            });

            ens = enki_update(&ens, &stats, &self.y_obs, &self.r_diag, alpha)?;
            self.apply_floor(&mut ens);
            if temper.is_complete() {
                break;
            }
        }

        let final_ensemble = self.physical_matrix(ens.theta());
        let usable = ens.usable();
        let mut estimate = vec![0.0; ens.dim()];
        for &i in &usable {
            for (e, v) in estimate.iter_mut().zip(final_ensemble.column(i).iter()) {
                *e += v;
            }
        }
        estimate.iter_mut().for_each(|e| *e /= usable.len() as f64);
        Ok(Identification {
            estimate: ParameterVector(estimate),
            final_parameters: self.boxplots(&ens),
            records,
            alphas: temper.alphas().to_vec(),
            complete: temper.is_complete(),
            final_ensemble,
        })
    }
}

/// Runs ensemble Kalman inversion with DMC tempering on `problem`.
pub fn run_identification(
    problem: &IdentificationProblem<'_>,
    prior: &PriorSpec,
    settings: &EnkiSettings,
) -> Result<Identification> {
    let expected = crate::model::parameter_count(problem.kind, problem.fixed.rc_pairs);
    if prior.dim() != expected {
        return Err(Error::Schema {
            model: problem.kind.label(),
            expected,
            got: prior.dim(),
        });
    }
    if problem.observations.len() != problem.cycle.len() {
        return Err(Error::LengthMismatch(format!(
            "{} measurements for a drive cycle of {} samples",
            problem.observations.len(),
            problem.cycle.len()
        )));
    }
    if settings.ensemble_size < 2 {
        return Err(Error::invalid("ensemble_size", "need at least 2 members"));
    }
    let initial_state = match &problem.initial_state {
        Some(x) if x.kind() != problem.kind => {
            return Err(Error::invalid("initial state", "does not match the model"))
        }
        Some(x) => Some(x.to_flat()),
        None => None,
    };
    let y_obs = stack(problem.observations);
    if y_obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("measurements", "non-finite value"));
    }
    let (prior, floor) = match settings.positivity {
        Positivity::Log => (prior.to_log_space()?, Vec::new()),
        Positivity::Floor => {
            let p = prior.clone().with_floor_fraction(settings.floor_fraction);
            let floor = p.floor.clone();
            (p, floor)
        }
        Positivity::None => (prior.clone(), Vec::new()),
    };
    let runner = Runner {
        problem,
        settings,
        r_diag: problem.noise.stacked_diagonal(problem.cycle.len()),
        y_obs,
        initial_state,
        floor,
    };
    if settings.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?;
        pool.install(|| runner.run(&prior))
    } else {
        runner.run(&prior)
    }
}
