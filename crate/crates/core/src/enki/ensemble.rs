use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberHealth {
    Healthy,
    /// Simulated, but the OCV argument left `[0, 1]`.
    RangeViolation,
    /// Forward simulation diverged; excluded from statistics.
    Failed,
}

/// Parameter members (columns of `theta`) and their predicted stacked
/// outputs (columns of `outputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    theta: DMatrix<f64>,
    outputs: DMatrix<f64>,
    health: Vec<MemberHealth>,
    pub iteration: usize,
}

impl Ensemble {
    /// An ensemble with no outputs yet.
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        let m = theta.ncols();
        if m < 2 {
            return Err(Error::invalid("ensemble", format!("need at least 2 members, got {m}")));
        }
        Ok(Self {
            outputs: DMatrix::zeros(0, m),
            health: vec![MemberHealth::Healthy; m],
            theta,
            iteration: 0,
        })
    }

    pub fn with_outputs(theta: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if outputs.ncols() != theta.ncols() {
            return Err(Error::LengthMismatch(format!(
                "{} parameter members but {} output members",
                theta.ncols(),
                outputs.ncols()
            )));
        }
        let mut e = Self::new(theta)?;
        e.outputs = outputs;
        Ok(e)
    }

    pub fn members(&self) -> usize {
        self.theta.ncols()
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.theta
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn set_outputs(&mut self, outputs: DMatrix<f64>) -> Result<()> {
        if outputs.ncols() != self.members() {
            return Err(Error::LengthMismatch(format!(
                "{} output members for {} parameter members",
                outputs.ncols(),
                self.members()
            )));
        }
        self.outputs = outputs;
        Ok(())
    }

    pub fn outputs_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.outputs
    }

    pub fn health(&self) -> &[MemberHealth] {
        &self.health
    }

    pub fn set_health(&mut self, i: usize, h: MemberHealth) {
        self.health[i] = h;
    }

    pub fn usable(&self) -> Vec<usize> {
        (0..self.members())
            .filter(|&i| self.health[i] != MemberHealth::Failed)
            .collect()
    }

    pub fn failed(&self) -> Vec<usize> {
        (0..self.members())
            .filter(|&i| self.health[i] == MemberHealth::Failed)
            .collect()
    }

    /// Mean over all non-failed members.
    pub fn mean(&self) -> DVector<f64> {
        let idx = self.usable();
        let mut s = DVector::zeros(self.dim());
        for &i in &idx {
            s += self.theta.column(i);
        }
        s / idx.len().max(1) as f64
    }
}

/// Empirical first and second moments in anomaly form.
///
/// `theta_anomalies` and `output_anomalies` hold the centred members scaled
/// by `1/√(M−1)`, so `C^{θθ} = AθAθᵀ`, `C^{θY} = AθA_Yᵀ` and
/// `C^{YY} = A_YA_Yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub theta_mean: DVector<f64>,
    pub output_mean: DVector<f64>,
    pub theta_anomalies: DMatrix<f64>,
    pub output_anomalies: DMatrix<f64>,
    /// Member indices the statistics were computed over.
    pub members: Vec<usize>,
}

impl EnsembleStats {
    pub fn c_theta_theta(&self) -> DMatrix<f64> {
        &self.theta_anomalies * self.theta_anomalies.transpose()
    }

    pub fn c_theta_y(&self) -> DMatrix<f64> {
        &self.theta_anomalies * self.output_anomalies.transpose()
    }

    /// Dense `C^{YY}`; only sensible for small output dimensions.
    pub fn c_yy(&self) -> DMatrix<f64> {
        &self.output_anomalies * self.output_anomalies.transpose()
    }
}

fn centred(columns: &DMatrix<f64>, members: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let m = members.len();
    let mut mean = DVector::zeros(columns.nrows());
    for &i in members {
        mean += columns.column(i);
    }
    mean /= m as f64;
    let scale = 1.0 / ((m - 1) as f64).sqrt();
    let mut anomalies = DMatrix::zeros(columns.nrows(), m);
    for (j, &i) in members.iter().enumerate() {
        let mut col = anomalies.column_mut(j);
        col.copy_from(&columns.column(i));
        col -= &mean;
        col *= scale;
    }
    (mean, anomalies)
}

/// Means and `1/(M−1)`-normalized (cross-)covariances over non-failed members.
pub fn ensemble_stats(ens: &Ensemble) -> Result<EnsembleStats> {
    let members = ens.usable();
    if members.len() < 2 {
        return Err(Error::Collapse {
            healthy: members.len(),
        });
    }
    let (theta_mean, theta_anomalies) = centred(ens.theta(), &members);
    let (output_mean, output_anomalies) = centred(ens.outputs(), &members);
    Ok(EnsembleStats {
        theta_mean,
        output_mean,
        theta_anomalies,
        output_anomalies,
        members,
    })
}

/// Redraws member `i` from `N(θ̄, C^{θθ})` of the non-failed members and
/// marks it healthy. `attempt` separates repeated redraws of the same
/// member within one iteration.
pub fn quarantine_member(ens: &mut Ensemble, i: usize, seed: u64, attempt: u64) -> Result<()> {
    let members: Vec<usize> = ens.usable().into_iter().filter(|&j| j != i).collect();
    if members.len() < 2 {
        return Err(Error::Collapse {
            healthy: members.len(),
        });
    }
    let (mean, anomalies) = centred(ens.theta(), &members);
    let mut rng = rng::stream(
        seed,
        Domain::Quarantine,
        i as u64,
        ((ens.iteration as u64) << 16) | attempt,
    );
    // θ̄ + Aθ z with z ~ N(0, I_M) has covariance AθAθᵀ = C^{θθ}.
    let z = DVector::from_iterator(
        members.len(),
        (0..members.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let draw = mean + anomalies * z;
    ens.theta.set_column(i, &draw);
    ens.health[i] = MemberHealth::Healthy;
    log::debug!("iteration {}: member {i} redrawn (attempt {attempt})", ens.iteration);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(theta: &[f64], y: &[f64]) -> Ensemble {
        Ensemble::with_outputs(
            DMatrix::from_row_slice(1, theta.len(), theta),
            DMatrix::from_row_slice(1, y.len(), y),
        )
        .unwrap()
    }

    #[test]
    fn scalar_moments() {
        let s = ensemble_stats(&scalar(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0])).unwrap();
        assert_eq!(s.theta_mean[0], 2.0);
        assert_relative_eq!(s.c_theta_theta()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.c_theta_y()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.c_yy()[(0, 0)], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_members_have_zero_covariance() {
        let s = ensemble_stats(&scalar(&[5.0; 4], &[1.0; 4])).unwrap();
        assert_eq!(s.c_theta_theta()[(0, 0)], 0.0);
        assert_eq!(s.c_theta_y()[(0, 0)], 0.0);
    }

    #[test]
    fn anomalies_sum_to_zero() {
        let theta = DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64).sin());
        let y = DMatrix::from_fn(5, 7, |i, j| ((i + 3 * j) as f64).cos());
        let s = ensemble_stats(&Ensemble::with_outputs(theta, y).unwrap()).unwrap();
        for r in s.theta_anomalies.row_iter().chain(s.output_anomalies.row_iter()) {
            assert!(r.sum().abs() < 1e-14);
        }
    }

    #[test]
    fn failed_members_are_excluded() {
        let mut e = scalar(&[1.0, 2.0, 3.0, 100.0], &[1.0, 2.0, 3.0, f64::NAN]);
        e.set_health(3, MemberHealth::Failed);
        let s = ensemble_stats(&e).unwrap();
        assert_eq!(s.theta_mean[0], 2.0);
        e.set_health(1, MemberHealth::Failed);
        e.set_health(2, MemberHealth::Failed);
        assert!(matches!(ensemble_stats(&e), Err(Error::Collapse { healthy: 1 })));
    }

    #[test]
    fn quarantine_touches_only_the_failed_member() {
        let theta = DMatrix::from_fn(2, 200, |i, j| 1.0 + 0.01 * ((i + 1) * j) as f64);
        let mut e = Ensemble::new(theta.clone()).unwrap();
        e.set_health(17, MemberHealth::Failed);
        quarantine_member(&mut e, 17, 5, 0).unwrap();
        for j in 0..200 {
            if j != 17 {
                assert_eq!(e.theta().column(j), theta.column(j));
            }
        }
        assert_ne!(e.theta().column(17), theta.column(17));
        assert_eq!(e.health()[17], MemberHealth::Healthy);
        assert!(e.failed().is_empty());
    }
}
