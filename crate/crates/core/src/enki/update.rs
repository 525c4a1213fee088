//! Kalman-type ensemble updates solved in the ensemble subspace.
//!
//! With `C^{YY} = A Aᵀ` (A of size 2H×M) and diagonal `D = α⁻¹R`,
//!
//! ```text
//! Aᵀ (A Aᵀ + D)⁻¹ = (I + Aᵀ D⁻¹ A)⁻¹ Aᵀ D⁻¹
//! ```
//!
//! so the gain applied to a residual only needs an M×M SPD solve and never
//! forms a 2H×2H matrix. When there are fewer outputs than members the
//! solve runs in output space instead.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::ensemble::{Ensemble, EnsembleStats};
use crate::error::{Error, Result};

const JITTER_ATTEMPTS: usize = 4;

/// Whitened output anomalies `D^{-1/2} A_Y` and the matching weights.
struct Whitened {
    weights: Vec<f64>,
    anomalies: DMatrix<f64>,
}

fn whiten(stats: &EnsembleStats, r_diag: &[f64], alpha: f64) -> Result<Whitened> {
    let n = stats.output_anomalies.nrows();
    if r_diag.len() != n {
        return Err(Error::LengthMismatch(format!(
            "noise diagonal has {} entries, outputs have {n}",
            r_diag.len()
        )));
    }
    if let Some(j) = r_diag.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::Solver(format!("noise variance {j} is not positive")));
    }
    let weights: Vec<f64> = r_diag.iter().map(|r| (alpha / r).sqrt()).collect();
    let mut anomalies = stats.output_anomalies.clone();
    for (mut row, w) in anomalies.row_iter_mut().zip(&weights) {
        row *= *w;
    }
    Ok(Whitened { weights, anomalies })
}

/// Cholesky of an SPD matrix, retried with growing diagonal jitter.
fn factor_spd(s: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let m = s.nrows();
    let scale = s.diagonal().amax().max(1.0);
    let mut jitter = 0.0;
    for attempt in 0..JITTER_ATTEMPTS {
        let mut trial = s.clone();
        if jitter > 0.0 {
            for i in 0..m {
                trial[(i, i)] += jitter;
            }
            log::warn!("gain factorization retry {attempt} with jitter {jitter:e}");
        }
        if let Some(c) = Cholesky::new(trial) {
            return Ok(c);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 1e3 };
    }
    Err(Error::Solver(format!("{m}x{m} gain system is not positive definite")))
}

/// `(I + ÃᵀÃ)⁻¹` in factored form. The M×M subspace system is used unless
/// the output dimension is smaller, in which case the push-through identity
/// `(I + ÃᵀÃ)⁻¹Ãᵀ = Ãᵀ(I + ÃÃᵀ)⁻¹` moves the solve to output space.
enum Gain {
    Subspace(Cholesky<f64, Dyn>),
    Outputs(Cholesky<f64, Dyn>),
}

impl Gain {
    fn new(w: &Whitened) -> Result<Self> {
        let (n, m) = w.anomalies.shape();
        if n < m {
            let s = DMatrix::identity(n, n) + &w.anomalies * w.anomalies.transpose();
            Ok(Gain::Outputs(factor_spd(s)?))
        } else {
            let s = DMatrix::identity(m, m) + w.anomalies.tr_mul(&w.anomalies);
            Ok(Gain::Subspace(factor_spd(s)?))
        }
    }

    /// `(I + ÃᵀÃ)⁻¹ Ãᵀ rhs` for whitened residual columns `rhs`.
    fn coefficients(&self, w: &Whitened, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gain::Subspace(c) => c.solve(&w.anomalies.tr_mul(rhs)),
            Gain::Outputs(c) => w.anomalies.tr_mul(&c.solve(rhs)),
        }
    }

    /// `(I + ÃᵀÃ)⁻¹ b`.
    fn solve(&self, w: &Whitened, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Gain::Subspace(c) => c.solve(b),
            Gain::Outputs(c) => b - w.anomalies.tr_mul(&c.solve(&(&w.anomalies * b))),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("tempering", format!("alpha = {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// `θ_i ← θ_i + C^{θY}(C^{YY} + α⁻¹R)⁻¹(Y_obs − Y_i)` for every member the
/// statistics were computed over. Other members are left untouched. The
/// returned ensemble carries no outputs and the next iteration index.
pub fn enki_update(
    ens: &Ensemble,
    stats: &EnsembleStats,
    y_obs: &[f64],
    r_diag: &[f64],
    alpha: f64,
) -> Result<Ensemble> {
    check_alpha(alpha)?;
    if y_obs.len() != ens.outputs().nrows() {
        return Err(Error::LengthMismatch(format!(
            "observation has {} entries, predictions {}",
            y_obs.len(),
            ens.outputs().nrows()
        )));
    }
    let w = whiten(stats, r_diag, alpha)?;
    let gain = Gain::new(&w)?;

    let n = y_obs.len();
    let m = stats.members.len();
    let mut residuals = DMatrix::zeros(n, m);
    for (j, &i) in stats.members.iter().enumerate() {
        let pred = ens.outputs().column(i);
        let mut col = residuals.column_mut(j);
        for k in 0..n {
            col[k] = w.weights[k] * (y_obs[k] - pred[k]);
        }
    }
    let coeffs = gain.coefficients(&w, &residuals);
    let delta = &stats.theta_anomalies * coeffs;

    let mut theta = ens.theta().clone();
    for (j, &i) in stats.members.iter().enumerate() {
        let mut col = theta.column_mut(i);
        col += delta.column(j);
    }
    let mut next = Ensemble::new(theta)?;
    for (i, &h) in ens.health().iter().enumerate() {
        next.set_health(i, h);
    }
    next.iteration = ens.iteration + 1;
    Ok(next)
}

/// One global Gaussian conditioning step on the ensemble moments:
/// `m = θ̄ + C^{θY}(C^{YY}+R)⁻¹(Y_obs − Ȳ)`,
/// `P = C^{θθ} − C^{θY}(C^{YY}+R)⁻¹(C^{θY})ᵀ`.
pub fn single_shot_update(
    stats: &EnsembleStats,
    y_obs: &[f64],
    r_diag: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y_obs.len() != stats.output_mean.len() {
        return Err(Error::LengthMismatch(format!(
            "observation has {} entries, predictions {}",
            y_obs.len(),
            stats.output_mean.len()
        )));
    }
    let w = whiten(stats, r_diag, 1.0)?;
    let gain = Gain::new(&w)?;
    let innovation = DVector::from_iterator(
        y_obs.len(),
        y_obs
            .iter()
            .zip(stats.output_mean.iter())
            .zip(&w.weights)
            .map(|((y, ybar), wk)| wk * (y - ybar)),
    );
    let coeffs = gain.coefficients(&w, &DMatrix::from_column_slice(innovation.len(), 1, innovation.as_slice()));
    let mean = &stats.theta_mean + (&stats.theta_anomalies * coeffs).column(0);
    // Aθ [I − Ãᵀ(ÃÃᵀ + I)⁻¹Ã] Aθᵀ = Aθ S⁻¹ Aθᵀ with S = I + ÃᵀÃ.
    let s_inv_at = gain.solve(&w, &stats.theta_anomalies.transpose());
    let cov = &stats.theta_anomalies * s_inv_at;
    Ok((mean, symmetrize(cov)))
}

/// Explicit joint Gaussian moments of `(θ, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub theta_mean: DVector<f64>,
    pub output_mean: DVector<f64>,
    pub c_theta_theta: DMatrix<f64>,
    pub c_theta_y: DMatrix<f64>,
    pub c_yy: DMatrix<f64>,
}

impl GaussianMoments {
    /// Conditions `θ` on `Y = y_obs` with additive noise covariance
    /// `diag(r_diag)`, using a dense Cholesky solve.
    pub fn condition(&self, y_obs: &[f64], r_diag: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.output_mean.len();
        if y_obs.len() != n || r_diag.len() != n || self.c_yy.shape() != (n, n) {
            return Err(Error::LengthMismatch(
                "observation, noise and output moments disagree".into(),
            ));
        }
        let mut s = self.c_yy.clone();
        for k in 0..n {
            s[(k, k)] += r_diag[k];
        }
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Solver("C^{YY} + R is not positive definite".into()))?;
        let innovation = DVector::from_column_slice(y_obs) - &self.output_mean;
        let mean = &self.theta_mean + &self.c_theta_y * chol.solve(&innovation);
        let cov = &self.c_theta_theta - &self.c_theta_y * chol.solve(&self.c_theta_y.transpose());
        Ok((mean, symmetrize(cov)))
    }
}

impl From<&EnsembleStats> for GaussianMoments {
    fn from(s: &EnsembleStats) -> Self {
        Self {
            theta_mean: s.theta_mean.clone(),
            output_mean: s.output_mean.clone(),
            c_theta_theta: s.c_theta_theta(),
            c_theta_y: s.c_theta_y(),
            c_yy: s.c_yy(),
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enki::ensemble::ensemble_stats;
    use approx::assert_relative_eq;

    fn scalar(theta: &[f64], y: &[f64]) -> Ensemble {
        Ensemble::with_outputs(
            DMatrix::from_row_slice(1, theta.len(), theta),
            DMatrix::from_row_slice(1, y.len(), y),
        )
        .unwrap()
    }

    #[test]
    fn scalar_identity_map() {
        let e = scalar(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        let s = ensemble_stats(&e).unwrap();
        let next = enki_update(&e, &s, &[2.0], &[1.0], 1.0).unwrap();
        let got: Vec<f64> = next.theta().iter().copied().collect();
        for (g, want) in got.iter().zip([1.5, 2.0, 2.5]) {
            assert_relative_eq!(*g, want, epsilon = 1e-14);
        }
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn zero_cross_covariance_leaves_members() {
        // Outputs vary, but θ spread is orthogonal to them.
        let theta = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, -1.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, -1.0, -1.0]);
        let e = Ensemble::with_outputs(theta.clone(), y).unwrap();
        let s = ensemble_stats(&e).unwrap();
        assert_relative_eq!(s.c_theta_y()[(0, 0)], 0.0, epsilon = 1e-15);
        let next = enki_update(&e, &s, &[3.0], &[1.0], 0.5).unwrap();
        for (a, b) in next.theta().iter().zip(theta.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn alpha_bounds() {
        let e = scalar(&[1.0, 2.0], &[1.0, 2.0]);
        let s = ensemble_stats(&e).unwrap();
        assert!(enki_update(&e, &s, &[2.0], &[1.0], 0.0).is_err());
        assert!(enki_update(&e, &s, &[2.0], &[1.0], 1.5).is_err());
    }

    #[test]
    fn single_shot_matches_dense_conditioning() {
        let theta = DMatrix::from_fn(2, 6, |i, j| ((i * 6 + j) as f64 * 0.7).sin());
        let y = DMatrix::from_fn(4, 6, |i, j| ((i * 5 + j) as f64 * 1.3).cos());
        let e = Ensemble::with_outputs(theta, y).unwrap();
        let s = ensemble_stats(&e).unwrap();
        let obs = [0.1, -0.2, 0.3, 0.0];
        let r = [0.5, 0.4, 0.3, 0.2];
        let (m1, p1) = single_shot_update(&s, &obs, &r).unwrap();
        let (m2, p2) = GaussianMoments::from(&s).condition(&obs, &r).unwrap();
        assert_relative_eq!(m1, m2, epsilon = 1e-12);
        assert_relative_eq!(p1, p2, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_scalar_posterior() {
        let moments = GaussianMoments {
            theta_mean: DVector::from_element(1, 0.0),
            output_mean: DVector::from_element(1, 0.0),
            c_theta_theta: DMatrix::from_element(1, 1, 1.0),
            c_theta_y: DMatrix::from_element(1, 1, 1.0),
            c_yy: DMatrix::from_element(1, 1, 1.0),
        };
        let (m, p) = moments.condition(&[1.0], &[1.0]).unwrap();
        assert_relative_eq!(m[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uninformative_data_keeps_moments() {
        let theta = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, -1.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, -1.0, -1.0]);
        let s = ensemble_stats(&Ensemble::with_outputs(theta, y).unwrap()).unwrap();
        let (m, p) = single_shot_update(&s, &[2.0], &[1.0]).unwrap();
        assert_relative_eq!(m[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(p[(0, 0)], s.c_theta_theta()[(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn single_shot_equals_one_full_tempering_step_mean() {
        let theta = DMatrix::from_fn(3, 9, |i, j| ((i * 9 + j) as f64 * 0.37).sin());
        let y = DMatrix::from_fn(5, 9, |i, j| ((i * 4 + j * 2) as f64 * 0.61).cos());
        let e = Ensemble::with_outputs(theta, y).unwrap();
        let s = ensemble_stats(&e).unwrap();
        let obs = [0.3, 0.1, -0.2, 0.4, 0.0];
        let r = [0.2; 5];
        let (m, _) = single_shot_update(&s, &obs, &r).unwrap();
        let next = enki_update(&e, &s, &obs, &r, 1.0).unwrap();
        assert_relative_eq!(next.theta().column_mean(), m, epsilon = 1e-12);
    }
}
