use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Relative eigenvalue slack when checking positive semidefiniteness.
const PSD_RTOL: f64 = 1e-12;

/// Gaussian prior `N(μ₀, Σ₀)` over `θ`, with optional per-entry lower floors.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Lower bounds applied to every draw; empty for none.
    pub floor: Vec<f64>,
}

impl PriorSpec {
    pub fn diagonal(mean: Vec<f64>, variance: &[f64]) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::LengthMismatch(format!(
                "prior mean has {} entries, variance {}",
                mean.len(),
                variance.len()
            )));
        }
        if let Some(i) = variance.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                format!("prior.variance[{i}]"),
                format!("must be a non-negative number, got {}", variance[i]),
            ));
        }
        Self::full(mean, DMatrix::from_diagonal(&DVector::from_row_slice(variance)))
    }

    pub fn full(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::invalid("prior", "empty mean"));
        }
        if covariance.shape() != (n, n) {
            return Err(Error::LengthMismatch(format!(
                "prior covariance is {:?}, expected {n}x{n}",
                covariance.shape()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior", "non-finite entry"));
        }
        factor_psd(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            floor: Vec::new(),
        })
    }

    /// Prior centred on a perturbed reference:
    /// `μ₀ = θ_ref + offset · diag(θ_ref) ε` with `ε ~ N(0, I)` and
    /// `Σ₀ = diag((rel_std · θ_ref)²)`.
    pub fn perturbed_reference(
        reference: &[f64],
        offset: f64,
        rel_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, Domain::PriorOffset, 0, 0);
        let mean = reference
            .iter()
            .map(|&t| {
                let eps: f64 = rng.sample(StandardNormal);
                t + offset * t * eps
            })
            .collect();
        let variance: Vec<f64> = reference.iter().map(|&t| (rel_std * t).powi(2)).collect();
        Self::diagonal(mean, &variance)
    }

    /// Sets floors to `fraction · |μ₀|` per entry.
    pub fn with_floor_fraction(mut self, fraction: f64) -> Self {
        self.floor = self.mean.iter().map(|m| fraction * m.abs()).collect();
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_floor(&self, theta: &mut [f64]) {
        for (v, f) in theta.iter_mut().zip(&self.floor) {
            if *v < *f {
                *v = *f;
            }
        }
    }

    /// Moment-matched log-normal counterpart: a Gaussian over `ln θ` whose
    /// exponential has this prior's mean and covariance. Requires a
    /// positive mean.
    pub fn to_log_space(&self) -> Result<Self> {
        if let Some(i) = self.mean.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::invalid(
                format!("prior.mean[{i}]"),
                "log-space parameterization needs a positive prior mean",
            ));
        }
        let n = self.dim();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            (1.0 + self.covariance[(i, j)] / (self.mean[i] * self.mean[j])).ln()
        });
        let mean = (0..n)
            .map(|i| self.mean[i].ln() - 0.5 * cov[(i, i)])
            .collect();
        Self::full(mean, cov)
    }
}

/// Returns `L` with `L Lᵀ = Σ`, accepting singular (PSD) matrices.
pub(crate) fn factor_psd(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let asym = (cov - cov.transpose()).amax();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::invalid("covariance", "matrix is not symmetric"));
    }
    if is_diagonal(cov) {
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let v = cov[(i, i)];
            if v < 0.0 {
                return Err(Error::invalid(
                    format!("covariance[{i}][{i}]"),
                    format!("negative variance {v}"),
                ));
            }
            l[(i, i)] = v.sqrt();
        }
        return Ok(l);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let lmax = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < -PSD_RTOL * lmax.max(1.0)) {
        return Err(Error::invalid(
            "covariance",
            format!("not positive semidefinite (min eigenvalue {})", eig.eigenvalues.min()),
        ));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.iter().enumerate().all(|(k, &v)| {
        let (i, j) = (k % m.nrows(), k / m.nrows());
        i == j || v == 0.0
    })
}

/// Draws `members` i.i.d. samples from the prior, one random stream per
/// member, and raises entries below the floor.
pub fn draw_prior_ensemble(prior: &PriorSpec, members: usize, seed: u64) -> Result<Ensemble> {
    if members < 2 {
        return Err(Error::invalid("ensemble size", format!("need at least 2 members, got {members}")));
    }
    let l = factor_psd(&prior.covariance)?;
    let p = prior.dim();
    let mean = DVector::from_column_slice(&prior.mean);
    let mut theta = DMatrix::zeros(p, members);
    for i in 0..members {
        let mut rng = rng::stream(seed, Domain::Prior, i as u64, 0);
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut col = &mean + &l * z;
        prior.apply_floor(col.as_mut_slice());
        theta.set_column(i, &col);
    }
    Ensemble::new(theta)
}
