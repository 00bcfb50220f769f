//! Plain (mu/mu_w, lambda)-CMA-ES with an ask/tell interface.
//!
//! The caller supplies a ranking score per sample (higher is better), so the
//! same core serves fitness maximization and improvement-ranked emitters.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmaError {
    #[error("expected {expected} samples and scores, got {samples} samples and {scores} scores")]
    Mismatch { expected: usize, samples: usize, scores: usize },
    #[error("sample {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("covariance matrix became numerically invalid")]
    Numerical,
}

/// Strategy constants for a given dimension and population size.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// Expected norm of an `n`-dimensional standard normal vector.
    pub chi_n: f64,
}

impl StrategyParams {
    pub fn new(dim: usize, lambda: usize) -> Self {
        assert!(dim >= 1 && lambda >= 2, "need dim >= 1 and lambda >= 2");
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| math::ln((lambda as f64 + 1.0) / 2.0) - math::ln(i as f64))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (math::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
        let chi_n = math::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self { dim, lambda, mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

#[derive(Debug, Clone)]
pub struct CmaEs {
    params: StrategyParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns).
    basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    axis_scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: u64,
    eigen_generation: u64,
    eigen_gap: u64,
}

impl CmaEs {
    pub fn new(mean: &[f64], sigma: f64, lambda: usize) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
        let params = StrategyParams::new(mean.len(), lambda);
        let n = mean.len();
        let gap = 1.0 / ((params.c_1 + params.c_mu) * n as f64 * 10.0);
        Self {
            mean: DVector::from_column_slice(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            axis_scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            eigen_generation: 0,
            eigen_gap: math::floor(gap).max(1.0) as u64,
            params,
        }
    }

    pub fn params(&self) -> &StrategyParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Smallest and largest eigenvalue of the covariance as of the last
    /// decomposition.
    pub fn eigen_range(&self) -> (f64, f64) {
        let min = self.axis_scales.min();
        let max = self.axis_scales.max();
        (min * min, max * max)
    }

    /// True when the step size or the covariance has collapsed or blown up.
    pub fn is_degenerate(&self) -> bool {
        let (lo, hi) = self.eigen_range();
        !(self.sigma.is_finite() && self.sigma > 0.0)
            || !(lo > 0.0 && hi.is_finite())
            || hi / lo > 1.0e14
            || self.sigma * math::sqrt(hi) < 1.0e-12
            || self.sigma * math::sqrt(lo) > 1.0e8
    }

    /// Draws `lambda` samples from `N(mean, sigma^2 C)`.
    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<Vec<f64>>, CmaError> {
        if self.generation - self.eigen_generation >= self.eigen_gap {
            self.decompose()?;
        }
        let n = self.dim();
        let mut out = Vec::with_capacity(self.lambda());
        let mut z = DVector::zeros(n);
        for _ in 0..self.lambda() {
            for k in 0..n {
                z[k] = rng.sample::<f64, _>(StandardNormal) * self.axis_scales[k];
            }
            let y = &self.basis * &z;
            out.push((&self.mean + y * self.sigma).as_slice().to_vec());
        }
        Ok(out)
    }

    /// Updates the distribution from samples ranked by `scores` (descending,
    /// ties keep sample order).
    pub fn tell(&mut self, samples: &[Vec<f64>], scores: &[f64]) -> Result<(), CmaError> {
        let lambda = self.lambda();
        if samples.len() != lambda || scores.len() != lambda {
            return Err(CmaError::Mismatch { expected: lambda, samples: samples.len(), scores: scores.len() });
        }
        let n = self.dim();
        for (index, s) in samples.iter().enumerate() {
            if s.len() != n {
                return Err(CmaError::Dimension { index, expected: n, got: s.len() });
            }
        }
        let order = rank_descending(scores);
        let p = &self.params;

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&samples[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let mut coef = self.basis.tr_mul(&y_w);
        for k in 0..n {
            coef[k] /= self.axis_scales[k];
        }
        let c_inv_sqrt_y = &self.basis * coef;

        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + c_inv_sqrt_y * math::sqrt(cs * (2.0 - cs) * p.mu_eff);
        let ps_norm = self.p_sigma.norm();
        let gen = (self.generation + 1) as f64;
        let h_sigma = ps_norm / math::sqrt(1.0 - math::pow(1.0 - cs, 2.0 * gen))
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = p.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * math::sqrt(cc * (2.0 - cc) * p.mu_eff));

        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let decay = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
        self.cov *= decay;
        self.cov.ger(p.c_1, &self.p_c, &self.p_c, 1.0);
        for (w, y) in p.weights.iter().zip(&steps) {
            self.cov.ger(p.c_mu * w, y, y, 1.0);
        }
        symmetrize(&mut self.cov);

        self.sigma *= math::exp((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0));
        self.generation += 1;

        if !self.sigma.is_finite() || self.cov.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::Numerical);
        }
        if self.generation - self.eigen_generation >= self.eigen_gap {
            self.decompose()?;
        }
        Ok(())
    }

    /// Refreshes the eigendecomposition, lifting non-positive eigenvalues so
    /// the covariance stays positive definite.
    pub fn decompose(&mut self) -> Result<(), CmaError> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut values = eig.eigenvalues;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::Numerical);
        }
        let max = values.max();
        if !(max > 0.0) {
            return Err(CmaError::Numerical);
        }
        let floor = max * 1.0e-14;
        let mut repaired = false;
        for v in values.iter_mut() {
            if *v < floor {
                *v = floor;
                repaired = true;
            }
        }
        self.basis = eig.eigenvectors;
        if repaired {
            let mut scaled = self.basis.clone();
            for (k, mut col) in scaled.column_iter_mut().enumerate() {
                col *= values[k];
            }
            self.cov = &scaled * self.basis.transpose();
            symmetrize(&mut self.cov);
        }
        self.axis_scales = values.map(math::sqrt);
        self.eigen_generation = self.generation;
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Indices sorted by score, best first; stable for ties.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}
