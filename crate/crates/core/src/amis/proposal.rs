//! Multivariate Gaussian and Student-t proposal distributions.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::linalg::{Cholesky, SymMatrix};
use crate::math::{ln, ln_1p, ln_gamma, sqrt, LN_2PI};

use super::AmisError;

/// Smallest eigenvalue a proposal covariance may have.
pub const MIN_EIGENVALUE: f64 = 1e-10;
/// Absolute floor on the adaptation ridge, so a covariance that collapses to
/// zero still yields a proper proposal.
pub const RIDGE_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProposalFamily {
    Gaussian,
    StudentT { df: f64 },
}

impl ProposalFamily {
    /// Heavy-tailed default.
    pub const STUDENT_T: Self = ProposalFamily::StudentT { df: 3.0 };
}

/// One completed stage: the proposal it sampled from and how many draws.
#[derive(Clone, Debug, PartialEq)]
pub struct StageProposal {
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalState {
    pub family: ProposalFamily,
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    pub history: Vec<StageProposal>,
}

impl ProposalState {
    pub fn new(family: ProposalFamily, mean: Vec<f64>, covariance: SymMatrix) -> Result<Self, AmisError> {
        if mean.len() != covariance.dim() || mean.is_empty() {
            return Err(AmisError::DimensionMismatch { expected: mean.len(), found: covariance.dim() });
        }
        if mean.iter().chain(covariance.as_slice()).any(|v| !v.is_finite()) {
            return Err(AmisError::InvalidProposal("non-finite mean or covariance"));
        }
        if let ProposalFamily::StudentT { df } = family {
            if !(df > 0.0) {
                return Err(AmisError::InvalidProposal("degrees of freedom must be positive"));
            }
        }
        if !covariance.is_symmetric(1e-12 * (1.0 + covariance.trace().abs())) {
            return Err(AmisError::InvalidProposal("covariance is not symmetric"));
        }
        if covariance.cholesky().is_err() || covariance.min_eigenvalue() <= MIN_EIGENVALUE {
            return Err(AmisError::InvalidProposal("covariance is not positive definite"));
        }
        Ok(Self { family, mean, covariance, history: Vec::new() })
    }

    pub fn gaussian(mean: Vec<f64>, covariance: SymMatrix) -> Result<Self, AmisError> {
        Self::new(ProposalFamily::Gaussian, mean, covariance)
    }

    /// Diagonal covariance with the given variances.
    pub fn diagonal(family: ProposalFamily, mean: Vec<f64>, variances: &[f64]) -> Result<Self, AmisError> {
        Self::new(family, mean, SymMatrix::diagonal(variances))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn density(&self) -> Result<ProposalDensity, AmisError> {
        ProposalDensity::new(self.family, self.mean.clone(), &self.covariance)
    }
}

/// A proposal ready for sampling and density evaluation.
#[derive(Clone, Debug)]
pub(crate) struct ProposalDensity {
    family: ProposalFamily,
    mean: Vec<f64>,
    chol: Cholesky,
    ln_norm: f64,
}

impl ProposalDensity {
    pub(crate) fn new(family: ProposalFamily, mean: Vec<f64>, covariance: &SymMatrix) -> Result<Self, AmisError> {
        let chol = covariance.cholesky().map_err(|_| AmisError::InvalidProposal("covariance is not positive definite"))?;
        let d = mean.len() as f64;
        let ln_norm = match family {
            ProposalFamily::Gaussian => -0.5 * (d * LN_2PI + chol.ln_det()),
            ProposalFamily::StudentT { df } => {
                ln_gamma(0.5 * (df + d)) - ln_gamma(0.5 * df)
                    - 0.5 * d * ln(df * core::f64::consts::PI)
                    - 0.5 * chol.ln_det()
            }
        };
        Ok(Self { family, mean, chol, ln_norm })
    }

    pub(crate) fn ln_density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let q = self.chol.inv_quad_form(&diff);
        match self.family {
            ProposalFamily::Gaussian => self.ln_norm - 0.5 * q,
            ProposalFamily::StudentT { df } => self.ln_norm - 0.5 * (df + self.mean.len() as f64) * ln_1p(q / df),
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        let mut x = self.chol.mul_lower(&z);
        if let ProposalFamily::StudentT { df } = self.family {
            let chi2 = ChiSquared::new(df).expect("positive degrees of freedom").sample(rng);
            let s = sqrt(df / chi2);
            x.iter_mut().for_each(|v| *v *= s);
        }
        x.iter_mut().zip(&self.mean).for_each(|(v, m)| *v += m);
        x
    }
}

/// Weighted mean and covariance `Σ w (x − m)(x − m)ᵀ / Σ w`.
pub fn weighted_moments(samples: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, SymMatrix) {
    let d = samples.first().map_or(0, |s| s.len());
    let total: f64 = weights.iter().sum();
    let mut mean = alloc::vec![0.0; d];
    for (x, &w) in samples.iter().zip(weights) {
        if w > 0.0 {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += w * v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = SymMatrix::zeros(d);
    for (x, &w) in samples.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov.add(a, b, w * da * (x[b] - mean[b]));
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov.get(a, b) / total;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    (mean, cov)
}

/// Ridge added to an adapted covariance: `1e-6 · trace / dim`, at least [`RIDGE_FLOOR`].
pub fn ridge(cov: &SymMatrix) -> f64 {
    (1e-6 * cov.trace() / cov.dim() as f64).max(RIDGE_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let bad = SymMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(ProposalState::gaussian(vec![0.0, 0.0], bad).is_err());
        assert!(ProposalState::gaussian(vec![0.0], SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        let cov = SymMatrix::from_row_major(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let d = ProposalDensity::new(ProposalFamily::Gaussian, vec![1.0, -1.0], &cov).unwrap();
        let det: f64 = 2.0 - 0.25;
        let x = [0.3, 0.2];
        let (a, b) = (x[0] - 1.0, x[1] + 1.0);
        let q = (1.0 * a * a - 2.0 * 0.5 * a * b + 2.0 * b * b) / det;
        let expect = -LN_2PI - 0.5 * ln(det) - 0.5 * q;
        assert!((d.ln_density(&x) - expect).abs() < 1e-12);
    }

    #[test]
    fn student_t_density_is_normalized_in_one_dimension() {
        let d = ProposalDensity::new(ProposalFamily::STUDENT_T, vec![0.5], &SymMatrix::diagonal(&[0.7])).unwrap();
        let h = 0.01;
        let total: f64 = (-400_000..400_000).map(|i| crate::math::exp(d.ln_density(&[0.5 + i as f64 * h])) * h).sum();
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sampling_reproduces_moments() {
        let cov = SymMatrix::from_row_major(2, vec![1.0, 0.6, 0.6, 2.0]).unwrap();
        let d = ProposalDensity::new(ProposalFamily::Gaussian, vec![3.0, -2.0], &cov).unwrap();
        let mut rng = stream(11, 0);
        let xs: Vec<Vec<f64>> = (0..40_000).map(|_| d.sample(&mut rng)).collect();
        let (m, c) = weighted_moments(&xs, &vec![1.0; xs.len()]);
        assert!((m[0] - 3.0).abs() < 0.03 && (m[1] + 2.0).abs() < 0.03);
        assert!((c.get(0, 1) - 0.6).abs() < 0.05 && (c.get(1, 1) - 2.0).abs() < 0.08);
    }

    #[test]
    fn weighted_moments_by_direct_summation() {
        let xs = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 1.0], vec![-1.0, 3.0], vec![4.0, 0.5]];
        let w = [0.1, 0.3, 0.2, 0.15, 0.25];
        let (m, c) = weighted_moments(&xs, &w);
        let mx: f64 = xs.iter().zip(&w).map(|(x, w)| w * x[0]).sum();
        let my: f64 = xs.iter().zip(&w).map(|(x, w)| w * x[1]).sum();
        let cxy: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x[0] - mx) * (x[1] - my)).sum();
        let cyy: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x[1] - my) * (x[1] - my)).sum();
        assert!((m[0] - mx).abs() < 1e-12 && (m[1] - my).abs() < 1e-12);
        assert!((c.get(0, 1) - cxy).abs() < 1e-12 && (c.get(1, 1) - cyy).abs() < 1e-12);
        assert_eq!(c.get(0, 1), c.get(1, 0));
    }
}
