//! Adaptive random-walk Metropolis updates and a finite-difference mode finder
//! used to start them.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{Cholesky, SymMatrix};
use crate::math::{exp, ln, powf, sqrt};

/// Acceptance rate the step-size adaptation aims for, by block dimension.
pub(crate) fn target_acceptance(dim: usize) -> f64 {
    if dim == 1 {
        0.44
    } else {
        0.3
    }
}

/// Robbins–Monro gain at adaptation step `t`.
fn gain(t: usize) -> f64 {
    powf(t as f64 + 1.0, -0.6)
}

/// Metropolis test for a log acceptance ratio.
pub(crate) fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || ln(rng.random::<f64>()) < log_ratio
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Counter {
    pub accepted: u64,
    pub proposed: u64,
}

impl Counter {
    pub(crate) fn record(&mut self, ok: bool) {
        self.proposed += 1;
        self.accepted += ok as u64;
    }

    pub(crate) fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Independent scalar random walks sharing one acceptance counter, each with
/// its own adapted step.
#[derive(Clone, Debug)]
pub(crate) struct ScalarSteps {
    log_step: Vec<f64>,
    updates: Vec<usize>,
    pub counter: Counter,
}

impl ScalarSteps {
    pub(crate) fn new(n: usize, step: f64) -> Self {
        Self { log_step: alloc::vec![ln(step); n], updates: alloc::vec![0; n], counter: Counter::default() }
    }

    pub(crate) fn propose<R: Rng + ?Sized>(&self, j: usize, x: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        x + exp(self.log_step[j]) * z
    }

    pub(crate) fn update(&mut self, j: usize, ok: bool, adapt: bool) {
        self.counter.record(ok);
        if adapt {
            let t = self.updates[j];
            self.log_step[j] += gain(t) * (ok as u8 as f64 - target_acceptance(1));
            self.updates[j] += 1;
        }
    }
}

/// Correlated Gaussian random walk over a block, with a Robbins–Monro scale
/// and a covariance learned from burn-in draws.
#[derive(Clone, Debug)]
pub(crate) struct BlockWalk {
    chol: Cholesky,
    log_scale: f64,
    updates: usize,
    seen: usize,
    mean: Vec<f64>,
    m2: SymMatrix,
    pub counter: Counter,
}

impl BlockWalk {
    /// `cov` should approximate the posterior covariance of the block.
    pub(crate) fn new(cov: &SymMatrix) -> Self {
        let d = cov.dim();
        let chol = cov
            .cholesky()
            .unwrap_or_else(|_| SymMatrix::diagonal(&alloc::vec![0.01; d]).cholesky().expect("positive diagonal"));
        Self {
            chol,
            log_scale: ln(2.38 / sqrt(d as f64)),
            updates: 0,
            seen: 0,
            mean: alloc::vec![0.0; d],
            m2: SymMatrix::zeros(d),
            counter: Counter::default(),
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
        let s = exp(self.log_scale);
        x.iter().zip(self.chol.mul_lower(&z)).map(|(a, b)| a + s * b).collect()
    }

    pub(crate) fn update(&mut self, ok: bool, adapt: bool) {
        self.counter.record(ok);
        if adapt {
            self.log_scale += gain(self.updates) * (ok as u8 as f64 - target_acceptance(self.dim()));
            self.updates += 1;
        }
    }

    /// Adds a burn-in draw to the running covariance estimate.
    pub(crate) fn observe(&mut self, x: &[f64]) {
        self.seen += 1;
        let n = self.seen as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.mean.iter_mut().zip(&delta).for_each(|(m, d)| *m += d / n);
        let d = self.dim();
        for a in 0..d {
            for b in 0..=a {
                let v = delta[a] * (x[b] - self.mean[b]);
                self.m2.add(a, b, v);
                if a != b {
                    self.m2.add(b, a, v);
                }
            }
        }
    }

    /// Switches to the learned covariance once enough draws have been seen.
    pub(crate) fn refresh(&mut self) {
        let d = self.dim();
        if self.seen < 20 * d + 20 {
            return;
        }
        let mut cov = self.m2.scaled(1.0 / (self.seen - 1) as f64);
        let eps = (1e-8 * cov.trace() / d as f64).max(1e-14);
        for a in 0..d {
            cov.add(a, a, eps);
        }
        if let Ok(c) = cov.cholesky() {
            self.chol = c;
        }
    }
}

/// Central-difference gradient and Hessian of `f` at `x`.
fn fd_derivatives(f: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64) -> (Vec<f64>, SymMatrix) {
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let at = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s * h[i];
        }
        f(&y)
    };
    let mut g = alloc::vec![0.0; d];
    let mut hess = SymMatrix::zeros(d);
    for i in 0..d {
        let (p, m) = (at(&[(i, 1.0)]), at(&[(i, -1.0)]));
        g[i] = (p - m) / (2.0 * h[i]);
        hess.set(i, i, (p - 2.0 * fx + m) / (h[i] * h[i]));
        for j in 0..i {
            let v = (at(&[(i, 1.0), (j, 1.0)]) - at(&[(i, 1.0), (j, -1.0)]) - at(&[(i, -1.0), (j, 1.0)])
                + at(&[(i, -1.0), (j, -1.0)]))
                / (4.0 * h[i] * h[j]);
            hess.set(i, j, v);
            hess.set(j, i, v);
        }
    }
    (g, hess)
}

/// Damped Newton ascent of `f` from `x0` with numerical derivatives.
///
/// Returns the point reached and, when the negated Hessian there is
/// positive definite, its inverse.
pub(crate) fn block_mode(f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> (Vec<f64>, Option<SymMatrix>) {
    let d = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, None);
    }
    for _ in 0..60 {
        let (g, hess) = fd_derivatives(f, &x, fx);
        let neg = hess.scaled(-1.0);
        let scale = neg.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let mut lambda = 0.0;
        let mut step = None;
        for _ in 0..12 {
            let mut m = neg.clone();
            for a in 0..d {
                m.add(a, a, lambda);
            }
            if let Ok(c) = m.cholesky() {
                step = Some(c.solve(&g));
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 * scale } else { lambda * 10.0 };
        }
        let Some(step) = step else { break };
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let fc = f(&cand);
            if fc.is_finite() && fc >= fx {
                let size = step.iter().fold(0.0f64, |m, s| m.max((alpha * s).abs()));
                x = cand;
                let gain = fc - fx;
                fx = fc;
                moved = size > 1e-9 && gain > 1e-12 * (1.0 + fx.abs());
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (_, hess) = fd_derivatives(f, &x, fx);
    let cov = hess.scaled(-1.0).cholesky().ok().map(|c| c.inverse());
    (x, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn newton_finds_quadratic_mode_and_covariance() {
        let f = |x: &[f64]| -0.5 * (2.0 * (x[0] - 1.0) * (x[0] - 1.0) + 2.0 * (x[0] - 1.0) * (x[1] + 2.0) + 3.0 * (x[1] + 2.0) * (x[1] + 2.0));
        let (x, cov) = block_mode(&f, vec![10.0, 10.0]);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6);
        let cov = cov.unwrap();
        // Inverse of [[2, 1], [1, 3]] is [[0.6, -0.2], [-0.2, 0.4]].
        assert!((cov.get(0, 0) - 0.6).abs() < 1e-4 && (cov.get(0, 1) + 0.2).abs() < 1e-4);
    }

    #[test]
    fn newton_handles_non_quadratic_concave_targets() {
        // Poisson log likelihood of counts summing to 30 over 10 units.
        let f = |x: &[f64]| 30.0 * x[0] - 10.0 * exp(x[0]);
        let (x, cov) = block_mode(&f, vec![-3.0]);
        assert!((x[0] - ln(3.0)).abs() < 1e-6);
        assert!((cov.unwrap().get(0, 0) - 1.0 / 30.0).abs() < 1e-5);
    }

    #[test]
    fn counter_rates() {
        let mut c = Counter::default();
        assert_eq!(c.rate(), 0.0);
        c.record(true);
        c.record(false);
        assert_eq!(c.rate(), 0.5);
    }
}
