//! Mode finding and Laplace/exact integration of the latent field.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{ArrowFactor, ArrowMatrix, SymMatrix};
use crate::math::{exp, ln, ln_gamma, ln_rising_scaled, logistic, softplus, sqrt, LN_2PI};

use super::marginal::{linspace, MarginalGrid, Scale};
use super::{CoefficientMarginals, ConditionalFit, FitError, FitOptions, LatentGaussianSubproblem, Marginal, ObservationModel};

pub const MAX_NEWTON_ITERATIONS: usize = 50;
pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const MAX_HALVINGS: usize = 10;

/// A Newton direction this small is treated as converged even when rounding
/// prevents any measurable improvement of the objective.
const STALL_TOLERANCE: f64 = 1e-6;
/// Likewise when the quadratic model predicts a gain below rounding of the
/// objective, as happens along very flat directions.
const STALL_GAIN: f64 = 1e-10;

/// `½ gᵀ H⁻¹ g`, the improvement a full Newton step predicts.
fn predicted_gain(grad: &[f64], delta: &[f64]) -> f64 {
    0.5 * grad.iter().zip(delta).map(|(g, d)| g * d).sum::<f64>()
}

enum Obs<'a> {
    Gaussian(&'a [f64]),
    Poisson,
    NegBin { ln_k: &'a [f64], k: Vec<f64> },
}

/// `log π(y | κ) + log π(κ)` for a subproblem with fixed nuisance values,
/// as a function of the stacked latent vector `κ = (β, u)`.
pub struct PenalizedObjective<'a> {
    sub: &'a LatentGaussianSubproblem,
    obs: Obs<'a>,
    constant: f64,
    prior_mean: Vec<f64>,
    prior_precision: Vec<f64>,
    p: usize,
    m: usize,
}

impl<'a> PenalizedObjective<'a> {
    pub fn new(sub: &'a LatentGaussianSubproblem) -> Result<Self, FitError> {
        sub.validate()?;
        let p = sub.fixed.cols();
        let m = sub.random.as_ref().map_or(0, |r| r.n_levels);
        let y = &sub.response;
        let (obs, mut constant) = match &sub.observation {
            ObservationModel::Gaussian { precision } => {
                (Obs::Gaussian(precision), precision.iter().map(|&t| 0.5 * (ln(t) - LN_2PI)).sum::<f64>())
            }
            ObservationModel::Poisson => (Obs::Poisson, y.iter().map(|&v| -ln_gamma(v + 1.0)).sum()),
            ObservationModel::NegativeBinomial { ln_size } => {
                let k: Vec<f64> = ln_size.iter().map(|&l| exp(l)).collect();
                let c = y.iter().zip(&k).map(|(&v, &kk)| ln_rising_scaled(v, kk) - ln_gamma(v + 1.0)).sum();
                (Obs::NegBin { ln_k: ln_size, k }, c)
            }
        };
        let mut prior_mean: Vec<f64> = sub.fixed_prior.iter().map(|q| q.mean).collect();
        let mut prior_precision: Vec<f64> = sub.fixed_prior.iter().map(|q| q.precision).collect();
        if let Some(r) = &sub.random {
            prior_mean.resize(p + m, 0.0);
            prior_precision.extend((0..m).map(|j| r.level_precision(j)));
        }
        constant += prior_precision.iter().map(|&q| 0.5 * (ln(q) - LN_2PI)).sum::<f64>();
        Ok(Self { sub, obs, constant, prior_mean, prior_precision, p, m })
    }

    pub fn dim(&self) -> usize {
        self.p + self.m
    }

    /// Prior mean of the latent vector, the Newton starting point.
    pub fn start(&self) -> Vec<f64> {
        self.prior_mean.clone()
    }

    fn slope(&self, i: usize) -> f64 {
        self.sub.random.as_ref().and_then(|r| r.covariate.as_ref()).map_or(1.0, |c| c[i])
    }

    fn eta(&self, kappa: &[f64], i: usize) -> f64 {
        let sub = self.sub;
        let mut e: f64 = sub.fixed.row(i).iter().zip(&kappa[..self.p]).map(|(x, b)| x * b).sum();
        if let Some(o) = &sub.offset {
            e += o[i];
        }
        if let Some(r) = &sub.random {
            e += self.slope(i) * kappa[self.p + r.level[i]];
        }
        e
    }

    /// Non-constant part of the log likelihood of observation `i`, its first
    /// derivative and its negated second derivative in `η`.
    #[inline]
    fn obs_terms(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        let y = self.sub.response[i];
        match &self.obs {
            Obs::Gaussian(t) => {
                let r = y - eta;
                (-0.5 * t[i] * r * r, t[i] * r, t[i])
            }
            Obs::Poisson => {
                let mu = exp(eta);
                (y * eta - mu, y - mu, mu)
            }
            Obs::NegBin { ln_k, k } => {
                let d = eta - ln_k[i];
                let s = logistic(d);
                let ky = k[i] + y;
                (y * eta - ky * softplus(d), y - ky * s, ky * s * (1.0 - s))
            }
        }
    }

    pub fn value(&self, kappa: &[f64]) -> f64 {
        let n = self.sub.n_obs();
        let ll: f64 = (0..n).map(|i| self.obs_terms(i, self.eta(kappa, i)).0).sum();
        let lp: f64 = kappa
            .iter()
            .zip(&self.prior_mean)
            .zip(&self.prior_precision)
            .map(|((k, m), q)| -0.5 * q * (k - m) * (k - m))
            .sum();
        self.constant + ll + lp
    }

    pub fn gradient(&self, kappa: &[f64]) -> Vec<f64> {
        self.local_quadratic(kappa).1
    }

    /// As [`Self::local_quadratic`], with coordinate `pin` (a fixed
    /// coefficient) held constant: its gradient entry is zero and its
    /// Hessian row and column are those of the identity, so Newton steps
    /// leave it alone and the log determinant is that of the other
    /// coordinates.
    fn pinned_quadratic(&self, kappa: &[f64], pin: Option<usize>) -> (f64, Vec<f64>, ArrowMatrix) {
        let (value, mut grad, mut h) = self.local_quadratic(kappa);
        if let Some(a) = pin {
            grad[a] = 0.0;
            for b in 0..self.p {
                h.fixed.set(a, b, 0.0);
                h.fixed.set(b, a, 0.0);
            }
            h.fixed.set(a, a, 1.0);
            for j in 0..self.m {
                h.border[j * self.p + a] = 0.0;
            }
        }
        (value, grad, h)
    }

    /// Value, gradient and negated Hessian at `kappa`.
    fn local_quadratic(&self, kappa: &[f64]) -> (f64, Vec<f64>, ArrowMatrix) {
        let (p, m) = (self.p, self.m);
        let sub = self.sub;
        let mut value = self.constant;
        let mut grad = vec![0.0; p + m];
        let mut h = ArrowMatrix::zeros(p, m);
        for i in 0..sub.n_obs() {
            let eta = self.eta(kappa, i);
            let (l, d1, w) = self.obs_terms(i, eta);
            value += l;
            let x = sub.fixed.row(i);
            for a in 0..p {
                grad[a] += d1 * x[a];
                let wa = w * x[a];
                for b in 0..=a {
                    h.fixed.add(a, b, wa * x[b]);
                }
            }
            if let Some(r) = &sub.random {
                let j = r.level[i];
                let c = self.slope(i);
                grad[p + j] += d1 * c;
                h.diag[j] += w * c * c;
                let row = &mut h.border[j * p..(j + 1) * p];
                for a in 0..p {
                    row[a] += w * c * x[a];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                let v = h.fixed.get(a, b);
                h.fixed.set(b, a, v);
            }
        }
        for (idx, (&k, (&mu, &q))) in kappa.iter().zip(self.prior_mean.iter().zip(&self.prior_precision)).enumerate() {
            value -= 0.5 * q * (k - mu) * (k - mu);
            grad[idx] -= q * (k - mu);
            if idx < p {
                h.fixed.add(idx, idx, q);
            } else {
                h.diag[idx - p] += q;
            }
        }
        (value, grad, h)
    }
}

fn factor(h: &ArrowMatrix) -> Result<ArrowFactor, FitError> {
    h.factor().map_err(|e| FitError::Singular { pivot: e.pivot })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Assembles the fit from the mode: the Laplace identity
/// `log π(y) = log π(y|κ̂) + log π(κ̂) + (d/2) log 2π − ½ log det H`,
/// exact when the log likelihood is quadratic.
fn finish(
    obj: &PenalizedObjective,
    kappa: &[f64],
    iterations: usize,
    options: FitOptions,
) -> Result<ConditionalFit, FitError> {
    let (value, _, h) = obj.local_quadratic(kappa);
    let fac = factor(&h)?;
    let d = obj.dim() as f64;
    let log_ml = value + 0.5 * d * LN_2PI - 0.5 * fac.ln_det();
    if !log_ml.is_finite() {
        return Err(FitError::NonFinite);
    }
    let sub = obj.sub;
    let mut marginals = Vec::with_capacity(obj.p);
    let var: Vec<f64> = if options.random_effect_marginals && obj.m > 0 {
        fac.inverse_diagonal()
    } else {
        fac.fixed_covariance().diag()
    };
    let correct = options.coefficients == CoefficientMarginals::Laplace && !matches!(obj.obs, Obs::Gaussian(_));
    for (a, name) in sub.fixed.names().iter().enumerate() {
        let gaussian = Marginal::Gaussian { mean: kappa[a], sd: sqrt(var[a]) };
        let m = if correct { pinned_marginal(obj, kappa, &fac, a).map_or(gaussian, Marginal::Grid) } else { gaussian };
        marginals.push((name.clone(), m));
    }
    if options.random_effect_marginals {
        if let Some(r) = &sub.random {
            for j in 0..obj.m {
                let name: Arc<str> = format!("{}[{}]", r.name, j + 1).into();
                marginals.push((name, Marginal::Gaussian { mean: kappa[obj.p + j], sd: sqrt(var[obj.p + j]) }));
            }
        }
    }
    Ok(ConditionalFit {
        log_marginal_likelihood: log_ml,
        parts: vec![log_ml],
        marginals,
        newton_iterations: iterations,
        converged: true,
    })
}

/// Offsets from the mode, in Gaussian-approximation standard deviations,
/// at which a coefficient is pinned.
pub const CORRECTION_NODES: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
/// Half-width, in the same units, of the tabulated corrected marginal
/// around its shifted centre.
const CORRECTION_SPAN: f64 = 7.0;
const CORRECTION_POINTS: usize = 141;

/// Laplace marginal of fixed coefficient `a`.
///
/// With `β_a = b` pinned, the other latent values are re-optimized and
/// `log π̃(b) = log π(y, κ̂(b)) − ½ log det H₋ₐ(b)`. The difference from the
/// Gaussian log density, in standardized `z`, is fitted by a least-squares
/// cubic through [`CORRECTION_NODES`] and tabulated. Returns `None` when a
/// pinned fit fails or the result does not decay inside the tabulated range.
fn pinned_marginal(obj: &PenalizedObjective, mode: &[f64], fac: &ArrowFactor, a: usize) -> Option<MarginalGrid> {
    let mut unit = vec![0.0; mode.len()];
    unit[a] = 1.0;
    let col = fac.solve(&unit);
    let sd = sqrt(col[a]);
    if !(sd > 0.0 && sd.is_finite()) {
        return None;
    }
    let mut excess = [0.0; CORRECTION_NODES.len()];
    for (e, &z) in excess.iter_mut().zip(&CORRECTION_NODES) {
        let shift = z * sd;
        let start: Vec<f64> = mode.iter().zip(&col).map(|(k, c)| k + c / col[a] * shift).collect();
        let (kappa, _) = find_mode_from(obj, start, Some(a)).ok()?;
        let (value, _, h) = obj.pinned_quadratic(&kappa, Some(a));
        *e = value - 0.5 * factor(&h).ok()?.ln_det() + 0.5 * z * z;
    }
    if excess.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let c = cubic_fit(&CORRECTION_NODES, &excess)?;
    // The cubic is trusted between the outer nodes only; beyond them the
    // excess continues along its tangent, so the tails stay Gaussian.
    let edge = CORRECTION_NODES[CORRECTION_NODES.len() - 1];
    let log_density = |z: f64| {
        let t = z.clamp(-edge, edge);
        let poly = c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let slope = c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]);
        -0.5 * z * z + poly + slope * (z - t)
    };
    // The linear term is, to first order, the shift of the peak.
    let centre = c[1].clamp(-CORRECTION_NODES[6], CORRECTION_NODES[6]);
    let z = linspace(centre - CORRECTION_SPAN, centre + CORRECTION_SPAN, CORRECTION_POINTS);
    let logs: Vec<f64> = z.iter().map(|&v| log_density(v)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let density: Vec<f64> = logs.iter().map(|l| exp(l - top)).collect();
    if density[0] > 1e-4 || density[CORRECTION_POINTS - 1] > 1e-4 {
        return None;
    }
    let x: Vec<f64> = z.iter().map(|v| mode[a] + v * sd).collect();
    MarginalGrid::new(x, density, Scale::Identity).ok().map(MarginalGrid::normalized)
}

/// Least-squares coefficients of `c0 + c1 z + c2 z² + c3 z³`.
fn cubic_fit(z: &[f64], v: &[f64]) -> Option<[f64; 4]> {
    let mut xtx = SymMatrix::zeros(4);
    let mut xtv = [0.0; 4];
    for (&zi, &vi) in z.iter().zip(v) {
        let row = [1.0, zi, zi * zi, zi * zi * zi];
        for r in 0..4 {
            xtv[r] += row[r] * vi;
            for c in 0..4 {
                xtx.add(r, c, row[r] * row[c]);
            }
        }
    }
    let s = xtx.cholesky().ok()?.solve(&xtv);
    Some([s[0], s[1], s[2], s[3]])
}

/// Exact conjugate integration for a Gaussian likelihood with known precisions.
pub fn fit_gaussian_exact(sub: &LatentGaussianSubproblem, options: FitOptions) -> Result<ConditionalFit, FitError> {
    if !matches!(sub.observation, ObservationModel::Gaussian { .. }) {
        return Err(FitError::InvalidInput("exact integration needs a Gaussian likelihood"));
    }
    if sub.hyperparameter.is_some() {
        return Err(FitError::InvalidInput("free hyperparameter present; use the quadrature fitter"));
    }
    let obj = PenalizedObjective::new(sub)?;
    let start = obj.start();
    let (_, grad, h) = obj.local_quadratic(&start);
    let delta = factor(&h)?.solve(&grad);
    let mode: Vec<f64> = start.iter().zip(&delta).map(|(a, b)| a + b).collect();
    finish(&obj, &mode, 0, options)
}

/// Newton iterations with step halving, from the prior mean.
pub(crate) fn find_mode(obj: &PenalizedObjective) -> Result<(Vec<f64>, usize), FitError> {
    find_mode_from(obj, obj.start(), None)
}

fn find_mode_from(obj: &PenalizedObjective, start: Vec<f64>, pin: Option<usize>) -> Result<(Vec<f64>, usize), FitError> {
    let mut kappa = start;
    let mut current = obj.value(&kappa);
    if !current.is_finite() {
        return Err(FitError::NonFinite);
    }
    let mut last_update = f64::INFINITY;
    for iter in 1..=MAX_NEWTON_ITERATIONS {
        let (_, grad, h) = obj.pinned_quadratic(&kappa, pin);
        let delta = factor(&h)?.solve(&grad);
        let full = max_abs(&delta);
        if !full.is_finite() {
            return Err(FitError::NonFinite);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = kappa.iter().zip(&delta).map(|(k, d)| k + step * d).collect();
            let v = obj.value(&cand);
            if v.is_finite() && v >= current {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, v)) => {
                kappa = cand;
                current = v;
                last_update = step * full;
                if last_update < NEWTON_TOLERANCE {
                    return Ok((kappa, iter));
                }
            }
            None if full < STALL_TOLERANCE || predicted_gain(&grad, &delta) < STALL_GAIN * (1.0 + current.abs()) => {
                return Ok((kappa, iter))
            }
            None => return Err(FitError::Stalled { update: full }),
        }
    }
    Err(FitError::NotConverged { iterations: MAX_NEWTON_ITERATIONS, last_update })
}

/// Laplace approximation at the posterior mode of the latent field.
pub fn fit_laplace(sub: &LatentGaussianSubproblem, options: FitOptions) -> Result<ConditionalFit, FitError> {
    if sub.hyperparameter.is_some() {
        return Err(FitError::InvalidInput("free hyperparameter present; use the quadrature fitter"));
    }
    let obj = PenalizedObjective::new(sub)?;
    let (mode, iterations) = find_mode(&obj)?;
    finish(&obj, &mode, iterations, options)
}

/// Newton trace used to check that accepted steps never decrease the objective.
#[cfg(test)]
pub(crate) fn newton_trace(obj: &PenalizedObjective) -> Vec<f64> {
    let mut kappa = obj.start();
    let mut values = vec![obj.value(&kappa)];
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let (_, grad, h) = obj.local_quadratic(&kappa);
        let delta = factor(&h).unwrap().solve(&grad);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = kappa.iter().zip(&delta).map(|(k, d)| k + step * d).collect();
            let v = obj.value(&cand);
            if v.is_finite() && v >= *values.last().unwrap() {
                kappa = cand;
                values.push(v);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step * max_abs(&delta) < NEWTON_TOLERANCE {
            break;
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{RandomBlock, RandomPrecision};
    use crate::model::{Design, NormalPrior};
    use alloc::vec;
    use proptest::prelude::*;

    pub(crate) fn intercept_sub(y: Vec<f64>, observation: ObservationModel, prior_precision: f64) -> LatentGaussianSubproblem {
        let n = y.len();
        LatentGaussianSubproblem {
            name: "test".into(),
            response: y.into(),
            observation,
            offset: None,
            fixed: Design::intercept(n, "b0"),
            fixed_prior: vec![NormalPrior { mean: 0.0, precision: prior_precision }],
            random: None,
            hyperparameter: None,
        }
    }

    #[test]
    fn single_observation_conjugate_closed_form() {
        let sub = intercept_sub(vec![0.0], ObservationModel::Gaussian { precision: vec![1.0] }, 1.0);
        let fit = fit_gaussian_exact(&sub, FitOptions::default()).unwrap();
        assert!((fit.log_marginal_likelihood - (-0.5 * ln(4.0 * core::f64::consts::PI))).abs() < 1e-12);
        let m = fit.marginal("b0").unwrap();
        assert!(m.mean().abs() < 1e-15 && (m.sd() - sqrt(0.5)).abs() < 1e-12);
    }

    #[test]
    fn laplace_is_exact_for_gaussian_likelihood() {
        let y = vec![0.3, -1.2, 2.5, 0.9, 1.1];
        let x = vec![0.1, 0.5, 0.9, 0.2, 0.7];
        let ones = vec![1.0; 5];
        let mut sub = intercept_sub(y, ObservationModel::Gaussian { precision: vec![2.0, 0.5, 1.0, 3.0, 1.5] }, 0.01);
        sub.fixed = Design::from_columns(vec!["b0".into(), "b1".into()], &[&ones, &x]).unwrap();
        sub.fixed_prior = vec![NormalPrior { mean: 0.5, precision: 0.01 }, NormalPrior { mean: 0.0, precision: 0.2 }];
        let exact = fit_gaussian_exact(&sub, FitOptions::default()).unwrap();
        let laplace = fit_laplace(&sub, FitOptions::default()).unwrap();
        assert!((exact.log_marginal_likelihood - laplace.log_marginal_likelihood).abs() < 1e-10);
        for ((_, a), (_, b)) in exact.marginals.iter().zip(&laplace.marginals) {
            assert!((a.mean() - b.mean()).abs() < 1e-10 && (a.sd() - b.sd()).abs() < 1e-10);
        }
    }

    #[test]
    fn all_zero_negbin_counts_stay_finite() {
        let sub = intercept_sub(vec![0.0; 8], ObservationModel::NegativeBinomial { ln_size: vec![ln(5.0); 8] }, 0.001);
        let fit = fit_laplace(&sub, FitOptions::default()).unwrap();
        assert!(fit.converged && fit.log_marginal_likelihood.is_finite());
        assert!(fit.marginal("b0").unwrap().mean() < -5.0);
    }

    #[test]
    fn wrong_family_for_exact_fit() {
        let sub = intercept_sub(vec![1.0], ObservationModel::Poisson, 1.0);
        assert!(matches!(fit_gaussian_exact(&sub, FitOptions::default()), Err(FitError::InvalidInput(_))));
    }

    fn poisson_re_sub(y: Vec<f64>, tau: Vec<f64>) -> LatentGaussianSubproblem {
        let n = y.len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.31).fract()).collect();
        let ones = vec![1.0; n];
        let mut sub = intercept_sub(y, ObservationModel::Poisson, 0.001);
        sub.fixed = Design::from_columns(vec!["b0".into(), "b1".into()], &[&ones, &x]).unwrap();
        sub.fixed_prior = vec![NormalPrior::default(); 2];
        sub.random = Some(RandomBlock {
            name: "u".into(),
            level: (0..n).collect::<Vec<_>>().into(),
            n_levels: n,
            covariate: None,
            precision: RandomPrecision::PerLevel(tau),
        });
        sub
    }

    #[test]
    fn arrow_random_effects_match_reported_marginals() {
        let y = vec![3.0, 0.0, 7.0, 2.0, 5.0, 1.0, 9.0, 4.0];
        let tau = vec![0.5, 2.0, 1.0, 4.0, 0.3, 1.5, 0.8, 2.5];
        let fit = fit_laplace(&poisson_re_sub(y, tau), FitOptions { random_effect_marginals: true, ..FitOptions::default() }).unwrap();
        assert_eq!(fit.marginals.len(), 10);
        assert!(fit.newton_iterations < MAX_NEWTON_ITERATIONS);
        assert!(fit.marginals.iter().all(|(_, m)| m.sd() > 0.0));
    }

    #[test]
    fn newton_steps_never_decrease_objective() {
        let y = vec![30.0, 0.0, 70.0, 2.0, 15.0, 1.0, 90.0, 4.0];
        let sub = poisson_re_sub(y, vec![0.01, 100.0, 1.0, 3.0, 0.2, 1.5, 0.05, 2.5]);
        let obj = PenalizedObjective::new(&sub).unwrap();
        let trace = newton_trace(&obj);
        assert!(trace.len() > 3);
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }

    fn central_difference(obj: &PenalizedObjective, k: &[f64]) -> Vec<f64> {
        (0..k.len())
            .map(|a| {
                let h = 1e-5 * (1.0 + k[a].abs());
                let mut up = k.to_vec();
                let mut dn = k.to_vec();
                up[a] += h;
                dn[a] -= h;
                (obj.value(&up) - obj.value(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn gradient_matches(obj: &PenalizedObjective, k: &[f64]) -> bool {
        let g = obj.gradient(k);
        let fd = central_difference(obj, k);
        let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        g.iter().zip(&fd).all(|(a, b)| (a - b).abs() <= 1e-5 * scale)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn poisson_gradient_matches_finite_differences(k in proptest::collection::vec(-1.5f64..1.5, 6)) {
            let sub = poisson_re_sub(vec![3.0, 0.0, 7.0, 1.0], vec![0.5, 2.0, 1.0, 4.0]);
            let obj = PenalizedObjective::new(&sub).unwrap();
            prop_assert!(gradient_matches(&obj, &k));
        }

        #[test]
        fn negbin_gradient_matches_finite_differences(
            k in proptest::collection::vec(-1.5f64..1.5, 2),
            ln_size in proptest::collection::vec(-2.0f64..4.0, 5),
        ) {
            let x = vec![0.1, 0.4, 0.5, 0.8, 1.0];
            let mut sub = intercept_sub(vec![0.0, 4.0, 1.0, 12.0, 3.0], ObservationModel::NegativeBinomial { ln_size }, 0.001);
            sub.fixed = Design::from_columns(vec!["b0".into(), "b1".into()], &[&[1.0; 5], &x]).unwrap();
            sub.fixed_prior = vec![NormalPrior::default(); 2];
            let obj = PenalizedObjective::new(&sub).unwrap();
            prop_assert!(gradient_matches(&obj, &k));
        }
    }
}
