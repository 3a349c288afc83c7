//! Quadrature over the logarithm of a single free precision.

use alloc::vec::Vec;

use crate::math::{exp, gamma_ln_pdf, ln, log_sum_exp, sqrt};

use super::{
    fit, Component, ConditionalFit, FitError, FitOptions, HyperKind, LatentGaussianSubproblem, Marginal,
    MarginalGrid, ObservationModel, RandomPrecision, Scale,
};

pub const HYPER_GRID_POINTS: usize = 43;
const HALF_WIDTH_SD: f64 = 6.0;
const END_MASS_LIMIT: f64 = 1e-3;
const COARSE_LO: f64 = -16.0;
const COARSE_HI: f64 = 24.0;
const COARSE_STEP: f64 = 2.0;
const FD_STEP: f64 = 0.01;

/// Copy of `sub` with the free precision fixed at `tau`.
fn condition(sub: &LatentGaussianSubproblem, tau: f64) -> LatentGaussianSubproblem {
    let mut inner = sub.clone();
    let Some(h) = inner.hyperparameter.take() else { return inner };
    match h.kind {
        HyperKind::RandomEffectPrecision => {
            if let Some(r) = inner.random.as_mut() {
                r.precision = RandomPrecision::Shared(tau);
            }
        }
        HyperKind::ObservationPrecision => {
            if let ObservationModel::Gaussian { precision } = &mut inner.observation {
                precision.iter_mut().for_each(|t| *t *= tau);
            }
        }
    }
    inner
}

struct Node {
    t: f64,
    /// Log joint density of the data and `t = log τ`.
    h: f64,
    fit: Option<ConditionalFit>,
}

fn evaluate(sub: &LatentGaussianSubproblem, t: f64, options: FitOptions) -> Result<Node, FitError> {
    let prior = sub.hyperparameter.as_ref().expect("hyperparameter present").prior;
    let tau = exp(t);
    let fit = fit(&condition(sub, tau), options)?;
    let h = fit.log_marginal_likelihood + gamma_ln_pdf(tau, prior.shape, prior.rate) + t;
    Ok(Node { t, h, fit: Some(fit) })
}

fn h_or_neg_inf(sub: &LatentGaussianSubproblem, t: f64) -> f64 {
    evaluate(sub, t, FitOptions::default()).map_or(f64::NEG_INFINITY, |n| n.h)
}

/// Mode of `h` and the curvature-based standard deviation there.
fn locate(sub: &LatentGaussianSubproblem) -> Result<(f64, f64), FitError> {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let mut last_err = None;
    let mut t = COARSE_LO;
    while t <= COARSE_HI + 1e-9 {
        match evaluate(sub, t, FitOptions::default()) {
            Ok(n) if n.h > best.1 => best = (t, n.h),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
        t += COARSE_STEP;
    }
    if !best.1.is_finite() {
        return Err(last_err.unwrap_or(FitError::NonFinite));
    }
    let (lo, hi) = (best.0 - COARSE_STEP, best.0 + COARSE_STEP);
    let mut t = best.0;
    let mut curvature = f64::NAN;
    for _ in 0..40 {
        let (hm, h0, hp) = (h_or_neg_inf(sub, t - FD_STEP), h_or_neg_inf(sub, t), h_or_neg_inf(sub, t + FD_STEP));
        let d1 = (hp - hm) / (2.0 * FD_STEP);
        let d2 = (hp - 2.0 * h0 + hm) / (FD_STEP * FD_STEP);
        if !d1.is_finite() || !d2.is_finite() {
            break;
        }
        curvature = d2;
        let step = if d2 < 0.0 { (-d1 / d2).clamp(-1.0, 1.0) } else { 0.5 * d1.signum() };
        let next = (t + step).clamp(lo, hi);
        let moved = (next - t).abs();
        t = next;
        if moved < 1e-5 {
            break;
        }
    }
    let sd = if curvature < 0.0 { (1.0 / sqrt(-curvature)).clamp(1e-3, 5.0) } else { 1.0 };
    Ok((t, sd))
}

fn grid_nodes(sub: &LatentGaussianSubproblem, centre: f64, sd: f64, options: FitOptions) -> Result<Vec<Node>, FitError> {
    let step = 2.0 * HALF_WIDTH_SD * sd / (HYPER_GRID_POINTS - 1) as f64;
    let mut nodes = Vec::with_capacity(HYPER_GRID_POINTS);
    let mut last_err = None;
    for j in 0..HYPER_GRID_POINTS {
        let t = centre - HALF_WIDTH_SD * sd + step * j as f64;
        match evaluate(sub, t, options) {
            Ok(n) => nodes.push(n),
            Err(e) => {
                nodes.push(Node { t, h: f64::NEG_INFINITY, fit: None });
                last_err = Some(e);
            }
        }
    }
    if nodes.iter().all(|n| n.fit.is_none()) {
        return Err(last_err.unwrap_or(FitError::NonFinite));
    }
    Ok(nodes)
}

/// Trapezoid log weights `h_j + ln ω_j`.
fn log_weights(nodes: &[Node]) -> Vec<f64> {
    let last = nodes.len() - 1;
    let dt = nodes[1].t - nodes[0].t;
    nodes
        .iter()
        .enumerate()
        .map(|(j, n)| n.h + ln(if j == 0 || j == last { 0.5 * dt } else { dt }))
        .collect()
}

/// Integrates the free precision out on a 43-node grid over its logarithm.
///
/// The grid spans six curvature standard deviations either side of the mode
/// found by a coarse scan and Newton refinement; if more than 1e-3 of the
/// mass lands in an end node the grid is moved once toward that end and
/// widened.
pub fn fit_with_hyperparameter(sub: &LatentGaussianSubproblem, options: FitOptions) -> Result<ConditionalFit, FitError> {
    sub.validate()?;
    let hyper = sub.hyperparameter.clone().ok_or(FitError::InvalidInput("no free hyperparameter"))?;
    let (mut centre, mut sd) = locate(sub)?;
    let mut nodes = grid_nodes(sub, centre, sd, options)?;
    let mut recentred = false;
    let (lw, log_z) = loop {
        let lw = log_weights(&nodes);
        let log_z = log_sum_exp(&lw);
        let left = exp(lw[0] - log_z);
        let right = exp(lw[lw.len() - 1] - log_z);
        if left.max(right) <= END_MASS_LIMIT {
            break (lw, log_z);
        }
        if recentred {
            return Err(FitError::HyperparameterEscape { mass: left.max(right) });
        }
        recentred = true;
        centre += if left > right { -3.0 * sd } else { 3.0 * sd };
        sd *= 1.5;
        nodes = grid_nodes(sub, centre, sd, options)?;
    };

    let x: Vec<f64> = nodes.iter().map(|n| n.t).collect();
    let density: Vec<f64> = nodes.iter().map(|n| exp(n.h - log_z)).collect();
    let hyper_grid = MarginalGrid::new(x, density, Scale::Log)?;

    let probs: Vec<f64> = lw.iter().map(|&w| exp(w - log_z)).collect();
    let template = nodes.iter().find_map(|n| n.fit.as_ref()).expect("at least one node fitted");
    let mut marginals = Vec::with_capacity(template.marginals.len() + 1);
    for (k, (name, _)) in template.marginals.iter().enumerate() {
        let comps = nodes
            .iter()
            .zip(&probs)
            .filter_map(|(n, &w)| {
                let m = &n.fit.as_ref()?.marginals[k].1;
                Some(Component { weight: w, mean: m.mean(), sd: m.sd() })
            })
            .collect();
        marginals.push((name.clone(), Marginal::mixture(comps)));
    }
    marginals.push((hyper.name.clone(), Marginal::Grid(hyper_grid)));

    let fitted = nodes.iter().filter_map(|n| n.fit.as_ref());
    let newton_iterations = fitted.clone().map(|f| f.newton_iterations).sum();
    let converged = fitted.clone().all(|f| f.converged) && fitted.count() == nodes.len();
    Ok(ConditionalFit {
        log_marginal_likelihood: log_z,
        parts: alloc::vec![log_z],
        marginals,
        newton_iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{Hyperparameter, RandomBlock};
    use crate::math::ln_gamma;
    use crate::model::{Design, GammaPrior, NormalPrior};
    use alloc::vec;

    fn gamma_log_scale_density(t: f64, shape: f64, rate: f64) -> f64 {
        exp(gamma_ln_pdf(exp(t), shape, rate) + t)
    }

    #[test]
    fn empty_block_returns_the_prior() {
        let prior = GammaPrior::default();
        let sub = LatentGaussianSubproblem {
            name: "empty".into(),
            response: Vec::new().into(),
            observation: ObservationModel::Gaussian { precision: Vec::new() },
            offset: None,
            fixed: Design::new(0, vec![], vec![]).unwrap(),
            fixed_prior: vec![],
            random: Some(RandomBlock {
                name: "u".into(),
                level: Vec::new().into(),
                n_levels: 3,
                covariate: None,
                precision: RandomPrecision::Shared(1.0),
            }),
            hyperparameter: Some(Hyperparameter { name: "tau_u".into(), kind: HyperKind::RandomEffectPrecision, prior }),
        };
        let fit = fit_with_hyperparameter(&sub, FitOptions::default()).unwrap();
        let Some(Marginal::Grid(g)) = fit.marginal("tau_u") else { panic!("missing grid") };
        let raw: Vec<f64> = g.x().iter().map(|&t| gamma_log_scale_density(t, prior.shape, prior.rate)).collect();
        let on_grid = MarginalGrid::new(g.x().to_vec(), raw, Scale::Log).unwrap().normalized();
        assert!(g.sup_distance(&on_grid) < 1e-6);
        assert!((g.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn observation_precision_matches_gamma_conjugacy() {
        // Mean pinned at zero by a very tight prior, so the precision is conjugate.
        let y = vec![0.8, -1.3, 0.4, 2.1, -0.6, 0.9, -1.7, 0.2, 1.4, -0.3, 0.5, -2.2];
        let n = y.len();
        let prior = GammaPrior { shape: 2.0, rate: 1.5 };
        let sub = LatentGaussianSubproblem {
            name: "conj".into(),
            response: y.clone().into(),
            observation: ObservationModel::Gaussian { precision: vec![1.0; n] },
            offset: None,
            fixed: Design::intercept(n, "b0"),
            fixed_prior: vec![NormalPrior { mean: 0.0, precision: 1e12 }],
            random: None,
            hyperparameter: Some(Hyperparameter { name: "tau".into(), kind: HyperKind::ObservationPrecision, prior }),
        };
        let fit = fit_with_hyperparameter(&sub, FitOptions::default()).unwrap();
        let shape = prior.shape + n as f64 / 2.0;
        let rate = prior.rate + y.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let Some(Marginal::Grid(g)) = fit.marginal("tau") else { panic!("missing grid") };
        let sup = g.x().iter().zip(g.density()).map(|(&t, &d)| (d - gamma_log_scale_density(t, shape, rate)).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-4, "sup-norm {sup}");
        // Evidence: Student-type closed form of the marginal likelihood.
        let ss = y.iter().map(|v| v * v).sum::<f64>();
        let exact = prior.shape * ln(prior.rate) - ln_gamma(prior.shape) + ln_gamma(shape)
            - shape * ln(prior.rate + ss / 2.0)
            - 0.5 * n as f64 * crate::math::LN_2PI;
        assert!((fit.log_marginal_likelihood - exact).abs() < 1e-4);
    }
}
