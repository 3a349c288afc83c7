//! Reference sampler for the full joint posterior.
//!
//! Metropolis-within-Gibbs with Gaussian random walks: the mean
//! coefficients and the dispersion coefficients move as blocks, random
//! effects and dispersion effects one level at a time, and shared precisions
//! on the log scale with the Jacobian included. Step sizes adapt during
//! burn-in only and are frozen afterwards.
//!
//! Dispersion random effects are sampled in centred form, as the dispersion
//! linear predictor itself (for grouped Gaussian data, the group log
//! precisions). With few groups the uncentred form couples the coefficients
//! and the effects so tightly that a random walk barely moves.

pub(crate) mod rw;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::linalg::SymMatrix;
use crate::math::{exp, gamma_ln_pdf, ln, negbin_ln_pmf, normal_ln_pdf, poisson_ln_pmf, sqrt, LN_2PI};
use crate::model::{
    Design, DhglmSpec, GammaPrior, LikelihoodFamily, Name, NormalPrior, PrecisionModel, PrecisionSource, SizeSource,
};
use crate::rng::named_stream;
use crate::summary::{sample_summary, Summary};

use rw::{accept, block_mode, BlockWalk, ScalarSteps};

/// Draws needed before a chain may be summarized.
pub const MIN_SUMMARY_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum McmcError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("model not supported by the sampler: {0}")]
    Unsupported(String),
    #[error("log posterior is not finite at the starting point")]
    NonFiniteStart,
    #[error("chain retains no draws; increase the iterations after burn-in")]
    EmptyChain,
    #[error("need at least {needed} draws, found {found}")]
    TooFewDraws { needed: usize, found: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(Name),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McmcConfig {
    pub burn_in: usize,
    /// Iterations after burn-in; every `thin`-th is kept.
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    /// Starting proposal sd by block name, overriding the automatic choice.
    /// Block names are `mean`, `dispersion`, and the names of random effects
    /// and shared precisions.
    pub initial_steps: BTreeMap<Name, f64>,
    /// Also keep draws of every random effect.
    pub keep_random_effects: bool,
}

impl McmcConfig {
    pub fn new(burn_in: usize, iterations: usize, thin: usize, seed: u64) -> Self {
        Self { burn_in, iterations, thin, seed, initial_steps: BTreeMap::new(), keep_random_effects: false }
    }

    /// 10000 burn-in iterations, then 100000 thinned by 100.
    pub fn paper(seed: u64) -> Self {
        Self::new(10_000, 100_000, 100, seed)
    }

    /// 2000 burn-in iterations, then 20000 thinned by 20.
    pub fn desk(seed: u64) -> Self {
        Self::new(2_000, 20_000, 20, seed)
    }

    pub fn retained(&self) -> usize {
        if self.thin == 0 {
            0
        } else {
            self.iterations / self.thin
        }
    }

    fn validate(&self) -> Result<(), McmcError> {
        if self.thin == 0 {
            return Err(McmcError::InvalidConfig("thinning interval must be at least 1"));
        }
        if self.retained() == 0 {
            return Err(McmcError::EmptyChain);
        }
        if self.initial_steps.values().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(McmcError::InvalidConfig("initial steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcChain {
    pub names: Vec<Name>,
    /// One row per retained iteration, columns in `names` order.
    pub draws: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance: Vec<(Name, f64)>,
}

impl McmcChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, McmcError> {
        let j = self
            .names
            .iter()
            .position(|n| &**n == name)
            .ok_or_else(|| McmcError::UnknownParameter(name.into()))?;
        Ok(self.draws.iter().map(|r| r[j]).collect())
    }
}

/// Mean, sd and empirical 95% interval of every parameter in the chain.
pub fn chain_summary(chain: &McmcChain) -> Result<Vec<(Name, Summary)>, McmcError> {
    if chain.len() < MIN_SUMMARY_DRAWS {
        return Err(McmcError::TooFewDraws { needed: MIN_SUMMARY_DRAWS, found: chain.len() });
    }
    Ok(chain
        .names
        .iter()
        .enumerate()
        .map(|(j, n)| (n.clone(), sample_summary(&chain.draws.iter().map(|r| r[j]).collect::<Vec<_>>())))
        .collect())
}

/// Monte Carlo standard error of the mean of correlated draws, by
/// non-overlapping batch means over `⌊√n⌋` batches.
pub fn batch_means_se(draws: &[f64]) -> f64 {
    let n = draws.len();
    let b = (sqrt(n as f64) as usize).max(2);
    let size = n / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|k| draws[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (b - 1) as f64;
    sqrt(var / b as f64)
}

/// Random-walk Metropolis on an arbitrary log density over one block.
pub fn sample_log_density(
    names: Vec<Name>,
    log_density: &dyn Fn(&[f64]) -> f64,
    init: Vec<f64>,
    config: &McmcConfig,
) -> Result<McmcChain, McmcError> {
    config.validate()?;
    if names.len() != init.len() || init.is_empty() {
        return Err(McmcError::InvalidConfig("one name per starting value is required"));
    }
    let mut x = init;
    let mut fx = log_density(&x);
    if !fx.is_finite() {
        return Err(McmcError::NonFiniteStart);
    }
    let step = config.initial_steps.get("block").copied().unwrap_or(1.0);
    let mut walk = BlockWalk::new(&SymMatrix::diagonal(&alloc::vec![step * step; x.len()]));
    let mut rng = named_stream(config.seed, "mcmc");
    let mut draws = Vec::with_capacity(config.retained());
    for it in 0..config.burn_in + config.iterations {
        let burning = it < config.burn_in;
        if it == config.burn_in {
            walk.counter = Default::default();
        }
        let cand = walk.propose(&x, &mut rng);
        let fc = log_density(&cand);
        let ok = accept(&mut rng, fc - fx);
        if ok {
            x = cand;
            fx = fc;
        }
        walk.update(ok, burning);
        if burning {
            walk.observe(&x);
            if (it + 1) % 100 == 0 {
                walk.refresh();
            }
        } else if (it + 1 - config.burn_in) % config.thin == 0 {
            draws.push(x.clone());
        }
    }
    Ok(McmcChain { names, draws, acceptance: alloc::vec![("block".into(), walk.counter.rate())] })
}

enum Obs {
    Gaussian { group: Arc<[usize]>, rows: Vec<Vec<usize>> },
    Poisson,
    NegBin,
}

struct MeanEffect {
    name: Name,
    level: Arc<[usize]>,
    covariate: Option<Arc<[f64]>>,
    rows: Vec<Vec<usize>>,
    /// `None` when level `j` takes its log precision from dispersion row `j`.
    shared: Option<(Name, GammaPrior)>,
}

struct Dispersion {
    design: Design,
    offset: Vec<f64>,
    priors: Vec<NormalPrior>,
    /// Centred dispersion effects: name, level of each row, precision name and prior.
    effect: Option<(Name, Arc<[usize]>, Name, GammaPrior)>,
}

/// Model structure plus the current state of the chain.
struct Gibbs<'a> {
    y: &'a [f64],
    x: &'a Design,
    mean_offset: Vec<f64>,
    mean_priors: Vec<NormalPrior>,
    obs: Obs,
    effect: Option<MeanEffect>,
    disp: Option<Dispersion>,
    beta: Vec<f64>,
    xb: Vec<f64>,
    b: Vec<f64>,
    ln_tau_b: f64,
    gamma: Vec<f64>,
    /// Current dispersion-row values: group log precisions, log sizes, or
    /// per-level log precisions of the mean random effect.
    nuis: Vec<f64>,
    ln_tau_v: f64,
}

fn unsupported(msg: &str) -> McmcError {
    McmcError::Unsupported(msg.into())
}

impl<'a> Gibbs<'a> {
    fn new(spec: &'a DhglmSpec) -> Result<Self, McmcError> {
        let n = spec.n_obs();
        let x = &spec.mean.design;
        let mean_offset = spec.mean.offset.as_ref().map_or_else(|| alloc::vec![0.0; n], |o| o.values.to_vec());
        let mean_priors = x.names().iter().map(|nm| spec.priors.coefficient(nm)).collect();
        let rows_by = |level: &[usize], k: usize| {
            let mut rows = alloc::vec![Vec::new(); k];
            level.iter().enumerate().for_each(|(i, &l)| rows[l].push(i));
            rows
        };
        let (obs, nuis) = match &spec.family {
            LikelihoodFamily::Gaussian { group, n_groups, precision } => {
                let rows = rows_by(group, *n_groups);
                let nuis = match precision {
                    PrecisionSource::Known(t) => t.iter().map(|&v| ln(v)).collect(),
                    PrecisionSource::Modeled => initial_log_precisions(spec.response.as_ref(), &rows),
                };
                (Obs::Gaussian { group: group.clone(), rows }, nuis)
            }
            LikelihoodFamily::Poisson => (Obs::Poisson, Vec::new()),
            LikelihoodFamily::NegativeBinomial { size } => {
                let nuis = match size {
                    SizeSource::Known(k) => k.iter().map(|&v| ln(v)).collect(),
                    SizeSource::Modeled => alloc::vec![0.0; n],
                };
                (Obs::NegBin, nuis)
            }
        };
        let mut nuis = nuis;
        let effect = match &spec.mean.random {
            None => None,
            Some(re) => {
                let shared = match &re.precision {
                    PrecisionModel::Shared { name } => Some((name.clone(), spec.priors.precision(name))),
                    PrecisionModel::Dispersion => {
                        nuis = alloc::vec![0.0; re.n_levels];
                        None
                    }
                    PrecisionModel::Regression { .. } => {
                        return Err(unsupported("covariate-dependent random-effect precisions"))
                    }
                };
                Some(MeanEffect {
                    name: re.name.clone(),
                    level: re.level.clone(),
                    covariate: re.covariate.clone(),
                    rows: rows_by(&re.level, re.n_levels),
                    shared,
                })
            }
        };
        let disp = match &spec.dispersion {
            None => None,
            Some(d) => {
                let rows = d.design.rows();
                let effect = match &d.random {
                    None => None,
                    Some(re) => {
                        let mut seen = alloc::vec![false; re.n_levels];
                        let bijective =
                            re.n_levels == rows && re.level.iter().all(|&l| !core::mem::replace(&mut seen[l], true));
                        if !bijective || re.covariate.is_some() {
                            return Err(unsupported("dispersion random effects must be one intercept per dispersion row"));
                        }
                        let PrecisionModel::Shared { name } = &re.precision else {
                            return Err(unsupported("dispersion random effects need a shared precision"));
                        };
                        Some((re.name.clone(), re.level.clone(), name.clone(), spec.priors.precision(name)))
                    }
                };
                Some(Dispersion {
                    design: d.design.clone(),
                    offset: d.offset.as_ref().map_or_else(|| alloc::vec![0.0; rows], |o| o.values.to_vec()),
                    priors: d.design.names().iter().map(|nm| spec.priors.coefficient(nm)).collect(),
                    effect,
                })
            }
        };
        let n_levels = effect.as_ref().map_or(0, |e| e.rows.len());
        let pd = disp.as_ref().map_or(0, |d| d.design.cols());
        Ok(Self {
            y: &spec.response,
            x,
            mean_offset,
            mean_priors,
            obs,
            effect,
            disp,
            beta: alloc::vec![0.0; x.cols()],
            xb: alloc::vec![0.0; n],
            b: alloc::vec![0.0; n_levels],
            ln_tau_b: 0.0,
            gamma: alloc::vec![0.0; pd],
            nuis,
            ln_tau_v: 0.0,
        })
    }

    fn effect_term(&self, i: usize, b: &[f64]) -> f64 {
        match &self.effect {
            None => 0.0,
            Some(e) => e.covariate.as_ref().map_or(1.0, |c| c[i]) * b[e.level[i]],
        }
    }

    fn eta(&self, i: usize) -> f64 {
        self.xb[i] + self.mean_offset[i] + self.effect_term(i, &self.b)
    }

    fn obs_ll(&self, i: usize, eta: f64) -> f64 {
        match &self.obs {
            Obs::Gaussian { group, .. } => normal_ln_pdf(self.y[i], eta, exp(self.nuis[group[i]])),
            Obs::Poisson => poisson_ln_pmf(self.y[i], eta),
            Obs::NegBin => negbin_ln_pmf(self.y[i], eta, self.nuis[i]),
        }
    }

    fn coef_prior(priors: &[NormalPrior], v: &[f64]) -> f64 {
        priors.iter().zip(v).map(|(p, &x)| normal_ln_pdf(x, p.mean, p.precision)).sum()
    }

    fn ln_precision_of_level(&self, j: usize) -> f64 {
        match self.effect.as_ref().and_then(|e| e.shared.as_ref()) {
            Some(_) => self.ln_tau_b,
            None => self.nuis[j],
        }
    }

    /// Likelihood contribution of dispersion row `r` at value `v`.
    fn disp_row_ll(&self, r: usize, v: f64) -> f64 {
        match &self.obs {
            Obs::Gaussian { rows, .. } => {
                let ss: f64 = rows[r].iter().map(|&i| {
                    let e = self.y[i] - self.eta(i);
                    e * e
                }).sum();
                0.5 * rows[r].len() as f64 * (v - LN_2PI) - 0.5 * exp(v) * ss
            }
            Obs::NegBin => negbin_ln_pmf(self.y[r], self.eta(r), v),
            Obs::Poisson => normal_ln_pdf(self.b[r], 0.0, exp(v)),
        }
    }

    fn disp_linear(&self, gamma: &[f64]) -> Vec<f64> {
        let d = self.disp.as_ref().expect("dispersion predictor");
        d.design.mul_vec(gamma).iter().zip(&d.offset).map(|(a, o)| a + o).collect()
    }

    fn mean_target(&self, beta: &[f64]) -> f64 {
        let xb = self.x.mul_vec(beta);
        let ll: f64 = (0..self.y.len())
            .map(|i| self.obs_ll(i, xb[i] + self.mean_offset[i] + self.effect_term(i, &self.b)))
            .sum();
        ll + Self::coef_prior(&self.mean_priors, beta)
    }

    fn dispersion_target(&self, gamma: &[f64]) -> f64 {
        let d = self.disp.as_ref().expect("dispersion predictor");
        let m = self.disp_linear(gamma);
        let ll: f64 = match &d.effect {
            None => m.iter().enumerate().map(|(r, &v)| self.disp_row_ll(r, v)).sum(),
            Some(_) => {
                let tau = exp(self.ln_tau_v);
                self.nuis.iter().zip(&m).map(|(&v, &mu)| normal_ln_pdf(v, mu, tau)).sum()
            }
        };
        ll + Self::coef_prior(&d.priors, gamma)
    }

    fn log_posterior(&self) -> f64 {
        let mut lp = self.mean_target(&self.beta);
        if let Some(e) = &self.effect {
            lp += (0..e.rows.len()).map(|j| normal_ln_pdf(self.b[j], 0.0, exp(self.ln_precision_of_level(j)))).sum::<f64>();
            if let Some((_, prior)) = &e.shared {
                lp += gamma_ln_pdf(exp(self.ln_tau_b), prior.shape, prior.rate) + self.ln_tau_b;
            }
        }
        if let Some(d) = &self.disp {
            lp += Self::coef_prior(&d.priors, &self.gamma);
            let m = self.disp_linear(&self.gamma);
            if let Some((_, _, _, prior)) = &d.effect {
                let tau = exp(self.ln_tau_v);
                lp += self.nuis.iter().zip(&m).map(|(&v, &mu)| normal_ln_pdf(v, mu, tau)).sum::<f64>();
                lp += gamma_ln_pdf(tau, prior.shape, prior.rate) + self.ln_tau_v;
            }
        }
        lp
    }

    /// Moves the coefficient blocks to their conditional modes and returns
    /// proposal covariances for them.
    fn initialize(&mut self) -> (Option<SymMatrix>, Option<SymMatrix>) {
        let mut disp_cov = None;
        if let Some(d) = &self.disp {
            // Regress the starting dispersion values on the dispersion design.
            let start = self.nuis.clone();
            let priors = d.priors.clone();
            let fit = |g: &[f64]| {
                let m = self.disp_linear(g);
                start.iter().zip(&m).map(|(&v, &mu)| normal_ln_pdf(v, mu, 1.0)).sum::<f64>()
                    + Self::coef_prior(&priors, g)
            };
            let (g, _) = block_mode(&fit, self.gamma.clone());
            let resid: f64 =
                start.iter().zip(self.disp_linear(&g)).map(|(v, m)| (v - m) * (v - m)).sum::<f64>() / start.len() as f64;
            self.gamma = g;
            if d.effect.is_some() {
                self.ln_tau_v = (-ln(resid.max(1e-12))).clamp(-5.0, 5.0);
            } else {
                self.nuis = self.disp_linear(&self.gamma);
            }
        }
        let (beta, mut mean_cov) = block_mode(&|b: &[f64]| self.mean_target(b), self.beta.clone());
        self.set_beta(beta);
        let per_level_precisions = self.effect.as_ref().is_some_and(|e| e.shared.is_none());
        if self.disp.is_some() && !per_level_precisions {
            let (g, cov) = block_mode(&|g: &[f64]| self.dispersion_target(g), self.gamma.clone());
            self.gamma = g;
            disp_cov = cov;
            if self.disp.as_ref().is_some_and(|d| d.effect.is_none()) {
                self.nuis = self.disp_linear(&self.gamma);
                let (beta, cov) = block_mode(&|b: &[f64]| self.mean_target(b), self.beta.clone());
                self.set_beta(beta);
                mean_cov = cov;
            }
        }
        (mean_cov, disp_cov)
    }

    fn set_beta(&mut self, beta: Vec<f64>) {
        self.xb = self.x.mul_vec(&beta);
        self.beta = beta;
    }
}

/// Group log precisions estimated from the raw within-group variances.
fn initial_log_precisions(y: &[f64], rows: &[Vec<usize>]) -> Vec<f64> {
    let overall = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len().max(2) - 1) as f64
    };
    let fallback = if overall > 0.0 { -ln(overall) } else { 0.0 };
    rows.iter()
        .map(|r| {
            if r.len() < 2 {
                return fallback;
            }
            let m = r.iter().map(|&i| y[i]).sum::<f64>() / r.len() as f64;
            let s2 = r.iter().map(|&i| (y[i] - m) * (y[i] - m)).sum::<f64>() / (r.len() - 1) as f64;
            if s2 > 0.0 {
                -ln(s2)
            } else {
                fallback
            }
        })
        .collect()
}

fn covariance_or_step(cov: Option<SymMatrix>, dim: usize, step: Option<f64>) -> SymMatrix {
    match (step, cov) {
        (Some(s), _) => SymMatrix::diagonal(&alloc::vec![s * s; dim]),
        (None, Some(c)) => c,
        (None, None) => SymMatrix::diagonal(&alloc::vec![0.01; dim]),
    }
}

/// Samples the joint posterior of every parameter in `spec`.
///
/// Retained columns: mean coefficients, shared random-effect precisions,
/// dispersion coefficients, the dispersion-effect precision, and for grouped
/// Gaussian data with modeled precisions the group log precisions
/// `log_tau[g]`. Precisions are reported on their natural scale.
pub fn run_mcmc(spec: &DhglmSpec, config: &McmcConfig) -> Result<McmcChain, McmcError> {
    config.validate()?;
    let mut s = Gibbs::new(spec)?;
    let (mean_cov, disp_cov) = s.initialize();
    if !s.log_posterior().is_finite() {
        return Err(McmcError::NonFiniteStart);
    }
    let step = |name: &str| config.initial_steps.get(name).copied();

    let mut mean_walk = BlockWalk::new(&covariance_or_step(mean_cov, s.beta.len(), step("mean")));
    let mut disp_walk = s
        .disp
        .as_ref()
        .map(|d| BlockWalk::new(&covariance_or_step(disp_cov, d.design.cols(), step("dispersion"))));
    let mut effect_steps = s.effect.as_ref().map(|e| ScalarSteps::new(e.rows.len(), step(&e.name).unwrap_or(0.5)));
    let mut tau_b_steps = s
        .effect
        .as_ref()
        .and_then(|e| e.shared.as_ref())
        .map(|(n, _)| ScalarSteps::new(1, step(n).unwrap_or(0.3)));
    let disp_effect = s.disp.as_ref().and_then(|d| d.effect.clone());
    let mut row_steps = disp_effect.as_ref().map(|(n, ..)| ScalarSteps::new(s.nuis.len(), step(n).unwrap_or(0.1)));
    let mut tau_v_steps = disp_effect.as_ref().map(|(_, _, n, _)| ScalarSteps::new(1, step(n).unwrap_or(0.3)));

    let names = reported_names(&s, config.keep_random_effects);
    let mut rng: ChaCha8Rng = named_stream(config.seed, "mcmc");
    let mut draws = Vec::with_capacity(config.retained());

    for it in 0..config.burn_in + config.iterations {
        let adapt = it < config.burn_in;
        if it == config.burn_in {
            mean_walk.counter = Default::default();
            for c in [&mut effect_steps, &mut tau_b_steps, &mut row_steps, &mut tau_v_steps].into_iter().flatten() {
                c.counter = Default::default();
            }
            if let Some(w) = &mut disp_walk {
                w.counter = Default::default();
            }
        }

        // Mean coefficients.
        let cand = mean_walk.propose(&s.beta, &mut rng);
        let ok = accept(&mut rng, s.mean_target(&cand) - s.mean_target(&s.beta));
        if ok {
            s.set_beta(cand);
        }
        mean_walk.update(ok, adapt);
        if adapt {
            mean_walk.observe(&s.beta);
        }

        // Random effects, one level at a time.
        if let (Some(e), Some(steps)) = (&s.effect, &mut effect_steps) {
            for j in 0..e.rows.len() {
                let old = s.b[j];
                let new = steps.propose(j, old, &mut rng);
                let tau = exp(s.ln_precision_of_level(j));
                let mut delta = normal_ln_pdf(new, 0.0, tau) - normal_ln_pdf(old, 0.0, tau);
                for &i in &e.rows[j] {
                    let c = e.covariate.as_ref().map_or(1.0, |c| c[i]);
                    let base = s.eta(i) - c * old;
                    delta += s.obs_ll(i, base + c * new) - s.obs_ll(i, base + c * old);
                }
                let ok = accept(&mut rng, delta);
                if ok {
                    s.b[j] = new;
                }
                steps.update(j, ok, adapt);
            }
        }

        // Shared random-effect precision.
        if let (Some(prior), Some(steps)) = (s.effect.as_ref().and_then(|e| e.shared.as_ref()).map(|p| p.1), &mut tau_b_steps) {
            let target = |l: f64| {
                let tau = exp(l);
                s.b.iter().map(|&v| normal_ln_pdf(v, 0.0, tau)).sum::<f64>() + gamma_ln_pdf(tau, prior.shape, prior.rate) + l
            };
            let new = steps.propose(0, s.ln_tau_b, &mut rng);
            let ok = accept(&mut rng, target(new) - target(s.ln_tau_b));
            if ok {
                s.ln_tau_b = new;
            }
            steps.update(0, ok, adapt);
        }

        // Dispersion coefficients.
        if let Some(walk) = &mut disp_walk {
            let cand = walk.propose(&s.gamma, &mut rng);
            let ok = accept(&mut rng, s.dispersion_target(&cand) - s.dispersion_target(&s.gamma));
            if ok {
                s.gamma = cand;
                if disp_effect.is_none() {
                    s.nuis = s.disp_linear(&s.gamma);
                }
            }
            walk.update(ok, adapt);
            if adapt {
                walk.observe(&s.gamma);
            }
        }

        // Centred dispersion effects and their precision.
        if let (Some((_, _, _, prior)), Some(steps), Some(tsteps)) = (&disp_effect, &mut row_steps, &mut tau_v_steps) {
            let m = s.disp_linear(&s.gamma);
            let tau = exp(s.ln_tau_v);
            for r in 0..s.nuis.len() {
                let old = s.nuis[r];
                let new = steps.propose(r, old, &mut rng);
                let delta = s.disp_row_ll(r, new) - s.disp_row_ll(r, old) + normal_ln_pdf(new, m[r], tau)
                    - normal_ln_pdf(old, m[r], tau);
                let ok = accept(&mut rng, delta);
                if ok {
                    s.nuis[r] = new;
                }
                steps.update(r, ok, adapt);
            }
            let target = |l: f64| {
                let t = exp(l);
                s.nuis.iter().zip(&m).map(|(&v, &mu)| normal_ln_pdf(v, mu, t)).sum::<f64>()
                    + gamma_ln_pdf(t, prior.shape, prior.rate)
                    + l
            };
            let new = tsteps.propose(0, s.ln_tau_v, &mut rng);
            let ok = accept(&mut rng, target(new) - target(s.ln_tau_v));
            if ok {
                s.ln_tau_v = new;
            }
            tsteps.update(0, ok, adapt);
        }

        if adapt && (it + 1) % 100 == 0 && it + 1 >= config.burn_in / 4 {
            mean_walk.refresh();
            if let Some(w) = &mut disp_walk {
                w.refresh();
            }
        }
        if !adapt && (it + 1 - config.burn_in) % config.thin == 0 {
            draws.push(reported_values(&s, config.keep_random_effects));
        }
    }

    let mut acceptance: Vec<(Name, f64)> = alloc::vec![("mean".into(), mean_walk.counter.rate())];
    if let (Some(e), Some(st)) = (&s.effect, &effect_steps) {
        acceptance.push((e.name.clone(), st.counter.rate()));
    }
    if let (Some((n, _)), Some(st)) = (s.effect.as_ref().and_then(|e| e.shared.as_ref()), &tau_b_steps) {
        acceptance.push((n.clone(), st.counter.rate()));
    }
    if let Some(w) = &disp_walk {
        acceptance.push(("dispersion".into(), w.counter.rate()));
    }
    if let (Some((n, _, tn, _)), Some(st), Some(tst)) = (&disp_effect, &row_steps, &tau_v_steps) {
        acceptance.push((n.clone(), st.counter.rate()));
        acceptance.push((tn.clone(), tst.counter.rate()));
    }
    Ok(McmcChain { names, draws, acceptance })
}

fn reported_names(s: &Gibbs<'_>, effects: bool) -> Vec<Name> {
    let mut v: Vec<Name> = s.x.names().to_vec();
    if let Some(e) = &s.effect {
        if let Some((n, _)) = &e.shared {
            v.push(n.clone());
        }
        if effects {
            v.extend((0..e.rows.len()).map(|j| Name::from(format!("{}[{}]", e.name, j + 1))));
        }
    }
    if let Some(d) = &s.disp {
        v.extend(d.design.names().iter().cloned());
        if let Some((n, level, tn, _)) = &d.effect {
            v.push(tn.clone());
            if effects {
                v.extend((0..level.len()).map(|j| Name::from(format!("{}[{}]", n, j + 1))));
            }
        }
        if matches!(s.obs, Obs::Gaussian { .. }) {
            v.extend((0..s.nuis.len()).map(|g| Name::from(format!("log_tau[{}]", g + 1))));
        }
    }
    v
}

fn reported_values(s: &Gibbs<'_>, effects: bool) -> Vec<f64> {
    let mut v = s.beta.clone();
    if let Some(e) = &s.effect {
        if e.shared.is_some() {
            v.push(exp(s.ln_tau_b));
        }
        if effects {
            v.extend_from_slice(&s.b);
        }
    }
    if let Some(d) = &s.disp {
        v.extend_from_slice(&s.gamma);
        if let Some((_, level, _, _)) = &d.effect {
            v.push(exp(s.ln_tau_v));
            if effects {
                let m = s.disp_linear(&s.gamma);
                let mut u = alloc::vec![0.0; level.len()];
                level.iter().enumerate().for_each(|(r, &l)| u[l] = s.nuis[r] - m[r]);
                v.extend(u);
            }
        }
        if matches!(s.obs, Obs::Gaussian { .. }) {
            v.extend_from_slice(&s.nuis);
        }
    }
    v
}
