//! Seeded data generators and the models fitted to them.
//!
//! Every generated column draws from its own named random stream, so a
//! column does not change when another column's generator does.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::linalg::SymMatrix;
use crate::math::{exp, ln, sqrt};
use crate::model::{
    build_spec, row_standardize, spatial_lag, Design, DhglmSpec, LikelihoodFamily, LinearPredictor, Link, Name, Offset,
    PrecisionModel, PrecisionSource, Priors, RandomEffect, SizeSource, SpatialError, SpecError,
};
use crate::rng::named_stream;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("recipe asks for an empty dataset")]
    Empty,
    #[error("non-finite {0} while simulating; the true parameters overflow")]
    NonFinite(&'static str),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(&'static str),
    #[error("dataset lacks column `{0}`")]
    MissingColumn(String),
    #[error("dataset column `{name}` has {found} rows, expected {expected}")]
    ColumnLength { name: String, expected: usize, found: usize },
    #[error("dataset needs a group index")]
    MissingGroups,
    #[error("dataset needs a neighbourhood matrix")]
    MissingNeighbours,
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// What to simulate. Parameter values are the truth the data are drawn from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "kebab-case"))]
pub enum RecipeKind {
    /// `x ~ U(x_range)`, `z ~ N(0, 1)`, `u_i ~ N(0, τ_i)`, `log τ_i = γ0 + γ1 z_i`,
    /// `y_i ~ Poisson(exp(β0 + β1 x_i + u_i))`.
    PoissonRe { n: usize, beta: [f64; 2], gamma: [f64; 2], x_range: (f64, f64) },
    /// `x ~ U(x_range)`, `z ~ U(z_range)` standardized by its sample moments,
    /// `log k_i = γ0 + γ1 z_i`, `y_i ~ NB(exp(β0 + β1 x_i), k_i)`.
    NegBin { n: usize, beta: [f64; 2], gamma: [f64; 2], x_range: (f64, f64), z_range: (f64, f64) },
    /// `x_ij ~ U(x_range)`, `z_i ~ U(z_range)`, `u_i ~ N(0, τ_u)`,
    /// `log τ_i = γ0 + γ1 z_i + u_i`, `y_ij ~ N(β0 + β1 x_ij, τ_i)`.
    GaussianGroups {
        p: usize,
        n_per_group: usize,
        beta: [f64; 2],
        gamma: [f64; 2],
        tau_u: f64,
        x_range: (f64, f64),
        z_range: (f64, f64),
    },
    /// Counts on a rook lattice with a spatial-lag covariate and per-region
    /// random effects whose log precision is linear in an index covariate.
    SpatialPoisson { rows: usize, cols: usize, beta: f64, rho: f64, gamma: [f64; 2] },
    /// As `SpatialPoisson` without random effects and with a negative binomial
    /// size whose log is linear in the index covariate.
    SpatialNegBin { rows: usize, cols: usize, beta: f64, rho: f64, gamma: [f64; 2] },
    /// Reaction-time-like panel: `y_ij ~ N(β0 + b_i day_j, τ_i)`,
    /// `b_i ~ N(slope, τ_β)`, `log τ_i = γ + u_i`, `u_i ~ N(0, τ_u)`.
    SleepLike { subjects: usize, days: usize, beta0: f64, slope: f64, tau_beta: f64, gamma: f64, tau_u: f64 },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimulationRecipe {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: RecipeKind,
    pub seed: u64,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Recipe(SimulationRecipe),
    File { path: String, rescale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub response: Vec<f64>,
    /// Per-observation covariates.
    pub columns: Vec<(Name, Vec<f64>)>,
    /// Dense 0-based group of each observation.
    pub group: Option<Vec<usize>>,
    /// Original label of each group, in index order.
    pub group_labels: Vec<String>,
    /// Per-group covariates.
    pub group_columns: Vec<(Name, Vec<f64>)>,
    /// Row-standardized neighbourhood matrix over observations.
    pub neighbours: Option<SymMatrix>,
    /// True parameter values for simulated data.
    pub truth: Vec<(Name, f64)>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group.as_ref().map_or(0, |g| g.iter().max().map_or(0, |m| m + 1))
    }

    pub fn column(&self, name: &str) -> Result<&[f64], SimError> {
        self.columns
            .iter()
            .chain(&self.group_columns)
            .find(|(n, _)| &**n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| SimError::MissingColumn(name.into()))
    }

    pub fn truth_of(&self, name: &str) -> Option<f64> {
        self.truth.iter().find(|(n, _)| &**n == name).map(|p| p.1)
    }

    /// Column lengths agree and group indices are dense.
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.len();
        if n == 0 {
            return Err(SimError::Empty);
        }
        for (name, c) in &self.columns {
            if c.len() != n {
                return Err(SimError::ColumnLength { name: String::from(&**name), expected: n, found: c.len() });
            }
        }
        if let Some(g) = &self.group {
            if g.len() != n {
                return Err(SimError::ColumnLength { name: "group".into(), expected: n, found: g.len() });
            }
            let k = self.n_groups();
            let mut seen = alloc::vec![false; k];
            g.iter().for_each(|&i| seen[i] = true);
            if seen.iter().any(|s| !s) {
                return Err(SimError::InvalidRecipe("group indices are not dense"));
            }
            for (name, c) in &self.group_columns {
                if c.len() != k {
                    return Err(SimError::ColumnLength { name: String::from(&**name), expected: k, found: c.len() });
                }
            }
        }
        Ok(())
    }
}

/// Maps arbitrary labels to dense indices in order of first appearance.
pub fn dense_groups<T: Ord + Clone>(labels: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut index = BTreeMap::new();
    let mut order = Vec::new();
    let g = labels
        .iter()
        .map(|l| {
            *index.entry(l.clone()).or_insert_with(|| {
                order.push(l.clone());
                order.len() - 1
            })
        })
        .collect();
    (g, order)
}

/// 0/1 rook adjacency of a `rows × cols` lattice, regions numbered row by row.
pub fn lattice_adjacency(rows: usize, cols: usize) -> SymMatrix {
    let n = rows * cols;
    let mut a = SymMatrix::zeros(n);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                a.set(i, i + 1, 1.0);
                a.set(i + 1, i, 1.0);
            }
            if r + 1 < rows {
                a.set(i, i + cols, 1.0);
                a.set(i + cols, i, 1.0);
            }
        }
    }
    a
}

fn uniform<R: Rng>(rng: &mut R, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standardizes by the sample mean and the sample sd (divisor `n - 1`).
fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0));
    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
}

fn poisson_draw<R: Rng>(rng: &mut R, mean: f64) -> Result<f64, SimError> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(SimError::NonFinite("rate"));
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    Poisson::new(mean).map(|d| d.sample(rng)).map_err(|_| SimError::NonFinite("rate"))
}

/// Gamma–Poisson mixture with mean `mu` and size `k`.
fn negbin_draw<R: Rng>(rng: &mut R, mu: f64, k: f64) -> Result<f64, SimError> {
    if !(mu.is_finite() && k.is_finite() && k > 0.0) {
        return Err(SimError::NonFinite("mean or size"));
    }
    let lambda = Gamma::new(k, mu / k).map_err(|_| SimError::NonFinite("size"))?.sample(rng);
    poisson_draw(rng, lambda)
}

fn names(ns: &[&str]) -> Vec<Name> {
    ns.iter().map(|&s| Name::from(s)).collect()
}

fn truth(pairs: &[(&str, f64)]) -> Vec<(Name, f64)> {
    pairs.iter().map(|&(n, v)| (Name::from(n), v)).collect()
}

fn dataset(recipe: &SimulationRecipe, response: Vec<f64>, columns: Vec<(&str, Vec<f64>)>) -> Dataset {
    Dataset {
        response,
        columns: columns.into_iter().map(|(n, c)| (Name::from(n), c)).collect(),
        group: None,
        group_labels: Vec::new(),
        group_columns: Vec::new(),
        neighbours: None,
        truth: Vec::new(),
        provenance: Provenance::Recipe(recipe.clone()),
    }
}

pub fn simulate(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    match recipe.kind {
        RecipeKind::PoissonRe { .. } => simulate_poisson_re(recipe),
        RecipeKind::NegBin { .. } => simulate_negbin(recipe),
        RecipeKind::GaussianGroups { .. } => simulate_gaussian_groups(recipe),
        RecipeKind::SpatialPoisson { .. } | RecipeKind::SpatialNegBin { .. } => simulate_spatial(recipe),
        RecipeKind::SleepLike { .. } => simulate_sleep_like(recipe),
    }
}

pub fn simulate_poisson_re(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    let RecipeKind::PoissonRe { n, beta, gamma, x_range } = recipe.kind else {
        return Err(SimError::InvalidRecipe("expected a Poisson random-effect recipe"));
    };
    if n == 0 {
        return Err(SimError::Empty);
    }
    let s = recipe.seed;
    let x = uniform(&mut named_stream(s, "x"), n, x_range);
    let z = normals(&mut named_stream(s, "z"), n);
    let e = normals(&mut named_stream(s, "u"), n);
    let mut rng = named_stream(s, "y");
    let y = (0..n)
        .map(|i| {
            let tau = exp(gamma[0] + gamma[1] * z[i]);
            let u = e[i] / sqrt(tau);
            poisson_draw(&mut rng, exp(beta[0] + beta[1] * x[i] + u))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut d = dataset(recipe, y, alloc::vec![("x", x), ("z", z)]);
    d.truth = truth(&[("beta0", beta[0]), ("beta1", beta[1]), ("gamma0", gamma[0]), ("gamma1", gamma[1])]);
    Ok(d)
}

pub fn simulate_negbin(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    let RecipeKind::NegBin { n, beta, gamma, x_range, z_range } = recipe.kind else {
        return Err(SimError::InvalidRecipe("expected a negative binomial recipe"));
    };
    if n < 2 {
        return Err(SimError::Empty);
    }
    let s = recipe.seed;
    let x = uniform(&mut named_stream(s, "x"), n, x_range);
    let mut z = uniform(&mut named_stream(s, "z"), n, z_range);
    standardize(&mut z);
    let mut rng = named_stream(s, "y");
    let y = (0..n)
        .map(|i| negbin_draw(&mut rng, exp(beta[0] + beta[1] * x[i]), exp(gamma[0] + gamma[1] * z[i])))
        .collect::<Result<Vec<_>, _>>()?;
    let mut d = dataset(recipe, y, alloc::vec![("x", x), ("z", z)]);
    d.truth = truth(&[("beta0", beta[0]), ("beta1", beta[1]), ("gamma0", gamma[0]), ("gamma1", gamma[1])]);
    Ok(d)
}

pub fn simulate_gaussian_groups(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    let RecipeKind::GaussianGroups { p, n_per_group, beta, gamma, tau_u, x_range, z_range } = recipe.kind else {
        return Err(SimError::InvalidRecipe("expected a grouped Gaussian recipe"));
    };
    if p == 0 || n_per_group == 0 {
        return Err(SimError::Empty);
    }
    if !(tau_u > 0.0) {
        return Err(SimError::InvalidRecipe("tau_u must be positive"));
    }
    let s = recipe.seed;
    let n = p * n_per_group;
    let x = uniform(&mut named_stream(s, "x"), n, x_range);
    let z = uniform(&mut named_stream(s, "z"), p, z_range);
    let u: Vec<f64> = normals(&mut named_stream(s, "u"), p).into_iter().map(|e| e / sqrt(tau_u)).collect();
    let log_tau: Vec<f64> = (0..p).map(|g| gamma[0] + gamma[1] * z[g] + u[g]).collect();
    if log_tau.iter().any(|v| !exp(*v).is_finite()) {
        return Err(SimError::NonFinite("precision"));
    }
    let group: Vec<usize> = (0..n).map(|i| i / n_per_group).collect();
    let e = normals(&mut named_stream(s, "y"), n);
    let y = (0..n).map(|i| beta[0] + beta[1] * x[i] + e[i] / sqrt(exp(log_tau[group[i]]))).collect();
    let mut d = dataset(recipe, y, alloc::vec![("x", x)]);
    d.group = Some(group);
    d.group_labels = (1..=p).map(|g| format!("{g}")).collect();
    d.group_columns = alloc::vec![(Name::from("z"), z)];
    d.truth = truth(&[("beta0", beta[0]), ("beta1", beta[1]), ("gamma0", gamma[0]), ("gamma1", gamma[1]), ("tau_u", tau_u)]);
    d.truth.extend(log_tau.iter().enumerate().map(|(g, &v)| (Name::from(format!("log_tau[{}]", g + 1)), v)));
    Ok(d)
}

/// Births are log-uniform on [2000, 60000], the deprivation index uniform on
/// [10, 80] and the exogenous rates per 1000 births uniform on [10, 40].
pub fn simulate_spatial(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    let (rows, cols, beta, rho, gamma, poisson) = match recipe.kind {
        RecipeKind::SpatialPoisson { rows, cols, beta, rho, gamma } => (rows, cols, beta, rho, gamma, true),
        RecipeKind::SpatialNegBin { rows, cols, beta, rho, gamma } => (rows, cols, beta, rho, gamma, false),
        _ => return Err(SimError::InvalidRecipe("expected a spatial recipe")),
    };
    let n = rows * cols;
    if n < 2 {
        return Err(SimError::Empty);
    }
    let s = recipe.seed;
    let w = row_standardize(&lattice_adjacency(rows, cols))?;
    let births: Vec<f64> = uniform(&mut named_stream(s, "births"), n, (ln(2000.0), ln(60000.0)))
        .into_iter()
        .map(|v| libm::round(exp(v)))
        .collect();
    let ibn = uniform(&mut named_stream(s, "ibn"), n, (10.0, 80.0));
    let rates = uniform(&mut named_stream(s, "rates"), n, (10.0, 40.0));
    let lag = spatial_lag(&w, &rates)?;
    let e = normals(&mut named_stream(s, "u"), n);
    let mut rng = named_stream(s, "y");
    let y = (0..n)
        .map(|i| {
            let disp = exp(gamma[0] + gamma[1] * ibn[i]);
            let eta = ln(births[i]) + beta + rho * lag[i];
            if poisson {
                poisson_draw(&mut rng, exp(eta + e[i] / sqrt(disp)))
            } else {
                negbin_draw(&mut rng, exp(eta), disp)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let log_births = births.iter().map(|&b| ln(b)).collect();
    let mut d = dataset(
        recipe,
        y,
        alloc::vec![("births", births), ("log_births", log_births), ("ibn", ibn), ("rates", rates), ("lag", lag)],
    );
    d.neighbours = Some(w);
    d.truth = truth(&[("beta", beta), ("rho", rho), ("gamma0", gamma[0]), ("gamma1", gamma[1])]);
    Ok(d)
}

pub fn simulate_sleep_like(recipe: &SimulationRecipe) -> Result<Dataset, SimError> {
    let RecipeKind::SleepLike { subjects, days, beta0, slope, tau_beta, gamma, tau_u } = recipe.kind else {
        return Err(SimError::InvalidRecipe("expected a sleep-study recipe"));
    };
    if subjects == 0 || days == 0 {
        return Err(SimError::Empty);
    }
    if !(tau_beta > 0.0 && tau_u > 0.0) {
        return Err(SimError::InvalidRecipe("precisions must be positive"));
    }
    let s = recipe.seed;
    let b: Vec<f64> =
        normals(&mut named_stream(s, "slopes"), subjects).into_iter().map(|e| slope + e / sqrt(tau_beta)).collect();
    let log_tau: Vec<f64> =
        normals(&mut named_stream(s, "u"), subjects).into_iter().map(|e| gamma + e / sqrt(tau_u)).collect();
    let n = subjects * days;
    let group: Vec<usize> = (0..n).map(|i| i / days).collect();
    let day: Vec<f64> = (0..n).map(|i| (i % days) as f64).collect();
    let e = normals(&mut named_stream(s, "y"), n);
    let y = (0..n).map(|i| beta0 + b[group[i]] * day[i] + e[i] / sqrt(exp(log_tau[group[i]]))).collect();
    let mut d = dataset(recipe, y, alloc::vec![("day", day)]);
    d.group = Some(group);
    d.group_labels = (0..subjects).map(|g| format!("{}", 308 + g)).collect();
    d.truth = truth(&[("beta0", beta0), ("beta1", slope), ("tau_beta", tau_beta), ("gamma", gamma), ("tau_u", tau_u)]);
    d.truth.extend(log_tau.iter().enumerate().map(|(g, &v)| (Name::from(format!("log_tau[{}]", g + 1)), v)));
    Ok(d)
}

/// The models fitted in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ModelKind {
    PoissonRe,
    NegBin,
    GaussianGroups,
    SpatialPoisson,
    SpatialNegBin,
    /// Per-subject random slopes on `day` with a shared precision.
    SleepRandomSlopes,
    /// Common intercept and slope on `day`.
    SleepFixed,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::PoissonRe,
        ModelKind::NegBin,
        ModelKind::GaussianGroups,
        ModelKind::SpatialPoisson,
        ModelKind::SpatialNegBin,
        ModelKind::SleepRandomSlopes,
        ModelKind::SleepFixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PoissonRe => "poisson-re",
            Self::NegBin => "negbin",
            Self::GaussianGroups => "gaussian-groups",
            Self::SpatialPoisson => "spatial-poisson",
            Self::SpatialNegBin => "spatial-negbin",
            Self::SleepRandomSlopes => "sleep-random-slopes",
            Self::SleepFixed => "sleep-fixed",
        }
    }
}

fn column<'a>(d: &'a Dataset, name: &str, rows: usize) -> Result<&'a [f64], SimError> {
    let c = d.column(name)?;
    if c.len() != rows {
        return Err(SimError::ColumnLength { name: name.into(), expected: rows, found: c.len() });
    }
    Ok(c)
}

/// Builds the model of the given kind over `data`.
pub fn build_model(kind: ModelKind, data: &Dataset, priors: Priors) -> Result<DhglmSpec, SimError> {
    data.validate()?;
    let n = data.len();
    let ones = alloc::vec![1.0; n];
    let y = data.response.clone();
    let spec = match kind {
        ModelKind::PoissonRe | ModelKind::NegBin => {
            let (x, z) = (column(data, "x", n)?, column(data, "z", n)?);
            let mean = LinearPredictor::fixed(Design::from_columns(names(&["beta0", "beta1"]), &[&ones, x])?, Link::Log);
            let disp = LinearPredictor::fixed(Design::from_columns(names(&["gamma0", "gamma1"]), &[&ones, z])?, Link::Log);
            if kind == ModelKind::PoissonRe {
                let mean = mean.with_random(per_level_effect(n));
                build_spec(LikelihoodFamily::Poisson, y, mean, Some(disp), priors)?
            } else {
                build_spec(LikelihoodFamily::NegativeBinomial { size: SizeSource::Modeled }, y, mean, Some(disp), priors)?
            }
        }
        ModelKind::SpatialPoisson | ModelKind::SpatialNegBin => {
            let (lag, ibn, lb) = (column(data, "lag", n)?, column(data, "ibn", n)?, column(data, "log_births", n)?);
            let mean = LinearPredictor::fixed(Design::from_columns(names(&["beta", "rho"]), &[&ones, lag])?, Link::Log)
                .with_offset(Offset { name: "log_births".into(), values: lb.into() });
            let disp = LinearPredictor::fixed(Design::from_columns(names(&["gamma0", "gamma1"]), &[&ones, ibn])?, Link::Log);
            if kind == ModelKind::SpatialPoisson {
                build_spec(LikelihoodFamily::Poisson, y, mean.with_random(per_level_effect(n)), Some(disp), priors)?
            } else {
                build_spec(LikelihoodFamily::NegativeBinomial { size: SizeSource::Modeled }, y, mean, Some(disp), priors)?
            }
        }
        ModelKind::GaussianGroups => {
            let group = data.group.as_ref().ok_or(SimError::MissingGroups)?;
            let p = data.n_groups();
            let x = column(data, "x", n)?;
            let z = column(data, "z", p)?;
            let mean =
                LinearPredictor::fixed(Design::from_columns(names(&["beta0", "beta1"]), &[&ones, x])?, Link::Identity);
            let disp = LinearPredictor::fixed(
                Design::from_columns(names(&["gamma0", "gamma1"]), &[&alloc::vec![1.0; p], z])?,
                Link::Log,
            )
            .with_random(group_effect(p));
            let fam = LikelihoodFamily::Gaussian { group: group.clone().into(), n_groups: p, precision: PrecisionSource::Modeled };
            build_spec(fam, y, mean, Some(disp), priors)?
        }
        ModelKind::SleepRandomSlopes | ModelKind::SleepFixed => {
            let group = data.group.as_ref().ok_or(SimError::MissingGroups)?;
            let p = data.n_groups();
            let day = column(data, "day", n)?;
            let mean = if kind == ModelKind::SleepFixed {
                LinearPredictor::fixed(Design::from_columns(names(&["beta0", "beta1"]), &[&ones, day])?, Link::Identity)
            } else {
                LinearPredictor::fixed(Design::from_columns(names(&["beta0"]), &[&ones])?, Link::Identity).with_random(
                    RandomEffect {
                        name: "beta".into(),
                        level: group.clone().into(),
                        n_levels: p,
                        covariate: Some(Arc::from(day)),
                        precision: PrecisionModel::Shared { name: "tau_beta".into() },
                    },
                )
            };
            let disp = LinearPredictor::fixed(Design::from_columns(names(&["gamma"]), &[&alloc::vec![1.0; p]])?, Link::Log)
                .with_random(group_effect(p));
            let fam = LikelihoodFamily::Gaussian { group: group.clone().into(), n_groups: p, precision: PrecisionSource::Modeled };
            build_spec(fam, y, mean, Some(disp), priors)?
        }
    };
    Ok(spec)
}

fn per_level_effect(n: usize) -> RandomEffect {
    RandomEffect {
        name: "u".into(),
        level: (0..n).collect::<Vec<_>>().into(),
        n_levels: n,
        covariate: None,
        precision: PrecisionModel::Dispersion,
    }
}

fn group_effect(p: usize) -> RandomEffect {
    RandomEffect {
        name: "u".into(),
        level: (0..p).collect::<Vec<_>>().into(),
        n_levels: p,
        covariate: None,
        precision: PrecisionModel::Shared { name: "tau_u".into() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::std_normal_cdf;
    use crate::model::derive_conditioning_plan;
    use alloc::vec;

    fn recipe(kind: RecipeKind, seed: u64) -> SimulationRecipe {
        SimulationRecipe { kind, seed }
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
    }

    fn ks(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn poisson_limit_without_overdispersion() {
        let r = recipe(RecipeKind::PoissonRe { n: 10_000, beta: [1.0, 0.0], gamma: [20.0, 0.0], x_range: (0.0, 1.0) }, 3);
        let d = simulate_poisson_re(&r).unwrap();
        let (m, v) = mean_var(&d.response);
        assert!((0.9..1.1).contains(&(v / m)), "ratio {}", v / m);
        let se = sqrt(exp(1.0) / 10_000.0);
        assert!((m - exp(1.0)).abs() < 3.0 * se);
        let empty = recipe(RecipeKind::PoissonRe { n: 0, beta: [1.0, 0.0], gamma: [0.0, 0.0], x_range: (0.0, 1.0) }, 3);
        assert_eq!(simulate_poisson_re(&empty), Err(SimError::Empty));
    }

    #[test]
    fn negbin_large_size_limit_and_standardization() {
        let r = recipe(
            RecipeKind::NegBin { n: 10_000, beta: [1.0, 0.0], gamma: [20.0, 0.0], x_range: (10.0, 20.0), z_range: (0.0, 20.0) },
            5,
        );
        let d = simulate_negbin(&r).unwrap();
        let (m, v) = mean_var(&d.response);
        assert!((0.9..1.1).contains(&(v / m)));
        let (zm, zv) = mean_var(d.column("z").unwrap());
        assert!(zm.abs() < 1e-12 && (sqrt(zv) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_group_precisions_match_their_truth() {
        let r = recipe(
            RecipeKind::GaussianGroups {
                p: 4,
                n_per_group: 10_000,
                beta: [1.0, 0.25],
                gamma: [0.5, 0.0],
                tau_u: 1e6,
                x_range: (0.0, 1.0),
                z_range: (-1.0, 1.0),
            },
            8,
        );
        let d = simulate_gaussian_groups(&r).unwrap();
        let g = d.group.as_ref().unwrap();
        let x = d.column("x").unwrap();
        for k in 0..4 {
            let resid: Vec<f64> = (0..d.len()).filter(|&i| g[i] == k).map(|i| d.response[i] - 1.0 - 0.25 * x[i]).collect();
            let prec = 1.0 / mean_var(&resid).1;
            assert!((prec / exp(0.5) - 1.0).abs() < 0.1, "group {k}: {prec}");
        }
        let single = recipe(
            RecipeKind::GaussianGroups { p: 1, n_per_group: 3, beta: [0.0; 2], gamma: [0.0; 2], tau_u: 1.0, x_range: (0.0, 1.0), z_range: (-1.0, 1.0) },
            1,
        );
        assert_eq!(simulate_gaussian_groups(&single).unwrap().n_groups(), 1);
    }

    #[test]
    fn covariates_follow_their_distributions() {
        let r = recipe(RecipeKind::PoissonRe { n: 100_000, beta: [0.0, 0.0], gamma: [0.0, 0.0], x_range: (0.0, 1.0) }, 2);
        let d = simulate_poisson_re(&r).unwrap();
        assert!(ks(d.column("x").unwrap().to_vec(), |v| v.clamp(0.0, 1.0)) < 0.01);
        assert!(ks(d.column("z").unwrap().to_vec(), std_normal_cdf) < 0.01);
    }

    #[test]
    fn generators_are_pure_and_columns_independent() {
        let a = recipe(RecipeKind::PoissonRe { n: 50, beta: [1.0, 0.25], gamma: [0.0, 0.5], x_range: (0.0, 1.0) }, 11);
        assert_eq!(simulate(&a).unwrap(), simulate(&a).unwrap());
        let mut b = a.clone();
        b.kind = RecipeKind::PoissonRe { n: 50, beta: [2.0, 0.25], gamma: [0.0, 0.5], x_range: (0.0, 1.0) };
        assert_eq!(simulate(&a).unwrap().column("z").unwrap(), simulate(&b).unwrap().column("z").unwrap());
    }

    #[test]
    fn lattice_is_rook_connected() {
        let a = lattice_adjacency(4, 8);
        let degree: Vec<f64> = (0..32).map(|i| (0..32).map(|j| a.get(i, j)).sum()).collect();
        assert_eq!(degree[0], 2.0);
        assert_eq!(degree[1], 3.0);
        assert_eq!(degree[9], 4.0);
        assert!(a.is_symmetric(0.0));
        let w = row_standardize(&a).unwrap();
        assert!((0..32).all(|i| ((0..32).map(|j| w.get(i, j)).sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn every_model_builds_and_has_a_plan() {
        let cases = [
            (RecipeKind::PoissonRe { n: 40, beta: [1.0, 0.25], gamma: [0.0, 0.5], x_range: (0.0, 1.0) }, ModelKind::PoissonRe),
            (
                RecipeKind::NegBin { n: 40, beta: [1.0, 0.25], gamma: [0.0, 5.0], x_range: (10.0, 20.0), z_range: (0.0, 20.0) },
                ModelKind::NegBin,
            ),
            (
                RecipeKind::GaussianGroups { p: 5, n_per_group: 8, beta: [1.0, 0.25], gamma: [0.0, 5.0], tau_u: 1.0, x_range: (0.0, 1.0), z_range: (-1.0, 1.0) },
                ModelKind::GaussianGroups,
            ),
            (RecipeKind::SpatialPoisson { rows: 4, cols: 8, beta: -4.9, rho: 0.042, gamma: [4.2, -0.042] }, ModelKind::SpatialPoisson),
            (RecipeKind::SpatialNegBin { rows: 4, cols: 8, beta: -4.9, rho: 0.042, gamma: [4.2, -0.042] }, ModelKind::SpatialNegBin),
            (
                RecipeKind::SleepLike { subjects: 18, days: 10, beta0: 0.26, slope: 0.0105, tau_beta: 8000.0, gamma: 7.0, tau_u: 1.5 },
                ModelKind::SleepRandomSlopes,
            ),
            (
                RecipeKind::SleepLike { subjects: 18, days: 10, beta0: 0.26, slope: 0.0105, tau_beta: 8000.0, gamma: 7.0, tau_u: 1.5 },
                ModelKind::SleepFixed,
            ),
        ];
        for (k, m) in cases {
            let d = simulate(&recipe(k, 4)).unwrap();
            let spec = build_model(m, &d, Priors::default()).unwrap();
            let plan = derive_conditioning_plan(&spec).unwrap();
            let expected = match m {
                ModelKind::GaussianGroups => 5,
                ModelKind::SleepRandomSlopes | ModelKind::SleepFixed => 18,
                _ => 2,
            };
            assert_eq!(plan.dim(), expected, "{}", m.as_str());
        }
    }

    #[test]
    fn dense_groups_in_order_of_appearance() {
        let (g, labels) = dense_groups(&["b", "a", "b", "c"]);
        assert_eq!(g, vec![0, 1, 0, 2]);
        assert_eq!(labels, vec!["b", "a", "c"]);
    }
}
