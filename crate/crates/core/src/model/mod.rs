//! Declarative model structure: likelihood families, linear predictors for the
//! mean and the dispersion, random-effect precision models and priors.

pub(crate) mod plan;
mod spatial;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

pub use plan::{
    derive_conditioning_plan, derive_conditioning_plan_with, ConditioningChoice, ConditioningPlan,
    ConditioningRule, DispersionMap, NuisanceMap, RandomPrecisionMap, RandomSpec, SubmodelRole,
    SubmodelSpec, ThetaComponent, ThetaTransform,
};
pub use spatial::{row_standardize, spatial_lag, SpatialError};

/// Shared, cheaply cloned parameter name.
pub type Name = Arc<str>;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch { what: String, expected: usize, found: usize },
    #[error("{0} design matrix has no rows")]
    EmptyDesign(String),
    #[error("dispersion predictor must have at least one column")]
    EmptyDispersionDesign,
    #[error("unsupported likelihood family `{0}`")]
    UnsupportedFamily(String),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("{what} index {index} is out of range for {levels} levels")]
    IndexOutOfRange { what: String, index: usize, levels: usize },
    #[error("group {0} has no observations")]
    EmptyGroup(usize),
    #[error("invalid value in {what}: {detail}")]
    InvalidValue { what: String, detail: String },
    #[error("no valid conditioning split: {0}")]
    NoValidSplit(String),
}

fn mismatch(what: &str, expected: usize, found: usize) -> SpecError {
    SpecError::DimensionMismatch { what: what.into(), expected, found }
}

fn invalid(what: &str, detail: &str) -> SpecError {
    SpecError::InvalidValue { what: what.into(), detail: detail.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FamilyKind {
    Gaussian,
    Poisson,
    NegativeBinomial,
}

impl FamilyKind {
    pub fn parse(s: &str) -> Result<Self, SpecError> {
        match s {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "poisson" => Ok(Self::Poisson),
            "negative_binomial" | "negbin" | "nb" => Ok(Self::NegativeBinomial),
            other => Err(SpecError::UnsupportedFamily(other.into())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Poisson => "poisson",
            Self::NegativeBinomial => "negative_binomial",
        }
    }

    /// Variance function `V(μ)`; the negative binomial needs its size `k`.
    pub fn variance_function(self, mu: f64, size: f64) -> f64 {
        match self {
            Self::Gaussian => 1.0,
            Self::Poisson => mu,
            Self::NegativeBinomial => mu + mu * mu / size,
        }
    }

    pub fn canonical_link(self) -> Link {
        match self {
            Self::Gaussian => Link::Identity,
            Self::Poisson | Self::NegativeBinomial => Link::Log,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Link {
    Identity,
    Log,
}

/// Where per-group Gaussian precisions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PrecisionSource {
    Known(Vec<f64>),
    Modeled,
}

/// Where per-observation negative binomial sizes come from.
#[derive(Clone, Debug, PartialEq)]
pub enum SizeSource {
    Known(Vec<f64>),
    Modeled,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LikelihoodFamily {
    /// Observations grouped by `group` (dense, 0-based), one precision per group.
    Gaussian { group: Arc<[usize]>, n_groups: usize, precision: PrecisionSource },
    Poisson,
    NegativeBinomial { size: SizeSource },
}

impl LikelihoodFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            Self::Gaussian { .. } => FamilyKind::Gaussian,
            Self::Poisson => FamilyKind::Poisson,
            Self::NegativeBinomial { .. } => FamilyKind::NegativeBinomial,
        }
    }

    pub fn has_nuisance(&self) -> bool {
        !matches!(self, Self::Poisson)
    }
}

/// Dense design matrix with one label per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    rows: usize,
    names: Vec<Name>,
    data: Arc<[f64]>,
}

impl Design {
    /// Row-major `rows × names.len()` data.
    pub fn new(rows: usize, names: Vec<Name>, data: Vec<f64>) -> Result<Self, SpecError> {
        if data.len() != rows * names.len() {
            return Err(mismatch("design data", rows * names.len(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("design", "non-finite entry"));
        }
        Ok(Self { rows, names, data: data.into() })
    }

    pub fn from_columns(names: Vec<Name>, columns: &[&[f64]]) -> Result<Self, SpecError> {
        if names.len() != columns.len() {
            return Err(mismatch("design columns", names.len(), columns.len()));
        }
        let rows = columns.first().map_or(0, |c| c.len());
        if let Some(c) = columns.iter().find(|c| c.len() != rows) {
            return Err(mismatch("design column", rows, c.len()));
        }
        let mut data = Vec::with_capacity(rows * columns.len());
        for i in 0..rows {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Self::new(rows, names, data)
    }

    /// A single column of ones.
    pub fn intercept(rows: usize, name: &str) -> Self {
        Self { rows, names: alloc::vec![name.into()], data: alloc::vec![1.0; rows].into() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[Name] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.data[i * p..(i + 1) * p]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `X b`.
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(b).map(|(x, c)| x * c).sum()).collect()
    }
}

/// Named offset added to a linear predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Offset {
    pub name: Name,
    pub values: Arc<[f64]>,
}

/// Precision model for a random-effect block.
#[derive(Clone, Debug, PartialEq)]
pub enum PrecisionModel {
    /// One precision per level, given by the exponentiated dispersion predictor.
    Dispersion,
    /// A single shared precision with a Gamma prior.
    Shared { name: Name },
    /// Log precision regressed on covariates. Declared for completeness; no
    /// conditioning rule supports it.
    Regression { design: Design },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomEffect {
    pub name: Name,
    /// Level of each predictor row.
    pub level: Arc<[usize]>,
    pub n_levels: usize,
    /// Multiplies the effect row-wise (random slopes); `None` for random intercepts.
    pub covariate: Option<Arc<[f64]>>,
    pub precision: PrecisionModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPredictor {
    pub design: Design,
    pub offset: Option<Offset>,
    pub random: Option<RandomEffect>,
    pub link: Link,
}

impl LinearPredictor {
    pub fn fixed(design: Design, link: Link) -> Self {
        Self { design, offset: None, random: None, link }
    }

    pub fn with_offset(mut self, offset: Offset) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn with_random(mut self, random: RandomEffect) -> Self {
        self.random = Some(random);
        self
    }
}

/// `N(mean, 1/precision)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalPrior {
    pub mean: f64,
    pub precision: f64,
}

impl Default for NormalPrior {
    fn default() -> Self {
        Self { mean: 0.0, precision: 0.001 }
    }
}

/// `Gamma(shape, rate)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 0.00005 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Priors {
    pub coefficient_default: NormalPrior,
    pub precision_default: GammaPrior,
    pub coefficients: BTreeMap<Name, NormalPrior>,
    pub precisions: BTreeMap<Name, GammaPrior>,
}

impl Priors {
    pub fn coefficient(&self, name: &str) -> NormalPrior {
        self.coefficients.get(name).copied().unwrap_or(self.coefficient_default)
    }

    pub fn precision(&self, name: &str) -> GammaPrior {
        self.precisions.get(name).copied().unwrap_or(self.precision_default)
    }

    fn validate(&self) -> Result<(), SpecError> {
        let normals = core::iter::once(&self.coefficient_default).chain(self.coefficients.values());
        for p in normals {
            if !(p.precision > 0.0 && p.precision.is_finite() && p.mean.is_finite()) {
                return Err(invalid("coefficient prior", "precision must be positive and finite"));
            }
        }
        let gammas = core::iter::once(&self.precision_default).chain(self.precisions.values());
        for g in gammas {
            if !(g.shape > 0.0 && g.rate > 0.0 && g.shape.is_finite() && g.rate.is_finite()) {
                return Err(invalid("precision prior", "shape and rate must be positive"));
            }
        }
        Ok(())
    }
}

/// A validated model description.
#[derive(Clone, Debug, PartialEq)]
pub struct DhglmSpec {
    pub family: LikelihoodFamily,
    pub response: Arc<[f64]>,
    pub mean: LinearPredictor,
    pub dispersion: Option<LinearPredictor>,
    pub priors: Priors,
}

impl DhglmSpec {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }
}

pub fn build_spec(
    family: LikelihoodFamily,
    response: Vec<f64>,
    mean: LinearPredictor,
    dispersion: Option<LinearPredictor>,
    priors: Priors,
) -> Result<DhglmSpec, SpecError> {
    let n = response.len();
    if n == 0 {
        return Err(SpecError::EmptyDesign("response".into()));
    }
    if response.iter().any(|y| !y.is_finite()) {
        return Err(invalid("response", "non-finite value"));
    }
    priors.validate()?;
    check_predictor("mean", &mean, n)?;
    if mean.design.cols() == 0 && mean.random.is_none() {
        return Err(invalid("mean predictor", "needs at least one term"));
    }
    let kind = family.kind();
    if mean.link != kind.canonical_link() {
        return Err(SpecError::UnsupportedCombination(alloc::format!(
            "{} likelihood requires the {:?} link for the mean",
            kind.as_str(),
            kind.canonical_link()
        )));
    }
    if let Some(d) = &dispersion {
        if d.design.cols() == 0 {
            return Err(SpecError::EmptyDispersionDesign);
        }
        if d.link != Link::Log {
            return Err(SpecError::UnsupportedCombination(
                "the dispersion predictor models a log precision or log size".into(),
            ));
        }
        if let Some(re) = &d.random {
            if matches!(re.precision, PrecisionModel::Dispersion) {
                return Err(SpecError::UnsupportedCombination(
                    "dispersion random effects cannot take their precision from the dispersion predictor".into(),
                ));
            }
        }
    }
    if let Some(re) = &mean.random {
        let by_dispersion = matches!(re.precision, PrecisionModel::Dispersion);
        if by_dispersion && kind != FamilyKind::Poisson {
            return Err(SpecError::UnsupportedCombination(alloc::format!(
                "per-level random-effect precisions from the dispersion predictor need a Poisson likelihood, not {}",
                kind.as_str()
            )));
        }
    }

    if kind != FamilyKind::Gaussian && response.iter().any(|&y| y < 0.0 || y != libm::floor(y)) {
        return Err(invalid("response", "count likelihoods need non-negative integers"));
    }

    match &family {
        LikelihoodFamily::Poisson => {
            let per_level = mean.random.as_ref().filter(|re| matches!(re.precision, PrecisionModel::Dispersion));
            match (&dispersion, per_level) {
                (Some(d), Some(re)) => check_predictor("dispersion", d, re.n_levels)?,
                (Some(_), None) => {
                    return Err(SpecError::UnsupportedCombination(
                        "a Poisson dispersion predictor needs a mean random effect whose precision it models".into(),
                    ))
                }
                (None, Some(_)) => {
                    return Err(SpecError::UnsupportedCombination(
                        "random-effect precision references a missing dispersion predictor".into(),
                    ))
                }
                (None, None) => {}
            }
        }
        LikelihoodFamily::NegativeBinomial { size } => match (size, &dispersion) {
            (SizeSource::Modeled, Some(d)) => check_predictor("dispersion", d, n)?,
            (SizeSource::Modeled, None) => {
                return Err(SpecError::UnsupportedCombination("modeled size needs a dispersion predictor".into()))
            }
            (SizeSource::Known(k), None) => {
                if k.len() != n {
                    return Err(mismatch("known sizes", n, k.len()));
                }
                if k.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(invalid("known sizes", "must be positive and finite"));
                }
            }
            (SizeSource::Known(_), Some(_)) => {
                return Err(SpecError::UnsupportedCombination(
                    "known sizes conflict with a dispersion predictor".into(),
                ))
            }
        },
        LikelihoodFamily::Gaussian { group, n_groups, precision } => {
            if group.len() != n {
                return Err(mismatch("group index", n, group.len()));
            }
            check_levels("group", group, *n_groups)?;
            let mut seen = alloc::vec![false; *n_groups];
            group.iter().for_each(|&g| seen[g] = true);
            if let Some(g) = seen.iter().position(|s| !s) {
                return Err(SpecError::EmptyGroup(g));
            }
            match (precision, &dispersion) {
                (PrecisionSource::Modeled, Some(d)) => check_predictor("dispersion", d, *n_groups)?,
                (PrecisionSource::Modeled, None) => {
                    return Err(SpecError::UnsupportedCombination(
                        "modeled precisions need a dispersion predictor".into(),
                    ))
                }
                (PrecisionSource::Known(t), None) => {
                    if t.len() != *n_groups {
                        return Err(mismatch("known precisions", *n_groups, t.len()));
                    }
                    if t.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                        return Err(invalid("known precisions", "must be positive and finite"));
                    }
                }
                (PrecisionSource::Known(_), Some(_)) => {
                    return Err(SpecError::UnsupportedCombination(
                        "known precisions conflict with a dispersion predictor".into(),
                    ))
                }
            }
        }
    }

    Ok(DhglmSpec { family, response: response.into(), mean, dispersion, priors })
}

fn check_levels(what: &str, level: &[usize], n_levels: usize) -> Result<(), SpecError> {
    if n_levels == 0 {
        return Err(invalid(what, "needs at least one level"));
    }
    match level.iter().find(|&&l| l >= n_levels) {
        Some(&index) => Err(SpecError::IndexOutOfRange { what: what.into(), index, levels: n_levels }),
        None => Ok(()),
    }
}

fn check_predictor(what: &str, p: &LinearPredictor, rows: usize) -> Result<(), SpecError> {
    if p.design.rows() == 0 {
        return Err(SpecError::EmptyDesign(what.into()));
    }
    if p.design.rows() != rows {
        return Err(mismatch(&alloc::format!("{what} design rows"), rows, p.design.rows()));
    }
    if let Some(o) = &p.offset {
        if o.values.len() != rows {
            return Err(mismatch(&alloc::format!("{what} offset"), rows, o.values.len()));
        }
        if o.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("offset", "non-finite value"));
        }
    }
    if let Some(re) = &p.random {
        if re.level.len() != rows {
            return Err(mismatch(&alloc::format!("{what} random-effect index"), rows, re.level.len()));
        }
        check_levels(&alloc::format!("{what} random effect"), &re.level, re.n_levels)?;
        if let Some(c) = &re.covariate {
            if c.len() != rows {
                return Err(mismatch(&alloc::format!("{what} random-slope covariate"), rows, c.len()));
            }
        }
        if let PrecisionModel::Regression { design } = &re.precision {
            if design.rows() != re.n_levels {
                return Err(mismatch("precision regression rows", re.n_levels, design.rows()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::vec;

    fn names(ns: &[&str]) -> Vec<Name> {
        ns.iter().map(|&s| Name::from(s)).collect()
    }

    pub(crate) fn poisson_re_spec(n: usize) -> DhglmSpec {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let ones = vec![1.0; n];
        let mean = LinearPredictor::fixed(
            Design::from_columns(names(&["beta0", "beta1"]), &[&ones, &x]).unwrap(),
            Link::Log,
        )
        .with_random(RandomEffect {
            name: "u".into(),
            level: (0..n).collect::<Vec<_>>().into(),
            n_levels: n,
            covariate: None,
            precision: PrecisionModel::Dispersion,
        });
        let disp =
            LinearPredictor::fixed(Design::from_columns(names(&["gamma0", "gamma1"]), &[&ones, &z]).unwrap(), Link::Log);
        let y: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        build_spec(LikelihoodFamily::Poisson, y, mean, Some(disp), Priors::default()).unwrap()
    }

    #[test]
    fn poisson_random_effect_spec_is_valid() {
        let s = poisson_re_spec(20);
        assert_eq!(s.n_obs(), 20);
        assert_eq!(s.dispersion.as_ref().unwrap().design.cols(), 2);
    }

    #[test]
    fn zero_column_dispersion_rejected() {
        let n = 4;
        let mean = LinearPredictor::fixed(Design::intercept(n, "beta0"), Link::Identity);
        let disp = LinearPredictor::fixed(Design::new(1, vec![], vec![]).unwrap(), Link::Log);
        let fam = LikelihoodFamily::Gaussian {
            group: vec![0; n].into(),
            n_groups: 1,
            precision: PrecisionSource::Modeled,
        };
        let err = build_spec(fam, vec![0.0; n], mean, Some(disp), Priors::default()).unwrap_err();
        assert_eq!(err, SpecError::EmptyDispersionDesign);
    }

    #[test]
    fn negbin_log_size_spec_is_valid() {
        let n = 6;
        let ones = vec![1.0; n];
        let x: Vec<f64> = (0..n).map(|i| 10.0 + i as f64).collect();
        let z: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mean = LinearPredictor::fixed(Design::from_columns(names(&["b0", "b1"]), &[&ones, &x]).unwrap(), Link::Log);
        let disp = LinearPredictor::fixed(Design::from_columns(names(&["g0", "g1"]), &[&ones, &z]).unwrap(), Link::Log);
        let fam = LikelihoodFamily::NegativeBinomial { size: SizeSource::Modeled };
        let spec = build_spec(fam, vec![3.0, 0.0, 1.0, 8.0, 2.0, 5.0], mean, Some(disp), Priors::default()).unwrap();
        assert_eq!(spec.family.kind(), FamilyKind::NegativeBinomial);
    }

    #[test]
    fn binomial_and_dimension_errors() {
        assert!(matches!(FamilyKind::parse("binomial"), Err(SpecError::UnsupportedFamily(_))));
        let mean = LinearPredictor::fixed(Design::intercept(3, "b0"), Link::Log);
        let err = build_spec(LikelihoodFamily::Poisson, vec![1.0, 2.0], mean, None, Priors::default()).unwrap_err();
        assert!(matches!(err, SpecError::DimensionMismatch { .. }));
    }

    #[test]
    fn link_must_match_family() {
        let mean = LinearPredictor::fixed(Design::intercept(2, "b0"), Link::Identity);
        let err = build_spec(LikelihoodFamily::Poisson, vec![1.0, 2.0], mean, None, Priors::default()).unwrap_err();
        assert!(matches!(err, SpecError::UnsupportedCombination(_)));
    }

    #[test]
    fn count_response_must_be_integral() {
        let mean = LinearPredictor::fixed(Design::intercept(2, "b0"), Link::Log);
        assert!(build_spec(LikelihoodFamily::Poisson, vec![1.5, 2.0], mean, None, Priors::default()).is_err());
    }

    #[test]
    fn negbin_variance_function() {
        for &(mu, k) in &[(0.5, 0.1), (3.0, 2.0), (40.0, 1e4)] {
            let v = FamilyKind::NegativeBinomial.variance_function(mu, k);
            assert!((v - (mu + mu * mu / k)).abs() < 1e-12 * v);
        }
        assert_eq!(FamilyKind::Poisson.variance_function(3.0, f64::NAN), 3.0);
        assert!(!LikelihoodFamily::Poisson.has_nuisance());
    }

    #[test]
    fn default_priors() {
        let p = Priors::default();
        assert_eq!(p.coefficient("anything"), NormalPrior { mean: 0.0, precision: 0.001 });
        assert_eq!(p.precision("tau"), GammaPrior { shape: 1.0, rate: 0.00005 });
    }
}
