//! Splitting a model into a sampled conditioning vector and latent Gaussian
//! submodels.
//!
//! Two rules cover every supported structure. Without random effects in the
//! dispersion predictor, its coefficients are conditioned on and one
//! submodel remains. With them (Gaussian likelihood only), the per-group log
//! precisions are conditioned on: the observations form one submodel with
//! known precisions and the log precisions, treated as data, form a Gaussian
//! regression whose random effects integrate out into its residual precision.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::latent::{
    self, ConditionalFit, FitError, FitOptions, HyperKind, Hyperparameter, LatentGaussianSubproblem,
    ObservationModel, RandomBlock, RandomPrecision,
};
use crate::math::{exp, normal_ln_pdf};

use super::{
    Design, DhglmSpec, FamilyKind, LikelihoodFamily, LinearPredictor, Name, NormalPrior, PrecisionModel,
    PrecisionSource, SizeSource, SpecError,
};

/// Requested conditioning set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConditioningChoice {
    #[default]
    Auto,
    DispersionCoefficients,
    /// Dispersion coefficients together with the dispersion random effects.
    /// Always rejected: the sampled dimension grows with the number of groups
    /// and adds nothing over conditioning on the group precisions.
    DispersionCoefficientsAndEffects,
    GroupLogPrecisions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditioningRule {
    DispersionCoefficients,
    GroupLogPrecisions,
}

/// Map from the sampling scale to the model parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaTransform {
    Identity,
    /// The sampled value is the logarithm of a precision.
    Log,
}

impl ThetaTransform {
    pub fn to_natural(self, v: f64) -> f64 {
        match self {
            ThetaTransform::Identity => v,
            ThetaTransform::Log => exp(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaComponent {
    pub name: Name,
    pub transform: ThetaTransform,
    /// Prior on the sampling scale; `None` is the constant prior.
    pub prior: Option<NormalPrior>,
}

/// How a sampled `θ_c` becomes log-scale dispersion values.
#[derive(Clone, Debug, PartialEq)]
pub enum DispersionMap {
    /// `Z θ + offset`.
    Linear { design: Design, offset: Option<Arc<[f64]>> },
    /// `θ` itself.
    Direct,
}

impl DispersionMap {
    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            DispersionMap::Linear { design, offset } => {
                let mut v = design.mul_vec(theta);
                if let Some(o) = offset {
                    v.iter_mut().zip(o.iter()).for_each(|(a, b)| *a += b);
                }
                v
            }
            DispersionMap::Direct => theta.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NuisanceMap {
    None,
    /// Gaussian observations with log precision `map(θ)[group[i]]`.
    GaussianGroups { group: Arc<[usize]>, map: DispersionMap },
    /// Gaussian observations with unit base precision, scaled by the hyperparameter.
    GaussianUnit,
    /// Negative binomial with log size `map(θ)[i]`.
    NegBinSize { map: DispersionMap },
}

#[derive(Clone, Debug, PartialEq)]
pub enum RandomPrecisionMap {
    /// Per-level log precision `map(θ)`.
    PerLevel(DispersionMap),
    /// Shared precision integrated over as the submodel's hyperparameter.
    Hyper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSpec {
    pub name: Name,
    pub level: Arc<[usize]>,
    pub n_levels: usize,
    pub covariate: Option<Arc<[f64]>>,
    pub precision: RandomPrecisionMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubmodelRole {
    Observation,
    /// The sampled log precisions regressed on dispersion covariates.
    DispersionRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubmodelSpec {
    pub name: Name,
    pub role: SubmodelRole,
    pub family: FamilyKind,
    /// Observed data; `None` means the sampled `θ_c` is the response.
    pub response: Option<Arc<[f64]>>,
    pub fixed: Design,
    pub fixed_prior: Vec<NormalPrior>,
    pub offset: Option<Arc<[f64]>>,
    pub random: Option<RandomSpec>,
    pub nuisance: NuisanceMap,
    pub hyperparameter: Option<Hyperparameter>,
}

impl SubmodelSpec {
    fn instantiate(&self, theta: &[f64]) -> LatentGaussianSubproblem {
        let response = self.response.clone().unwrap_or_else(|| theta.to_vec().into());
        let n = response.len();
        let observation = match (&self.nuisance, self.family) {
            (NuisanceMap::GaussianGroups { group, map }, _) => {
                let lt = map.eval(theta);
                ObservationModel::Gaussian { precision: group.iter().map(|&g| exp(lt[g])).collect() }
            }
            (NuisanceMap::GaussianUnit, _) => ObservationModel::Gaussian { precision: alloc::vec![1.0; n] },
            (NuisanceMap::NegBinSize { map }, _) => ObservationModel::NegativeBinomial { ln_size: map.eval(theta) },
            (NuisanceMap::None, _) => ObservationModel::Poisson,
        };
        let random = self.random.as_ref().map(|r| RandomBlock {
            name: r.name.clone(),
            level: r.level.clone(),
            n_levels: r.n_levels,
            covariate: r.covariate.clone(),
            precision: match &r.precision {
                RandomPrecisionMap::PerLevel(map) => RandomPrecision::PerLevel(map.eval(theta).into_iter().map(exp).collect()),
                RandomPrecisionMap::Hyper => RandomPrecision::Shared(1.0),
            },
        });
        LatentGaussianSubproblem {
            name: self.name.clone(),
            response,
            observation,
            offset: self.offset.clone(),
            fixed: self.fixed.clone(),
            fixed_prior: self.fixed_prior.clone(),
            random,
            hyperparameter: self.hyperparameter.clone(),
        }
    }

    /// Names of the quantities this submodel reports marginals for.
    pub fn reported_names(&self) -> Vec<Name> {
        let mut v: Vec<Name> = self.fixed.names().to_vec();
        if let Some(h) = &self.hyperparameter {
            v.push(h.name.clone());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningPlan {
    pub rule: ConditioningRule,
    pub theta: Vec<ThetaComponent>,
    pub submodels: Vec<SubmodelSpec>,
    pub fit_options: FitOptions,
}

impl ConditioningPlan {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_names(&self) -> Vec<Name> {
        self.theta.iter().map(|c| c.name.clone()).collect()
    }

    /// Log prior density of `θ_c` on the sampling scale.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(theta)
            .filter_map(|(c, &v)| c.prior.map(|p| normal_ln_pdf(v, p.mean, p.precision)))
            .sum()
    }

    /// The latent Gaussian submodels obtained by fixing `θ_c`.
    pub fn instantiate(&self, theta: &[f64]) -> Result<Vec<LatentGaussianSubproblem>, FitError> {
        if theta.len() != self.dim() {
            return Err(FitError::InvalidInput("conditioning vector has the wrong dimension"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidInput("conditioning vector must be finite"));
        }
        Ok(self.submodels.iter().map(|s| s.instantiate(theta)).collect())
    }

    /// Fits every submodel at `θ_c`; the log marginal likelihood is the sum
    /// over submodels.
    pub fn evaluate(&self, theta: &[f64]) -> Result<ConditionalFit, FitError> {
        let fits = self
            .instantiate(theta)?
            .iter()
            .map(|s| latent::fit(s, self.fit_options))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConditionalFit::combine(fits))
    }

    /// Names reported by the submodels, in output order.
    pub fn reported_names(&self) -> Vec<Name> {
        self.submodels.iter().flat_map(|s| s.reported_names()).collect()
    }
}

fn no_split(msg: String) -> SpecError {
    SpecError::NoValidSplit(msg)
}

fn priors_for(spec: &DhglmSpec, design: &Design) -> Vec<NormalPrior> {
    design.names().iter().map(|n| spec.priors.coefficient(n)).collect()
}

fn linear_map(p: &LinearPredictor) -> DispersionMap {
    DispersionMap::Linear { design: p.design.clone(), offset: p.offset.as_ref().map(|o| o.values.clone()) }
}

/// Mean-model random block whose precision is either integrated over or
/// taken from the dispersion predictor.
fn mean_random(
    spec: &DhglmSpec,
    per_level: Option<DispersionMap>,
) -> Result<(Option<RandomSpec>, Option<Hyperparameter>), SpecError> {
    let Some(re) = &spec.mean.random else { return Ok((None, None)) };
    let (precision, hyper) = match (&re.precision, per_level) {
        (PrecisionModel::Dispersion, Some(map)) => (RandomPrecisionMap::PerLevel(map), None),
        (PrecisionModel::Dispersion, None) => {
            return Err(no_split("random-effect precisions refer to an unavailable dispersion predictor".into()))
        }
        (PrecisionModel::Shared { name }, _) => (
            RandomPrecisionMap::Hyper,
            Some(Hyperparameter {
                name: name.clone(),
                kind: HyperKind::RandomEffectPrecision,
                prior: spec.priors.precision(name),
            }),
        ),
        (PrecisionModel::Regression { .. }, _) => {
            return Err(no_split("covariate-dependent random-effect precisions are not supported by the fitter".into()))
        }
    };
    let spec = RandomSpec {
        name: re.name.clone(),
        level: re.level.clone(),
        n_levels: re.n_levels,
        covariate: re.covariate.clone(),
        precision,
    };
    Ok((Some(spec), hyper))
}

fn observation_submodel(
    spec: &DhglmSpec,
    nuisance: NuisanceMap,
    random: Option<RandomSpec>,
    hyperparameter: Option<Hyperparameter>,
) -> SubmodelSpec {
    SubmodelSpec {
        name: "observations".into(),
        role: SubmodelRole::Observation,
        family: spec.family.kind(),
        response: Some(spec.response.clone()),
        fixed: spec.mean.design.clone(),
        fixed_prior: priors_for(spec, &spec.mean.design),
        offset: spec.mean.offset.as_ref().map(|o| o.values.clone()),
        random,
        nuisance,
        hyperparameter,
    }
}

pub fn derive_conditioning_plan(spec: &DhglmSpec) -> Result<ConditioningPlan, SpecError> {
    derive_conditioning_plan_with(spec, ConditioningChoice::Auto)
}

pub fn derive_conditioning_plan_with(spec: &DhglmSpec, choice: ConditioningChoice) -> Result<ConditioningPlan, SpecError> {
    let Some(disp) = &spec.dispersion else {
        return Err(no_split(
            "the model has no dispersion predictor, so nothing needs conditioning; it is latent Gaussian as stated".into(),
        ));
    };
    let has_effects = disp.random.is_some();
    let rule = match choice {
        ConditioningChoice::Auto if has_effects => ConditioningRule::GroupLogPrecisions,
        ConditioningChoice::Auto => ConditioningRule::DispersionCoefficients,
        ConditioningChoice::DispersionCoefficients if has_effects => {
            return Err(no_split(
                "the dispersion predictor has random effects; conditioning on its coefficients alone leaves a non-Gaussian latent field"
                    .into(),
            ))
        }
        ConditioningChoice::DispersionCoefficients => ConditioningRule::DispersionCoefficients,
        ConditioningChoice::DispersionCoefficientsAndEffects => {
            return Err(no_split(format!(
                "conditioning on the dispersion coefficients and random effects samples {} dimensions where the group log precisions need only {}; condition on the group log precisions instead",
                disp.design.cols() + disp.random.as_ref().map_or(0, |r| r.n_levels),
                disp.design.rows()
            )))
        }
        ConditioningChoice::GroupLogPrecisions => ConditioningRule::GroupLogPrecisions,
    };
    let plan = match rule {
        ConditioningRule::DispersionCoefficients => coefficient_plan(spec, disp)?,
        ConditioningRule::GroupLogPrecisions => precision_plan(spec, disp)?,
    };
    Ok(plan)
}

fn coefficient_plan(spec: &DhglmSpec, disp: &LinearPredictor) -> Result<ConditioningPlan, SpecError> {
    let map = linear_map(disp);
    let theta = disp
        .design
        .names()
        .iter()
        .map(|n| ThetaComponent { name: n.clone(), transform: ThetaTransform::Identity, prior: Some(spec.priors.coefficient(n)) })
        .collect();
    let submodel = match &spec.family {
        LikelihoodFamily::Poisson => {
            let (random, hyper) = mean_random(spec, Some(map))?;
            observation_submodel(spec, NuisanceMap::None, random, hyper)
        }
        LikelihoodFamily::NegativeBinomial { size: SizeSource::Modeled } => {
            let (random, hyper) = mean_random(spec, None)?;
            observation_submodel(spec, NuisanceMap::NegBinSize { map }, random, hyper)
        }
        LikelihoodFamily::Gaussian { group, precision: PrecisionSource::Modeled, .. } => {
            let (random, hyper) = mean_random(spec, None)?;
            observation_submodel(spec, NuisanceMap::GaussianGroups { group: group.clone(), map }, random, hyper)
        }
        _ => return Err(no_split("nuisance values are known; nothing to condition on".into())),
    };
    Ok(ConditioningPlan {
        rule: ConditioningRule::DispersionCoefficients,
        theta,
        submodels: alloc::vec![submodel],
        fit_options: FitOptions::default(),
    })
}

fn precision_plan(spec: &DhglmSpec, disp: &LinearPredictor) -> Result<ConditioningPlan, SpecError> {
    let LikelihoodFamily::Gaussian { group, n_groups, precision: PrecisionSource::Modeled } = &spec.family else {
        return Err(no_split(format!(
            "the dispersion predictor has random effects and a {} likelihood; its log dispersion is not a Gaussian response",
            spec.family.kind().as_str()
        )));
    };
    let re = disp.random.as_ref().ok_or_else(|| {
        no_split("conditioning on group log precisions needs random effects in the dispersion predictor".into())
    })?;
    let mut seen = alloc::vec![false; re.n_levels];
    let bijective = re.n_levels == *n_groups && re.level.iter().all(|&l| !core::mem::replace(&mut seen[l], true));
    if !bijective || re.covariate.is_some() {
        return Err(no_split("dispersion random effects must be one independent intercept per group".into()));
    }
    let PrecisionModel::Shared { name: tau_name } = &re.precision else {
        return Err(no_split("dispersion random effects need a single shared precision".into()));
    };

    let theta = (0..*n_groups)
        .map(|g| ThetaComponent { name: format!("log_tau[{}]", g + 1).into(), transform: ThetaTransform::Log, prior: None })
        .collect();
    let (random, hyper) = mean_random(spec, None)?;
    let observations = observation_submodel(
        spec,
        NuisanceMap::GaussianGroups { group: group.clone(), map: DispersionMap::Direct },
        random,
        hyper,
    );
    let regression = SubmodelSpec {
        name: "log_precisions".into(),
        role: SubmodelRole::DispersionRegression,
        family: FamilyKind::Gaussian,
        response: None,
        fixed: disp.design.clone(),
        fixed_prior: priors_for(spec, &disp.design),
        offset: disp.offset.as_ref().map(|o| o.values.clone()),
        random: None,
        nuisance: NuisanceMap::GaussianUnit,
        hyperparameter: Some(Hyperparameter {
            name: tau_name.clone(),
            kind: HyperKind::ObservationPrecision,
            prior: spec.priors.precision(tau_name),
        }),
    };
    Ok(ConditioningPlan {
        rule: ConditioningRule::GroupLogPrecisions,
        theta,
        submodels: alloc::vec![observations, regression],
        fit_options: FitOptions::default(),
    })
}
