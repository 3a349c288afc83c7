//! TOML documents: run configuration, model description and a lossless
//! serialization of a built model.
//!
//! Every document starts with a `format` key naming its schema and version,
//! for example `format = "dhglm-run/1"`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dhglm_core::amis::ProposalFamily;
use dhglm_core::model::{
    build_spec, ConditioningChoice, Design, DhglmSpec, FamilyKind, GammaPrior, LikelihoodFamily, LinearPredictor, Link,
    Name, NormalPrior, Offset, PrecisionModel, PrecisionSource, Priors, RandomEffect, SizeSource, SpecError,
};
use dhglm_core::sim::{Dataset, ModelKind, SimError, SimulationRecipe};
use serde::{Deserialize, Serialize};

use crate::presets::{AmisSettings, DataSource, Experiment, Method, Preset, ProposalInit, Scale};

pub const RUN_FORMAT: &str = "dhglm-run/1";
pub const MODEL_FORMAT: &str = "dhglm-model/1";
pub const RECIPE_FORMAT: &str = "dhglm-recipe/1";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("could not write TOML: {0}")]
    Write(#[from] toml::ser::Error),
    #[error("unsupported format `{found}`, expected `{expected}`")]
    Format { expected: &'static str, found: String },
    #[error("no preset given; pass --preset or set `preset` in the config file")]
    NoPreset,
    #[error("model uses column `{0}`, which the data do not have")]
    MissingColumn(String),
    #[error("model needs grouped data")]
    NoGroups,
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn check_format(found: &str, expected: &'static str) -> Result<(), ConfigError> {
    if found == expected {
        Ok(())
    } else {
        Err(ConfigError::Format { expected, found: found.to_owned() })
    }
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })
}

/// Prior settings; anything left out keeps the built-in default
/// (`N(0, precision 0.001)` for coefficients, `Gamma(1, 5e-5)` for precisions).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient_default: Option<NormalPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_default: Option<GammaPrior>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coefficients: BTreeMap<String, NormalPrior>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub precisions: BTreeMap<String, GammaPrior>,
}

impl PriorsConfig {
    pub fn to_priors(&self) -> Priors {
        let d = Priors::default();
        Priors {
            coefficient_default: self.coefficient_default.unwrap_or(d.coefficient_default),
            precision_default: self.precision_default.unwrap_or(d.precision_default),
            coefficients: self.coefficients.iter().map(|(k, v)| (Name::from(k.as_str()), *v)).collect(),
            precisions: self.precisions.iter().map(|(k, v)| (Name::from(k.as_str()), *v)).collect(),
        }
    }

    pub fn from_priors(p: &Priors) -> Self {
        Self {
            coefficient_default: Some(p.coefficient_default),
            precision_default: Some(p.precision_default),
            coefficients: p.coefficients.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            precisions: p.precisions.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Which rows a random effect indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Levels {
    /// One level per row of the predictor.
    Row,
    /// One level per data group.
    Group,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionConfig {
    /// Per-level precision from the dispersion predictor.
    Dispersion,
    /// One precision with a Gamma prior, named by the value.
    Shared(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    pub name: String,
    pub levels: Levels,
    /// Multiplies the effect (random slopes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    pub precision: PrecisionConfig,
}

/// A linear predictor as a term list: `[coefficient, column]` pairs where
/// the column `"1"` is an intercept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    #[serde(default)]
    pub terms: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomConfig>,
}

/// Model description over the columns of a dataset.
///
/// For the Gaussian family the dispersion predictor is over groups and its
/// columns are group-level; otherwise both predictors are over observations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyKind,
    pub mean: PredictorConfig,
    pub dispersion: PredictorConfig,
    #[serde(default)]
    pub conditioning: ConditioningChoice,
}

fn terms(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|&(a, b)| (a.to_owned(), b.to_owned())).collect()
}

fn random(name: &str, levels: Levels, covariate: Option<&str>, precision: PrecisionConfig) -> Option<RandomConfig> {
    Some(RandomConfig { name: name.into(), levels, covariate: covariate.map(Into::into), precision })
}

impl ModelConfig {
    /// The built-in models written as term lists.
    pub fn for_kind(kind: ModelKind) -> Self {
        let plain = |t: &[(&str, &str)]| PredictorConfig { terms: terms(t), offset: None, random: None };
        let tau_u = || random("u", Levels::Row, None, PrecisionConfig::Shared("tau_u".into()));
        let (family, mean, dispersion) = match kind {
            ModelKind::PoissonRe => (
                FamilyKind::Poisson,
                PredictorConfig {
                    random: random("u", Levels::Row, None, PrecisionConfig::Dispersion),
                    ..plain(&[("beta0", "1"), ("beta1", "x")])
                },
                plain(&[("gamma0", "1"), ("gamma1", "z")]),
            ),
            ModelKind::NegBin => {
                (FamilyKind::NegativeBinomial, plain(&[("beta0", "1"), ("beta1", "x")]), plain(&[("gamma0", "1"), ("gamma1", "z")]))
            }
            ModelKind::SpatialPoisson | ModelKind::SpatialNegBin => {
                let poisson = kind == ModelKind::SpatialPoisson;
                (
                    if poisson { FamilyKind::Poisson } else { FamilyKind::NegativeBinomial },
                    PredictorConfig {
                        terms: terms(&[("beta", "1"), ("rho", "lag")]),
                        offset: Some("log_births".into()),
                        random: if poisson { random("u", Levels::Row, None, PrecisionConfig::Dispersion) } else { None },
                    },
                    plain(&[("gamma0", "1"), ("gamma1", "ibn")]),
                )
            }
            ModelKind::GaussianGroups => (
                FamilyKind::Gaussian,
                plain(&[("beta0", "1"), ("beta1", "x")]),
                PredictorConfig { random: tau_u(), ..plain(&[("gamma0", "1"), ("gamma1", "z")]) },
            ),
            ModelKind::SleepRandomSlopes => (
                FamilyKind::Gaussian,
                PredictorConfig {
                    random: random("beta", Levels::Group, Some("day"), PrecisionConfig::Shared("tau_beta".into())),
                    ..plain(&[("beta0", "1")])
                },
                PredictorConfig { random: tau_u(), ..plain(&[("gamma", "1")]) },
            ),
            ModelKind::SleepFixed => (
                FamilyKind::Gaussian,
                plain(&[("beta0", "1"), ("beta1", "day")]),
                PredictorConfig { random: tau_u(), ..plain(&[("gamma", "1")]) },
            ),
        };
        Self { family, mean, dispersion, conditioning: ConditioningChoice::Auto }
    }

    /// Builds the model over `data`.
    pub fn build(&self, data: &Dataset, priors: Priors) -> Result<DhglmSpec, ConfigError> {
        data.validate().map_err(|e| match e {
            SimError::Spec(s) => ConfigError::Spec(s),
            other => ConfigError::Spec(SpecError::InvalidValue { what: "dataset".into(), detail: other.to_string() }),
        })?;
        let n = data.len();
        let groups = || data.group.as_ref().ok_or(ConfigError::NoGroups);
        let family = match self.family {
            FamilyKind::Gaussian => {
                let g = groups()?;
                LikelihoodFamily::Gaussian { group: g.clone().into(), n_groups: data.n_groups(), precision: PrecisionSource::Modeled }
            }
            FamilyKind::Poisson => LikelihoodFamily::Poisson,
            FamilyKind::NegativeBinomial => LikelihoodFamily::NegativeBinomial { size: SizeSource::Modeled },
        };
        let disp_rows = if self.family == FamilyKind::Gaussian { data.n_groups() } else { n };
        let mean_link = self.family.canonical_link();
        let mean = self.predictor(&self.mean, data, n, mean_link)?;
        let dispersion = self.predictor(&self.dispersion, data, disp_rows, Link::Log)?;
        Ok(build_spec(family, data.response.clone(), mean, Some(dispersion), priors)?)
    }

    fn predictor(&self, p: &PredictorConfig, data: &Dataset, rows: usize, link: Link) -> Result<LinearPredictor, ConfigError> {
        let col = |name: &str| -> Result<Vec<f64>, ConfigError> {
            if name == "1" {
                return Ok(vec![1.0; rows]);
            }
            let c = data.column(name).map_err(|_| ConfigError::MissingColumn(name.into()))?;
            if c.len() != rows {
                return Err(ConfigError::MissingColumn(format!("{name} (with {rows} rows)")));
            }
            Ok(c.to_vec())
        };
        let names: Vec<Name> = p.terms.iter().map(|(n, _)| Name::from(n.as_str())).collect();
        let columns = p.terms.iter().map(|(_, c)| col(c)).collect::<Result<Vec<_>, _>>()?;
        let design = if columns.is_empty() {
            Design::new(rows, Vec::new(), Vec::new())?
        } else {
            Design::from_columns(names, &columns.iter().map(Vec::as_slice).collect::<Vec<_>>())?
        };
        let mut lp = LinearPredictor::fixed(design, link);
        if let Some(o) = &p.offset {
            lp = lp.with_offset(Offset { name: o.as_str().into(), values: col(o)?.into() });
        }
        if let Some(r) = &p.random {
            let (level, n_levels): (Vec<usize>, usize) = match r.levels {
                Levels::Row => ((0..rows).collect(), rows),
                Levels::Group => {
                    let g = data.group.as_ref().ok_or(ConfigError::NoGroups)?;
                    if g.len() != rows {
                        return Err(ConfigError::NoGroups);
                    }
                    (g.clone(), data.n_groups())
                }
            };
            let precision = match &r.precision {
                PrecisionConfig::Dispersion => PrecisionModel::Dispersion,
                PrecisionConfig::Shared(name) => PrecisionModel::Shared { name: name.as_str().into() },
            };
            let covariate = r.covariate.as_deref().map(col).transpose()?.map(Arc::from);
            lp = lp.with_random(RandomEffect { name: r.name.as_str().into(), level: level.into(), n_levels, covariate, precision });
        }
        Ok(lp)
    }
}

/// Partial AMIS settings; unset fields keep the preset's values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmisOverrides {
    pub n_initial: Option<usize>,
    pub n_stages: Option<usize>,
    pub n_per_stage: Option<usize>,
    pub family: Option<ProposalFamily>,
    pub init: Option<ProposalInit>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcOverrides {
    pub burn_in: Option<usize>,
    pub iterations: Option<usize>,
    pub thin: Option<usize>,
    pub initial_steps: Option<BTreeMap<String, f64>>,
    pub keep_random_effects: Option<bool>,
}

/// Contents of a `--config` file. Command-line flags take precedence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    pub preset: Option<Preset>,
    pub method: Option<Method>,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<DataSource>,
    pub model: Option<ModelConfig>,
    pub priors: Option<PriorsConfig>,
    pub amis: Option<AmisOverrides>,
    pub mcmc: Option<McmcOverrides>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: RUN_FORMAT.into(),
            preset: None,
            method: None,
            scale: None,
            seed: None,
            workers: None,
            out: None,
            data: None,
            model: None,
            priors: None,
            amis: None,
            mcmc: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: RunConfig = toml::from_str(text)?;
        check_format(&c.format, RUN_FORMAT)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }
}

pub const DEFAULT_SEED: u64 = 1;

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub model: ModelConfig,
    pub priors: PriorsConfig,
    pub method: Method,
    pub out: PathBuf,
}

/// Flag values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub preset: Option<Preset>,
    pub method: Option<Method>,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunManifest {
    pub fn resolve(config: &RunConfig, cli: &CliOverrides) -> Result<Self, ConfigError> {
        let preset = cli.preset.or(config.preset).ok_or(ConfigError::NoPreset)?;
        let scale = cli.scale.or(config.scale).unwrap_or(Scale::Desk);
        let seed = cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
        let method = cli.method.or(config.method).unwrap_or(Method::Both);
        let mut e = Experiment::new(preset, scale, seed);
        if let Some(d) = &config.data {
            e.data = match d.clone() {
                DataSource::Simulated(mut r) => {
                    if cli.seed.is_some() {
                        r.seed = seed;
                    }
                    DataSource::Simulated(r)
                }
                other => other,
            };
        }
        if let Some(a) = &config.amis {
            apply_amis(&mut e.amis, a);
        }
        if let Some(m) = &config.mcmc {
            let c = &mut e.mcmc;
            c.burn_in = m.burn_in.unwrap_or(c.burn_in);
            c.iterations = m.iterations.unwrap_or(c.iterations);
            c.thin = m.thin.unwrap_or(c.thin);
            if let Some(s) = &m.initial_steps {
                c.initial_steps = s.iter().map(|(k, v)| (Name::from(k.as_str()), *v)).collect();
            }
            c.keep_random_effects = m.keep_random_effects.unwrap_or(c.keep_random_effects);
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}-{seed}", preset.id(), scale_id(scale))));
        Ok(Self {
            model: config.model.clone().unwrap_or_else(|| ModelConfig::for_kind(e.model)),
            priors: config.priors.clone().unwrap_or_default(),
            experiment: e,
            method,
            out,
        })
    }
}

fn apply_amis(s: &mut AmisSettings, a: &AmisOverrides) {
    s.n_initial = a.n_initial.unwrap_or(s.n_initial);
    s.n_stages = a.n_stages.unwrap_or(s.n_stages);
    s.n_per_stage = a.n_per_stage.unwrap_or(s.n_per_stage);
    s.family = a.family.unwrap_or(s.family);
    if let Some(i) = &a.init {
        s.init = i.clone();
    }
}

pub fn scale_id(s: Scale) -> &'static str {
    match s {
        Scale::Paper => "paper",
        Scale::Desk => "desk",
    }
}

/// A simulation recipe file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeDocument {
    pub format: String,
    pub recipe: SimulationRecipe,
}

impl RecipeDocument {
    pub fn new(recipe: SimulationRecipe) -> Self {
        Self { format: RECIPE_FORMAT.into(), recipe }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let d: RecipeDocument = toml::from_str(text)?;
        check_format(&d.format, RECIPE_FORMAT)?;
        Ok(d)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }
}

// Lossless image of a `DhglmSpec`, data included.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FamilyDoc {
    Gaussian {
        group: Vec<usize>,
        n_groups: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        known_precisions: Option<Vec<f64>>,
    },
    Poisson,
    NegativeBinomial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        known_sizes: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DesignDoc {
    rows: usize,
    names: Vec<String>,
    /// Row-major.
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PrecisionDoc {
    Dispersion,
    Shared { name: String },
    Regression { design: DesignDoc },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RandomDoc {
    name: String,
    level: Vec<usize>,
    n_levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate: Option<Vec<f64>>,
    precision: PrecisionDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OffsetDoc {
    name: String,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PredictorDoc {
    link: Link,
    design: DesignDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<OffsetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    random: Option<RandomDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SpecDocument {
    format: String,
    response: Vec<f64>,
    family: FamilyDoc,
    mean: PredictorDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dispersion: Option<PredictorDoc>,
    priors: PriorsConfig,
}

fn design_doc(d: &Design) -> DesignDoc {
    DesignDoc { rows: d.rows(), names: d.names().iter().map(|n| n.to_string()).collect(), data: d.as_slice().to_vec() }
}

fn design_from(d: DesignDoc) -> Result<Design, SpecError> {
    Design::new(d.rows, d.names.iter().map(|n| Name::from(n.as_str())).collect(), d.data)
}

fn predictor_doc(p: &LinearPredictor) -> PredictorDoc {
    PredictorDoc {
        link: p.link,
        design: design_doc(&p.design),
        offset: p.offset.as_ref().map(|o| OffsetDoc { name: o.name.to_string(), values: o.values.to_vec() }),
        random: p.random.as_ref().map(|r| RandomDoc {
            name: r.name.to_string(),
            level: r.level.to_vec(),
            n_levels: r.n_levels,
            covariate: r.covariate.as_ref().map(|c| c.to_vec()),
            precision: match &r.precision {
                PrecisionModel::Dispersion => PrecisionDoc::Dispersion,
                PrecisionModel::Shared { name } => PrecisionDoc::Shared { name: name.to_string() },
                PrecisionModel::Regression { design } => PrecisionDoc::Regression { design: design_doc(design) },
            },
        }),
    }
}

fn predictor_from(p: PredictorDoc) -> Result<LinearPredictor, SpecError> {
    let mut lp = LinearPredictor::fixed(design_from(p.design)?, p.link);
    if let Some(o) = p.offset {
        lp = lp.with_offset(Offset { name: o.name.as_str().into(), values: o.values.into() });
    }
    if let Some(r) = p.random {
        let precision = match r.precision {
            PrecisionDoc::Dispersion => PrecisionModel::Dispersion,
            PrecisionDoc::Shared { name } => PrecisionModel::Shared { name: name.as_str().into() },
            PrecisionDoc::Regression { design } => PrecisionModel::Regression { design: design_from(design)? },
        };
        lp = lp.with_random(RandomEffect {
            name: r.name.as_str().into(),
            level: r.level.into(),
            n_levels: r.n_levels,
            covariate: r.covariate.map(Into::into),
            precision,
        });
    }
    Ok(lp)
}

/// Serializes a built model, data included, so that [`spec_from_toml`]
/// restores an identical value.
pub fn spec_to_toml(spec: &DhglmSpec) -> Result<String, ConfigError> {
    let family = match &spec.family {
        LikelihoodFamily::Gaussian { group, n_groups, precision } => FamilyDoc::Gaussian {
            group: group.to_vec(),
            n_groups: *n_groups,
            known_precisions: match precision {
                PrecisionSource::Known(v) => Some(v.clone()),
                PrecisionSource::Modeled => None,
            },
        },
        LikelihoodFamily::Poisson => FamilyDoc::Poisson,
        LikelihoodFamily::NegativeBinomial { size } => FamilyDoc::NegativeBinomial {
            known_sizes: match size {
                SizeSource::Known(v) => Some(v.clone()),
                SizeSource::Modeled => None,
            },
        },
    };
    let doc = SpecDocument {
        format: MODEL_FORMAT.into(),
        response: spec.response.to_vec(),
        family,
        mean: predictor_doc(&spec.mean),
        dispersion: spec.dispersion.as_ref().map(predictor_doc),
        priors: PriorsConfig::from_priors(&spec.priors),
    };
    Ok(toml::to_string(&doc)?)
}

pub fn spec_from_toml(text: &str) -> Result<DhglmSpec, ConfigError> {
    let doc: SpecDocument = toml::from_str(text)?;
    check_format(&doc.format, MODEL_FORMAT)?;
    let family = match doc.family {
        FamilyDoc::Gaussian { group, n_groups, known_precisions } => LikelihoodFamily::Gaussian {
            group: group.into(),
            n_groups,
            precision: known_precisions.map_or(PrecisionSource::Modeled, PrecisionSource::Known),
        },
        FamilyDoc::Poisson => LikelihoodFamily::Poisson,
        FamilyDoc::NegativeBinomial { known_sizes } => {
            LikelihoodFamily::NegativeBinomial { size: known_sizes.map_or(SizeSource::Modeled, SizeSource::Known) }
        }
    };
    let mean = predictor_from(doc.mean)?;
    let dispersion = doc.dispersion.map(predictor_from).transpose()?;
    Ok(build_spec(family, doc.response, mean, dispersion, doc.priors.to_priors())?)
}
