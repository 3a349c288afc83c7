//! The experiments shipped with the tool, at paper and desk scale.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dhglm_core::amis::ProposalFamily;
use dhglm_core::mcmc::McmcConfig;
use dhglm_core::sim::{ModelKind, RecipeKind, SimulationRecipe};
use serde::{Deserialize, Serialize};

use crate::io::CsvSchema;

/// Synthetic reaction-time panel in the sleep-study layout: 18 subjects,
/// days 0 to 9, reaction times in milliseconds. Produced by
/// [`sleep_like_recipe`] with seed [`SLEEP_DATA_SEED`].
pub const SLEEP_CSV: &str = include_str!("../data/sleep_synthetic.csv");
pub const SLEEP_DATA_SEED: u64 = 2024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Paper,
    /// Sample sizes divided by four and shorter AMIS and MCMC runs.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Amis,
    Mcmc,
    Both,
}

impl Method {
    pub fn amis(self) -> bool {
        matches!(self, Method::Amis | Method::Both)
    }

    pub fn mcmc(self) -> bool {
        matches!(self, Method::Mcmc | Method::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    PoissonSim,
    NegbinSim,
    /// Grouped Gaussian study under AMIS scenario 1 to 6.
    GaussianScenario(u8),
    SpatialPoisson,
    SpatialNegbin,
    SleepRcoef,
    SleepFixed,
}

#[derive(Debug, thiserror::Error)]
#[error("unknown preset `{0}`; run `dhglm list-presets` for the available ones")]
pub struct UnknownPreset(pub String);

impl Preset {
    pub const ALL: [Preset; 12] = [
        Preset::PoissonSim,
        Preset::NegbinSim,
        Preset::GaussianScenario(1),
        Preset::GaussianScenario(2),
        Preset::GaussianScenario(3),
        Preset::GaussianScenario(4),
        Preset::GaussianScenario(5),
        Preset::GaussianScenario(6),
        Preset::SpatialPoisson,
        Preset::SpatialNegbin,
        Preset::SleepRcoef,
        Preset::SleepFixed,
    ];

    pub fn id(self) -> String {
        match self {
            Preset::PoissonSim => "poisson-sim".into(),
            Preset::NegbinSim => "negbin-sim".into(),
            Preset::GaussianScenario(k) => format!("gaussian-sim-scenario-{k}"),
            Preset::SpatialPoisson => "spatial-poisson".into(),
            Preset::SpatialNegbin => "spatial-negbin".into(),
            Preset::SleepRcoef => "sleep-rcoef".into(),
            Preset::SleepFixed => "sleep-fixed".into(),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::PoissonSim => "Poisson counts with observation-level effects whose log precision depends on z",
            Preset::NegbinSim => "negative binomial counts with log size linear in standardized z",
            Preset::GaussianScenario(1) => "grouped Gaussian, N0=5000, vague proposal",
            Preset::GaussianScenario(2) => "grouped Gaussian, N0=5000, data-informed proposal",
            Preset::GaussianScenario(3) => "grouped Gaussian, N0=1000, vague proposal (expected low ESS)",
            Preset::GaussianScenario(4) => "grouped Gaussian, N0=1000, data-informed proposal",
            Preset::GaussianScenario(5) => "grouped Gaussian, N0=5000, data-informed proposal with variances x10",
            Preset::GaussianScenario(_) => "grouped Gaussian, N0=5000, 5000 per stage, data-informed proposal",
            Preset::SpatialPoisson => "spatial-lag Poisson with region effects on a 4x8 lattice",
            Preset::SpatialNegbin => "spatial-lag negative binomial on a 4x8 lattice",
            Preset::SleepRcoef => "reaction times, per-subject random slopes and precisions",
            Preset::SleepFixed => "reaction times, common slope, per-subject precisions",
        }
    }

    pub fn model(self) -> ModelKind {
        match self {
            Preset::PoissonSim => ModelKind::PoissonRe,
            Preset::NegbinSim => ModelKind::NegBin,
            Preset::GaussianScenario(_) => ModelKind::GaussianGroups,
            Preset::SpatialPoisson => ModelKind::SpatialPoisson,
            Preset::SpatialNegbin => ModelKind::SpatialNegBin,
            Preset::SleepRcoef => ModelKind::SleepRandomSlopes,
            Preset::SleepFixed => ModelKind::SleepFixed,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Preset {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.id() == s).ok_or_else(|| UnknownPreset(s.to_owned()))
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.id())
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the starting proposal over `θ_c` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProposalInit {
    /// Every component centred at `mean` with the given variance.
    Vague { mean: f64, variance: f64 },
    /// Mean `ln(1/S²_i)`, variance `multiplier · var(ln S²) / n_i`.
    DataInformed { multiplier: f64 },
    /// Mean `ln(1/S²_i)`, variance `max(scale · |ln(1/S²_i)|, 0.05)`, then the
    /// best of `permutations` reorderings of the mean. With `refine`, the
    /// mean then climbs to the mode of the conditional log target.
    DataScaled {
        scale: f64,
        permutations: usize,
        #[serde(default)]
        refine: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmisSettings {
    pub n_initial: usize,
    pub n_stages: usize,
    pub n_per_stage: usize,
    pub family: ProposalFamily,
    pub init: ProposalInit,
}

/// Where the data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Simulated(SimulationRecipe),
    /// The bundled sleep-layout table.
    BundledSleep { rescale: f64 },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        /// Dense 0/1 adjacency table; adds `lag = W · lag_of`.
        #[serde(default)]
        neighbours: Option<PathBuf>,
        #[serde(default)]
        lag_of: Option<String>,
    },
}

/// Everything needed to run one preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub preset: Preset,
    pub scale: Scale,
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelKind,
    pub amis: AmisSettings,
    pub mcmc: McmcConfig,
}

const VAGUE: ProposalInit = ProposalInit::Vague { mean: 0.0, variance: 5.0 };

fn quarter(n: usize, scale: Scale) -> usize {
    match scale {
        Scale::Paper => n,
        Scale::Desk => (n / 4).max(1),
    }
}

fn amis(scale: Scale, paper: (usize, usize, usize), init: ProposalInit) -> AmisSettings {
    let (n_initial, n_stages, n_per_stage) = match scale {
        Scale::Paper => paper,
        Scale::Desk => (1000, 5, 500),
    };
    AmisSettings { n_initial, n_stages, n_per_stage, family: ProposalFamily::Gaussian, init }
}

/// AMIS sizes of the grouped Gaussian scenarios. Desk scale keeps their
/// relations: one fifth of the initial stage, five stages, half the stage size.
fn scenario_amis(k: u8, scale: Scale) -> AmisSettings {
    let (n0, nt) = match k {
        3 | 4 => (1000, 1000),
        6 => (5000, 5000),
        _ => (5000, 1000),
    };
    let init = match k {
        1 | 3 => VAGUE,
        5 => ProposalInit::DataInformed { multiplier: 10.0 },
        _ => ProposalInit::DataInformed { multiplier: 1.0 },
    };
    let (n_initial, n_stages, n_per_stage) = match scale {
        Scale::Paper => (n0, 10, nt),
        Scale::Desk => (n0 / 5, 5, nt / 2),
    };
    AmisSettings { n_initial, n_stages, n_per_stage, family: ProposalFamily::Gaussian, init }
}

pub fn poisson_recipe(n: usize, seed: u64) -> SimulationRecipe {
    SimulationRecipe { kind: RecipeKind::PoissonRe { n, beta: [1.0, 0.25], gamma: [0.0, 0.5], x_range: (0.0, 1.0) }, seed }
}

pub fn negbin_recipe(n: usize, seed: u64) -> SimulationRecipe {
    SimulationRecipe {
        kind: RecipeKind::NegBin { n, beta: [1.0, 0.25], gamma: [0.0, 5.0], x_range: (10.0, 20.0), z_range: (0.0, 20.0) },
        seed,
    }
}

pub fn gaussian_recipe(n_per_group: usize, seed: u64) -> SimulationRecipe {
    SimulationRecipe {
        kind: RecipeKind::GaussianGroups {
            p: 5,
            n_per_group,
            beta: [1.0, 0.25],
            gamma: [0.0, 5.0],
            tau_u: 1.0,
            x_range: (0.0, 1.0),
            z_range: (-1.0, 1.0),
        },
        seed,
    }
}

/// The 4 × 8 lattice is used at both scales.
pub fn spatial_recipe(poisson: bool, seed: u64) -> SimulationRecipe {
    let (rows, cols, beta, rho, gamma) = (4, 8, -4.9, 0.042, [4.2, -0.042]);
    let kind = if poisson {
        RecipeKind::SpatialPoisson { rows, cols, beta, rho, gamma }
    } else {
        RecipeKind::SpatialNegBin { rows, cols, beta, rho, gamma }
    };
    SimulationRecipe { kind, seed }
}

pub fn sleep_like_recipe(seed: u64) -> SimulationRecipe {
    SimulationRecipe {
        kind: RecipeKind::SleepLike { subjects: 18, days: 10, beta0: 0.26, slope: 0.0105, tau_beta: 8000.0, gamma: 7.0, tau_u: 1.5 },
        seed,
    }
}

impl Experiment {
    pub fn new(preset: Preset, scale: Scale, seed: u64) -> Self {
        let mcmc = match scale {
            Scale::Paper => McmcConfig::paper(seed),
            Scale::Desk => McmcConfig::desk(seed),
        };
        let standard = (5000, 10, 1000);
        let (data, amis) = match preset {
            Preset::PoissonSim => (DataSource::Simulated(poisson_recipe(quarter(1000, scale), seed)), amis(scale, standard, VAGUE)),
            Preset::NegbinSim => (DataSource::Simulated(negbin_recipe(quarter(500, scale), seed)), amis(scale, standard, VAGUE)),
            Preset::GaussianScenario(k) => {
                (DataSource::Simulated(gaussian_recipe(quarter(500, scale), seed)), scenario_amis(k, scale))
            }
            Preset::SpatialPoisson => (DataSource::Simulated(spatial_recipe(true, seed)), amis(scale, standard, VAGUE)),
            Preset::SpatialNegbin => (DataSource::Simulated(spatial_recipe(false, seed)), amis(scale, standard, VAGUE)),
            Preset::SleepRcoef | Preset::SleepFixed => (
                DataSource::BundledSleep { rescale: crate::io::SLEEP_RESCALE },
                amis(scale, (1000, 20, 1000), ProposalInit::DataScaled { scale: 0.05, permutations: 500, refine: true }),
            ),
        };
        Self { preset, scale, seed, data, model: preset.model(), amis, mcmc }
    }

    /// The recipe `simulate` uses for this preset. Sleep presets get the
    /// generator behind the bundled table.
    pub fn simulation_recipe(&self) -> SimulationRecipe {
        match &self.data {
            DataSource::Simulated(r) => r.clone(),
            _ => sleep_like_recipe(self.seed),
        }
    }
}
