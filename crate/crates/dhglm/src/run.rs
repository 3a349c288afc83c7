//! One fit end to end: load data, build the model, run AMIS and/or MCMC,
//! summarize, and write the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dhglm_core::amis::{
    data_informed_proposal, group_sample_variances, init_proposal_from_data, mix_marginals, permutation_search_init, refine_proposal_mean,
    theta_marginal, theta_summaries_unchecked, weight_diagnostic_curve, AmisConfig, AmisError, PermutationSearch,
    ProposalState, WeightedEnsemble,
};
use dhglm_core::exec::Executor;
use dhglm_core::latent::{transform_marginal, FitError, Marginal, MarginalGrid, Scale, Transform};
use dhglm_core::mcmc::{chain_summary, run_mcmc, McmcChain, McmcConfig, McmcError};
use dhglm_core::model::{derive_conditioning_plan_with, ConditioningPlan, ConditioningRule, DhglmSpec, SpecError};
use dhglm_core::sim::{simulate, Dataset, SimError};
use dhglm_core::summary::marginal_summary;
use dhglm_core::{run_amis, ProposalFamily};
use serde::Serialize;

use crate::compare::{compare, ComparisonReport, NameMismatch, Tolerance};
use crate::config::{scale_id, spec_to_toml, ConfigError, RunManifest};
use crate::io::{attach_neighbours, ingest_csv, ingest_reader, read_neighbours, write_dataset, CsvSchema, IoError};
use crate::presets::{AmisSettings, DataSource, Method, ProposalInit, SLEEP_CSV};
use crate::report::{
    file_stem, summary_text, write_csv, write_curve_csv, write_ess_csv, write_marginal_csv, write_summary_csv, write_text,
    ParameterRow, ReportError,
};

/// Runs whose final ESS falls below this are flagged.
pub const ESS_WARNING: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("model: {0}")]
    Spec(#[from] SpecError),
    #[error("{context}: {source}")]
    Amis { context: String, source: AmisError },
    #[error("summarizing `{name}`: {source}")]
    Marginal { name: String, source: FitError },
    #[error("MCMC: {0}")]
    Mcmc(#[from] McmcError),
    #[error("comparing AMIS with MCMC: {0}")]
    Compare(#[from] NameMismatch),
    #[error("{0}")]
    Init(String),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

fn amis_err(context: impl Into<String>) -> impl FnOnce(AmisError) -> RunError {
    let context = context.into();
    move |source| RunError::Amis { context, source }
}

/// Posterior summary rows plus a density for each row.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub rows: Vec<ParameterRow>,
    pub marginals: Vec<(String, MarginalGrid)>,
    pub seconds: f64,
}

pub struct AmisOutcome {
    pub plan: ConditioningPlan,
    pub initial: ProposalState,
    pub permutation: Option<PermutationSearch>,
    pub ensemble: WeightedEnsemble,
    /// One weight diagnostic curve per `θ_c` component.
    pub curves: Vec<(String, Vec<(f64, f64)>)>,
    pub result: MethodResult,
}

pub struct McmcOutcome {
    pub chain: McmcChain,
    pub result: MethodResult,
}

pub struct RunOutcome {
    pub data: Dataset,
    pub spec: DhglmSpec,
    pub amis: Option<AmisOutcome>,
    pub mcmc: Option<McmcOutcome>,
    pub comparison: Option<ComparisonReport>,
    pub warnings: Vec<String>,
}

pub fn load_data(source: &DataSource) -> Result<Dataset, RunError> {
    Ok(match source {
        DataSource::Simulated(r) => simulate(r)?,
        DataSource::BundledSleep { rescale } => {
            let schema = CsvSchema { rescale: *rescale, ..CsvSchema::sleep() };
            ingest_reader(SLEEP_CSV.as_bytes(), Path::new("sleep_synthetic.csv"), &schema)?
        }
        DataSource::Csv { path, schema, neighbours, lag_of } => {
            let mut d = ingest_csv(path, schema)?;
            if let Some(n) = neighbours {
                let w = read_neighbours(n)?;
                attach_neighbours(&mut d, w, lag_of.as_deref().unwrap_or("rates"), n)?;
            }
            d
        }
    })
}

fn group_variances(plan: &ConditioningPlan, data: &Dataset) -> Result<(Vec<f64>, Vec<usize>), RunError> {
    if plan.rule != ConditioningRule::GroupLogPrecisions {
        return Err(RunError::Init("data-derived proposals need one log precision per group".into()));
    }
    let group = data.group.as_ref().ok_or_else(|| RunError::Init("data-derived proposals need grouped data".into()))?;
    let s2 = group_sample_variances(&data.response, group, data.n_groups()).map_err(amis_err("group variances"))?;
    let mut n_obs = vec![0; data.n_groups()];
    for &g in group {
        n_obs[g] += 1;
    }
    if s2.len() != plan.dim() {
        return Err(RunError::Init(format!("{} groups but {} conditioning components", s2.len(), plan.dim())));
    }
    Ok((s2, n_obs))
}

/// Starting proposal, and the permutation search behind it if one ran.
pub fn initial_proposal<E: Executor>(
    settings: &AmisSettings,
    plan: &ConditioningPlan,
    data: &Dataset,
    seed: u64,
    executor: &E,
) -> Result<(ProposalState, Option<PermutationSearch>), RunError> {
    let d = plan.dim();
    let (p, search) = match settings.init {
        ProposalInit::Vague { mean, variance } => {
            let p = ProposalState::diagonal(ProposalFamily::Gaussian, vec![mean; d], &vec![variance; d]);
            (p.map_err(amis_err("initial proposal"))?, None)
        }
        ProposalInit::DataInformed { multiplier } => {
            let (s2, n_obs) = group_variances(plan, data)?;
            (data_informed_proposal(&s2, &n_obs, multiplier).map_err(amis_err("initial proposal"))?, None)
        }
        ProposalInit::DataScaled { scale, permutations, refine } => {
            let (s2, _) = group_variances(plan, data)?;
            let candidate = init_proposal_from_data(&s2, scale).map_err(amis_err("initial proposal"))?;
            let (p, search) = if permutations == 0 {
                (candidate, None)
            } else {
                let s = permutation_search_init(&candidate, plan, permutations, seed, executor)
                    .map_err(amis_err("permutation search"))?;
                (s.proposal.clone(), Some(s))
            };
            if refine {
                (refine_proposal_mean(&p, plan).map_err(amis_err("mode refinement"))?.proposal, search)
            } else {
                (p, search)
            }
        }
    };
    let p = ProposalState::new(settings.family, p.mean, p.covariance).map_err(amis_err("initial proposal"))?;
    Ok((p, search))
}

/// AMIS summary rows: the reported parameters of every submodel, mixed over
/// the ensemble, then the `θ_c` components themselves.
pub fn summarize_ensemble(
    plan: &ConditioningPlan,
    ens: &WeightedEnsemble,
    data: &Dataset,
) -> Result<(Vec<ParameterRow>, Vec<(String, MarginalGrid)>), RunError> {
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    for name in plan.reported_names() {
        let mixed = mix_marginals(ens, &name).map_err(amis_err(format!("mixing `{name}`")))?;
        let grid = match mixed.scale() {
            Scale::Log => transform_marginal(&mixed, Transform::Exp)
                .map_err(|source| RunError::Marginal { name: name.to_string(), source })?,
            Scale::Identity => mixed,
        };
        rows.push(ParameterRow {
            name: name.to_string(),
            truth: data.truth_of(&name),
            summary: marginal_summary(&Marginal::Grid(grid.clone())),
        });
        grids.push((name.to_string(), grid));
    }
    for (j, (name, summary)) in theta_summaries_unchecked(ens).map_err(amis_err("θ summaries"))?.into_iter().enumerate() {
        let grid = theta_marginal(ens, j).map_err(amis_err(format!("density of `{name}`")))?;
        rows.push(ParameterRow { name: name.to_string(), truth: data.truth_of(&name), summary });
        grids.push((name.to_string(), grid));
    }
    Ok((rows, grids))
}

pub fn fit_amis<E: Executor>(
    spec: &DhglmSpec,
    data: &Dataset,
    manifest: &RunManifest,
    executor: &E,
) -> Result<AmisOutcome, RunError> {
    let start = Instant::now();
    let e = &manifest.experiment;
    let plan = derive_conditioning_plan_with(spec, manifest.model.conditioning)?;
    let (initial, permutation) = initial_proposal(&e.amis, &plan, data, e.seed, executor)?;
    let config = AmisConfig {
        n_initial: e.amis.n_initial,
        n_stages: e.amis.n_stages,
        n_per_stage: e.amis.n_per_stage,
        initial: initial.clone(),
        seed: e.seed,
    };
    let ensemble = run_amis(&plan, &config, executor).map_err(amis_err("AMIS"))?;
    let (rows, marginals) = summarize_ensemble(&plan, &ensemble, data)?;
    let curves = ensemble
        .theta_names
        .iter()
        .enumerate()
        .map(|(j, n)| Ok((n.to_string(), weight_diagnostic_curve(&ensemble, j).map_err(amis_err("weight curve"))?)))
        .collect::<Result<_, RunError>>()?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(AmisOutcome { plan, initial, permutation, ensemble, curves, result: MethodResult { rows, marginals, seconds } })
}

/// Summary rows and kernel density estimates of every chain column.
pub fn summarize_chain(chain: &McmcChain, data: &Dataset) -> Result<(Vec<ParameterRow>, Vec<(String, MarginalGrid)>), RunError> {
    let rows: Vec<ParameterRow> = chain_summary(chain)?
        .into_iter()
        .map(|(n, summary)| ParameterRow { name: n.to_string(), truth: data.truth_of(&n), summary })
        .collect();
    let zeros = vec![0.0; chain.draws.len()];
    let ens = WeightedEnsemble::from_log_weights(chain.names.clone(), chain.draws.clone(), zeros)
        .map_err(amis_err("chain densities"))?;
    let grids = chain
        .names
        .iter()
        .enumerate()
        .map(|(j, n)| Ok((n.to_string(), theta_marginal(&ens, j).map_err(amis_err(format!("density of `{n}`")))?)))
        .collect::<Result<_, RunError>>()?;
    Ok((rows, grids))
}

pub fn fit_mcmc(spec: &DhglmSpec, data: &Dataset, config: &McmcConfig) -> Result<McmcOutcome, RunError> {
    let start = Instant::now();
    let chain = run_mcmc(spec, config)?;
    let (rows, marginals) = summarize_chain(&chain, data)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(McmcOutcome { chain, result: MethodResult { rows, marginals, seconds } })
}

/// Fits everything the manifest asks for, without touching the disk.
pub fn execute<E: Executor>(manifest: &RunManifest, executor: &E) -> Result<RunOutcome, RunError> {
    let data = load_data(&manifest.experiment.data)?;
    let spec = manifest.model.build(&data, manifest.priors.to_priors())?;
    let amis = if manifest.method.amis() { Some(fit_amis(&spec, &data, manifest, executor)?) } else { None };
    let mcmc = if manifest.method.mcmc() { Some(fit_mcmc(&spec, &data, &manifest.experiment.mcmc)?) } else { None };
    let comparison = match (&amis, &mcmc) {
        (Some(a), Some(m)) => Some(compare(&a.result.rows, &m.result.rows, Tolerance::default())?),
        _ => None,
    };
    let mut warnings = Vec::new();
    if let Some(a) = &amis {
        let ens = &a.ensemble;
        if ens.ess < ESS_WARNING {
            warnings.push(format!(
                "AMIS effective sample size {:.2} of {} is below {ESS_WARNING}; summaries are unreliable",
                ens.ess,
                ens.len()
            ));
        }
        if ens.failures > 0 {
            warnings.push(format!("{} of {} conditional fits failed and carry zero weight", ens.failures, ens.len()));
        }
    }
    Ok(RunOutcome { data, spec, amis, mcmc, comparison, warnings })
}

#[derive(Serialize)]
struct StageLine {
    stage: usize,
    n_total: usize,
    ess: f64,
    log_ml_at_mean: Option<f64>,
    failures: usize,
    low_ess: bool,
}

#[derive(Serialize)]
struct PermutationLine {
    evaluated: usize,
    failures: usize,
    identity_log_ml: Option<f64>,
    best_log_ml: f64,
    order: Vec<usize>,
}

#[derive(Serialize)]
struct AmisLine {
    theta: Vec<String>,
    initial_mean: Vec<f64>,
    initial_variance: Vec<f64>,
    samples: usize,
    ess: f64,
    failures: usize,
    flagged_low_ess: bool,
    stages: Vec<StageLine>,
    permutation: Option<PermutationLine>,
    seconds: f64,
}

#[derive(Serialize)]
struct McmcLine {
    seed: u64,
    retained: usize,
    acceptance: BTreeMap<String, f64>,
    seconds: f64,
}

#[derive(Serialize)]
struct ComparisonLine {
    all_pass: bool,
    max_abs_diff: f64,
    failures: Vec<String>,
}

/// Contents of `run_summary.json`. Timings are the only fields that vary
/// between identical runs.
#[derive(Serialize)]
struct RunSummary<'a> {
    preset: String,
    scale: &'static str,
    seed: u64,
    method: Method,
    workers: usize,
    observations: usize,
    groups: usize,
    experiment: &'a crate::presets::Experiment,
    amis: Option<AmisLine>,
    mcmc: Option<McmcLine>,
    comparison: Option<ComparisonLine>,
    warnings: &'a [String],
    seconds: f64,
}

fn amis_line(a: &AmisOutcome) -> AmisLine {
    let ens = &a.ensemble;
    let d = a.initial.dim();
    AmisLine {
        theta: ens.theta_names.iter().map(|n| n.to_string()).collect(),
        initial_mean: a.initial.mean.clone(),
        initial_variance: (0..d).map(|i| a.initial.covariance.get(i, i)).collect(),
        samples: ens.len(),
        ess: ens.ess,
        failures: ens.failures,
        flagged_low_ess: ens.ess < ESS_WARNING,
        stages: ens
            .stages
            .iter()
            .map(|s| StageLine {
                stage: s.stage,
                n_total: s.n_total,
                ess: s.ess,
                log_ml_at_mean: s.log_ml_at_mean,
                failures: s.failures,
                low_ess: s.low_ess,
            })
            .collect(),
        permutation: a.permutation.as_ref().map(|p| PermutationLine {
            evaluated: p.evaluated,
            failures: p.failures,
            identity_log_ml: p.identity_log_ml,
            best_log_ml: p.best_log_ml,
            order: p.order.clone(),
        }),
        seconds: a.result.seconds,
    }
}

fn write_method(dir: &Path, tag: &str, title: &str, r: &MethodResult, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    let text = dir.join(format!("{tag}_summary.txt"));
    write_text(&text, &summary_text(title, &r.rows))?;
    let csv = dir.join(format!("{tag}_summary.csv"));
    write_summary_csv(&csv, &r.rows)?;
    files.extend([text, csv]);
    for (name, grid) in &r.marginals {
        let p = dir.join("marginals").join(format!("{tag}_{}.csv", file_stem(name)));
        write_marginal_csv(&p, grid)?;
        files.push(p);
    }
    Ok(())
}

/// Writes the run directory and returns the files written.
pub fn write_outputs(manifest: &RunManifest, outcome: &RunOutcome, workers: usize, seconds: f64) -> Result<Vec<PathBuf>, RunError> {
    let dir = &manifest.out;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.clone(), source })?;
    let mut files = write_dataset(&dir.join("data"), &outcome.data)?;
    let spec_path = dir.join("spec.toml");
    write_text(&spec_path, &spec_to_toml(&outcome.spec)?)?;
    files.push(spec_path);

    if let Some(a) = &outcome.amis {
        write_method(dir, "amis", "AMIS", &a.result, &mut files)?;
        let ess = dir.join("ess_log.csv");
        write_ess_csv(&ess, &a.ensemble.stages)?;
        files.push(ess);
        for (name, curve) in &a.curves {
            let p = dir.join("diagnostics").join(format!("weights_{}.csv", file_stem(name)));
            write_curve_csv(&p, curve)?;
            files.push(p);
        }
    }
    if let Some(m) = &outcome.mcmc {
        write_method(dir, "mcmc", "MCMC", &m.result, &mut files)?;
        let p = dir.join("mcmc_draws.csv");
        let header: Vec<&str> = m.chain.names.iter().map(|n| &**n).collect();
        write_csv(&p, &header, m.chain.draws.iter().map(|r| r.iter().map(|v| crate::io::fmt(*v)).collect::<Vec<_>>()))?;
        files.push(p);
    }
    if let Some(c) = &outcome.comparison {
        let text = dir.join("comparison.txt");
        write_text(&text, &c.text("AMIS", "MCMC"))?;
        let csv = dir.join("comparison.csv");
        write_csv(&csv, ComparisonReport::csv_header(), c.csv_rows())?;
        files.extend([text, csv]);
    }

    let e = &manifest.experiment;
    let summary = RunSummary {
        preset: e.preset.id(),
        scale: scale_id(e.scale),
        seed: e.seed,
        method: manifest.method,
        workers,
        observations: outcome.data.len(),
        groups: outcome.data.n_groups(),
        experiment: e,
        amis: outcome.amis.as_ref().map(amis_line),
        mcmc: outcome.mcmc.as_ref().map(|m| McmcLine {
            seed: e.mcmc.seed,
            retained: m.chain.len(),
            acceptance: m.chain.acceptance.iter().map(|(n, a)| (n.to_string(), *a)).collect(),
            seconds: m.result.seconds,
        }),
        comparison: outcome.comparison.as_ref().map(|c| ComparisonLine {
            all_pass: c.all_pass(),
            max_abs_diff: c.max_abs_diff(),
            failures: c.failures().into_iter().map(String::from).collect(),
        }),
        warnings: &outcome.warnings,
        seconds,
    };
    let p = dir.join("run_summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("run summary serializes");
    write_text(&p, &(json + "\n"))?;
    files.push(p);
    Ok(files)
}

/// [`execute`] then [`write_outputs`].
pub fn run<E: Executor>(manifest: &RunManifest, executor: &E, workers: usize) -> Result<(RunOutcome, Vec<PathBuf>), RunError> {
    let start = Instant::now();
    let outcome = execute(manifest, executor)?;
    let files = write_outputs(manifest, &outcome, workers, start.elapsed().as_secs_f64())?;
    Ok((outcome, files))
}
