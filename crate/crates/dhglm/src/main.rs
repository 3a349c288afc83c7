use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dhglm::compare::{compare, ComparisonReport, Tolerance};
use dhglm::config::{scale_id, CliOverrides, RecipeDocument, RunConfig, RunManifest, DEFAULT_SEED};
use dhglm::exec::{Pool, WORKERS_ENV};
use dhglm::io::write_dataset;
use dhglm::presets::{Experiment, Method, Preset, Scale};
use dhglm::report::{curve_deviation, read_numeric_csv, read_summary_csv, write_csv, write_text, CURVE_HEADER, ESS_HEADER};
use dhglm::run::{run, ESS_WARNING};
use dhglm_core::sim::simulate;

/// Double hierarchical GLMs fitted by adaptive importance sampling over
/// conditional latent Gaussian fits, with an MCMC reference.
#[derive(Parser)]
#[command(name = "dhglm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset for a preset and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a preset or configured model and write a run directory.
    Fit(FitArgs),
    /// Compare two summary CSVs parameter by parameter.
    Compare(CompareArgs),
    /// Print the ESS log and weight diagnostics of a finished run.
    Diagnose(DiagnoseArgs),
    /// List the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_preset, required_unless_present = "recipe")]
    preset: Option<Preset>,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Recipe file to use instead of a preset.
    #[arg(long, conflicts_with = "preset")]
    recipe: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file overriding preset settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Differences up to this size always pass.
    #[arg(long, default_value_t = Tolerance::default().absolute)]
    absolute: f64,
    /// Multiple of the pooled posterior sd that also passes.
    #[arg(long, default_value_t = Tolerance::default().sd_fraction)]
    sd_fraction: f64,
    /// Also write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    run: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: dhglm::presets::UnknownPreset| e.to_string())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined by `: `, skipping causes whose text the message
/// already carries.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &text;
        }
    }
    out
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(&a.run),
        Command::ListPresets => {
            for p in Preset::ALL {
                println!("{:<26} {:<20} {}", p.id(), p.model().as_str(), p.description());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn simulate_cmd(a: SimulateArgs) -> Result<ExitCode> {
    let recipe = match (&a.recipe, a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RecipeDocument::parse(&text).with_context(|| path.display().to_string())?.recipe
        }
        (None, Some(p)) => Experiment::new(p, a.scale, a.seed).simulation_recipe(),
        (None, None) => bail!("give --preset or --recipe"),
    };
    let data = simulate(&recipe)?;
    let mut files = write_dataset(&a.out, &data)?;
    let path = a.out.join("recipe.toml");
    write_text(&path, &RecipeDocument::new(recipe).to_toml()?)?;
    files.push(path);
    println!("{} observations, {} groups", data.len(), data.n_groups());
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn fit_cmd(a: FitArgs) -> Result<ExitCode> {
    let config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cli = CliOverrides { preset: a.preset, method: a.method, scale: a.scale, seed: a.seed, out: a.out };
    let manifest = RunManifest::resolve(&config, &cli)?;
    let pool = Pool::new(a.workers.or(config.workers))?;
    let e = &manifest.experiment;
    eprintln!(
        "{} at {} scale, seed {}, {} workers -> {}",
        e.preset.id(),
        scale_id(e.scale),
        e.seed,
        pool.workers(),
        manifest.out.display()
    );
    let (outcome, _) = run(&manifest, &pool, pool.workers()).with_context(|| format!("preset {}", e.preset.id()))?;
    if let Some(am) = &outcome.amis {
        println!("{}", std::fs::read_to_string(manifest.out.join("amis_summary.txt"))?);
        println!("AMIS: ESS {:.2} of {} samples, {:.1} s", am.ensemble.ess, am.ensemble.len(), am.result.seconds);
    }
    if let Some(m) = &outcome.mcmc {
        println!("{}", std::fs::read_to_string(manifest.out.join("mcmc_summary.txt"))?);
        println!("MCMC: {} draws, {:.1} s", m.chain.len(), m.result.seconds);
    }
    if let Some(c) = &outcome.comparison {
        println!("\n{}", c.text("AMIS", "MCMC"));
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn compare_cmd(a: CompareArgs) -> Result<ExitCode> {
    let ra = read_summary_csv(&a.a)?;
    let rb = read_summary_csv(&a.b)?;
    let report = compare(&ra, &rb, Tolerance { absolute: a.absolute, sd_fraction: a.sd_fraction })?;
    print!("{}", report.text("A", "B"));
    if let Some(out) = &a.out {
        write_csv(out, ComparisonReport::csv_header(), report.csv_rows())?;
    }
    Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn diagnose_cmd(dir: &Path) -> Result<ExitCode> {
    let ess = read_numeric_csv(&dir.join("ess_log.csv"), &ESS_HEADER)
        .with_context(|| format!("{} has no AMIS output", dir.display()))?;
    println!("{:>5} {:>9} {:>12} {:>16} {:>8}", "stage", "samples", "ESS", "log ML at mean", "failures");
    for r in &ess {
        let flag = if r[5] != 0.0 { "  low ESS" } else { "" };
        println!("{:>5} {:>9} {:>12.2} {:>16.4} {:>8}{flag}", r[0], r[1], r[2], r[3], r[4]);
    }
    let mut curves: Vec<PathBuf> = std::fs::read_dir(dir.join("diagnostics"))
        .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    curves.sort();
    if !curves.is_empty() {
        println!("\nweight curve, largest distance from the diagonal:");
    }
    for p in curves {
        let rows = read_numeric_csv(&p, &CURVE_HEADER)?;
        let curve: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("?").trim_start_matches("weights_");
        println!("  {stem:<14} {:.4}", curve_deviation(&curve));
    }
    if let Some(last) = ess.last() {
        if last[2] < ESS_WARNING {
            eprintln!("warning: final ESS {:.2} is below {ESS_WARNING}", last[2]);
        }
    }
    Ok(ExitCode::SUCCESS)
}
