//! `pwer` — population-wise error rate computations from the command line.
//!
//! Every computation of the library is exposed as a subcommand with JSON or
//! CSV output. Stochastic subcommands require an explicit seed, and every
//! output file is accompanied by a manifest (resolved configuration, seed,
//! tool version, output checksum) so runs can be reproduced bit-exactly.
//!
//! Exit codes: 0 on success, 2 on validation failure, 3 on numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use pwer::control::{
    adjusted_p_with, sci_bounds, solve_critical_with, CiSide, CorrelationModel, EvalOptions,
    PwerProblem,
};
use pwer::mvdist::{CorrelationMatrix, Df};
use pwer::popmodel::{PopulationStructure, Subset};
use pwer::prevsim::{prevalence_effect_grid, write_grid_csv, PrevSimConfig};
use pwer::twopop::{
    correlation_from_prevalences, critical_values, inflation_sweep, sample_size_factor,
    write_inflation_csv, ScenarioKind, TwoPopScenario,
};
use pwer::umbrella::{simulate, ControlKind, UmbrellaConfig};

#[derive(Parser)]
#[command(
    name = "pwer",
    version,
    about = "Population-wise error rate control for overlapping sub-populations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the result to this file (with a .manifest.json alongside)
    /// instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for stochastic computations; required by `umbrella`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the number of worker threads (does not change results).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Tolerance override: critical-value tolerance for solvers.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the PWER-controlling critical value for a population structure.
    Crit(CritArgs),
    /// PWER-adjusted p-values for observed statistics.
    AdjustP(AdjustPArgs),
    /// Two-population critical values and sample-size inflation sweeps.
    TwoPop(TwoPopArgs),
    /// Simulate the umbrella-trial design under PWER or FWER control.
    Umbrella(UmbrellaArgs),
    /// Actual PWER under estimated prevalences over the prevalence simplex.
    PrevSim(PrevSimArgs),
    /// Simultaneous confidence intervals dual to the PWER test.
    Sci(SciArgs),
}

/// Where the correlation of the test statistics comes from.
#[derive(Args)]
struct CorrSource {
    /// JSON file: {"entries": [[1.0, r], [r, 1.0]], "df": null}
    #[arg(long, conflicts_with_all = ["scenario", "umbrella"])]
    corr_file: Option<PathBuf>,

    /// Derive the correlation from a two-population design.
    #[arg(long, value_enum, conflicts_with = "umbrella")]
    scenario: Option<ScenarioArg>,

    /// Overlap prevalence for --scenario; inferred from the structure when
    /// omitted.
    #[arg(long, requires = "scenario")]
    pi12: Option<f64>,

    /// Treat the structure as disjoint umbrella strata and test all subset
    /// strategies (needs singleton strata; at most 4 of them here).
    #[arg(long)]
    umbrella: bool,

    /// Degrees of freedom of the joint t distribution (default: normal).
    #[arg(long)]
    df: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    /// Independent parallel studies.
    Indep,
    /// Shared control, different treatments.
    I,
    /// Shared control, same treatment.
    Ii,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(value: ScenarioArg) -> Self {
        match value {
            ScenarioArg::Indep => ScenarioKind::IndependentStudies,
            ScenarioArg::I => ScenarioKind::SharedControlDifferentTreatments,
            ScenarioArg::Ii => ScenarioKind::SharedControlSameTreatment,
        }
    }
}

#[derive(Args)]
struct CritArgs {
    /// Population structure JSON file.
    #[arg(long)]
    structure: PathBuf,
    #[command(flatten)]
    corr: CorrSource,
    #[arg(long)]
    alpha: f64,
    /// Per-hypothesis critical-value weights, comma-separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

#[derive(Args)]
struct AdjustPArgs {
    #[arg(long)]
    structure: PathBuf,
    #[command(flatten)]
    corr: CorrSource,
    /// Observed statistics, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    zobs: Vec<f64>,
    /// Per-hypothesis weights used by the rejection rule.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

#[derive(Args)]
struct TwoPopArgs {
    #[arg(long, value_enum)]
    kind: ScenarioArg,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// Single-point evaluation at this overlap prevalence (JSON output).
    #[arg(long, conflicts_with = "grid")]
    pi12: Option<f64>,
    /// Sweep grid start:step:end, inclusive (CSV output).
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct UmbrellaArgs {
    /// UmbrellaConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    control: ControlArg,
    #[arg(long)]
    reps: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlArg {
    Pwer,
    Fwer,
}

#[derive(Args)]
struct PrevSimArgs {
    /// PrevSimConfig JSON file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SciArgs {
    /// Point estimates, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    estimates: Vec<f64>,
    /// Standard errors, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ses: Vec<f64>,
    #[arg(long)]
    structure: PathBuf,
    #[command(flatten)]
    corr: CorrSource,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum)]
    side: SideArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Lower,
    Upper,
    TwoSided,
}

impl From<SideArg> for CiSide {
    fn from(value: SideArg) -> Self {
        match value {
            SideArg::Lower => CiSide::Lower,
            SideArg::Upper => CiSide::Upper,
            SideArg::TwoSided => CiSide::TwoSided,
        }
    }
}

// Distinguishes bad inputs (exit 2) from numerical failures (exit 3).
enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<pwer::Error> for CliError {
    fn from(e: pwer::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("{}", json!({"error": "validation", "message": msg}));
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("{}", json!({"error": "numerical", "message": msg}));
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let (name, resolved, output) = match &cli.command {
        Command::Crit(args) => run_crit(cli, args)?,
        Command::AdjustP(args) => run_adjust_p(cli, args)?,
        Command::TwoPop(args) => run_two_pop(cli, args)?,
        Command::Umbrella(args) => run_umbrella(cli, args)?,
        Command::PrevSim(args) => run_prev_sim(cli, args)?,
        Command::Sci(args) => run_sci(cli, args)?,
    };
    emit(cli, name, resolved, &output)
}

// (subcommand name, resolved config for the manifest, output bytes)
type RunOutput = (&'static str, Value, String);

fn eval_options(cli: &Cli) -> EvalOptions {
    let mut opts = EvalOptions::default();
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    if let Some(tol) = cli.tol {
        opts.c_tol = tol;
    }
    opts
}

fn run_crit(cli: &Cli, args: &CritArgs) -> CliResult<RunOutput> {
    let structure = read_structure(&args.structure)?;
    let (problem, corr_desc) = build_problem(structure, &args.corr, args.weights.clone())?;
    let opts = eval_options(cli);
    let result = solve_critical_with(&problem, args.alpha, &opts)?;
    let thresholds: Vec<f64> = problem.weights().iter().map(|w| w * result.c_star).collect();
    let output = json!({
        "c_star": result.c_star,
        "achieved_level": round6(result.achieved_level),
        "iterations": result.iterations,
        "bracket": [result.bracket.0, result.bracket.1],
        "thresholds": thresholds,
    });
    let resolved = json!({
        "structure": problem.structure(),
        "corr": corr_desc,
        "alpha": args.alpha,
        "weights": problem.weights(),
        "tol": opts.c_tol,
    });
    Ok(("crit", resolved, pretty(&output)))
}

fn run_adjust_p(cli: &Cli, args: &AdjustPArgs) -> CliResult<RunOutput> {
    let structure = read_structure(&args.structure)?;
    let (problem, corr_desc) = build_problem(structure, &args.corr, args.weights.clone())?;
    let ps = adjusted_p_with(&problem, &args.zobs, &eval_options(cli))?;
    let output = Value::Array(ps.iter().map(|&p| json!(round6(p))).collect());
    let resolved = json!({
        "structure": problem.structure(),
        "corr": corr_desc,
        "zobs": args.zobs,
        "weights": problem.weights(),
    });
    Ok(("adjust-p", resolved, pretty(&output)))
}

fn run_two_pop(_cli: &Cli, args: &TwoPopArgs) -> CliResult<RunOutput> {
    let kind: ScenarioKind = args.kind.into();
    let resolved_base = json!({
        "kind": kind,
        "alpha": args.alpha,
        "beta": args.beta,
    });
    if let Some(grid_spec) = &args.grid {
        let grid = parse_grid(grid_spec)?;
        let rows = inflation_sweep(kind, args.alpha, args.beta, &grid)?;
        let mut buf = Vec::new();
        write_inflation_csv(&rows, &mut buf).map_err(|e| CliError::Numerical(e.to_string()))?;
        let mut resolved = resolved_base;
        resolved["grid"] = json!(grid_spec);
        Ok((
            "two-pop",
            resolved,
            String::from_utf8(buf).expect("csv is utf-8"),
        ))
    } else {
        let pi12 = args
            .pi12
            .ok_or_else(|| validation("two-pop needs --pi12 or --grid"))?;
        let scenario = TwoPopScenario::new(kind, pi12, args.alpha, args.beta)?;
        let crit = critical_values(&scenario)?;
        let output = json!({
            "pi12": pi12,
            "c_pwer": crit.c_pwer,
            "c_fwer": crit.c_fwer,
            "q_pwer": sample_size_factor(crit.c_pwer, args.alpha, args.beta),
            "q_fwer": sample_size_factor(crit.c_fwer, args.alpha, args.beta),
        });
        let mut resolved = resolved_base;
        resolved["pi12"] = json!(pi12);
        Ok(("two-pop", resolved, pretty(&output)))
    }
}

fn run_umbrella(cli: &Cli, args: &UmbrellaArgs) -> CliResult<RunOutput> {
    let seed = cli
        .seed
        .ok_or_else(|| validation("umbrella is stochastic: --seed is required"))?;
    let config: UmbrellaConfig = read_json(&args.config)?;
    let control = match args.control {
        ControlArg::Pwer => ControlKind::Pwer,
        ControlArg::Fwer => ControlKind::Fwer,
    };
    let report = simulate(&config, control, args.reps, seed)?;
    let mut output = serde_json::to_value(&report).expect("report serializes");
    for key in ["power", "correct", "false", "rae"] {
        let pair = output[key].as_array().expect("stat pair").clone();
        output[key] = json!([
            round6(pair[0].as_f64().unwrap_or(f64::NAN)),
            round6(pair[1].as_f64().unwrap_or(f64::NAN)),
        ]);
    }
    let resolved = json!({
        "config": config,
        "control": control,
        "reps": args.reps,
    });
    Ok(("umbrella", resolved, pretty(&output)))
}

fn run_prev_sim(cli: &Cli, args: &PrevSimArgs) -> CliResult<RunOutput> {
    let mut config: PrevSimConfig = read_json(&args.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let cells = prevalence_effect_grid(&config)?;
    let mut buf = Vec::new();
    write_grid_csv(&cells, &mut buf).map_err(|e| CliError::Numerical(e.to_string()))?;
    let resolved = serde_json::to_value(&config).expect("config serializes");
    Ok((
        "prev-sim",
        resolved,
        String::from_utf8(buf).expect("csv is utf-8"),
    ))
}

fn run_sci(cli: &Cli, args: &SciArgs) -> CliResult<RunOutput> {
    let structure = read_structure(&args.structure)?;
    let (problem, corr_desc) = build_problem(structure, &args.corr, None)?;
    let opts = eval_options(cli);
    let crit = solve_critical_with(&problem, args.alpha, &opts)?;
    let result = sci_bounds(&args.estimates, &args.ses, crit.c_star, args.side.into())?;
    let intervals: Vec<Value> = result
        .lower
        .iter()
        .zip(&result.upper)
        .map(|(&lo, &hi)| {
            json!({
                "lower": finite_or_null(lo),
                "upper": finite_or_null(hi),
            })
        })
        .collect();
    let output = json!({
        "c_star": crit.c_star,
        "side": match args.side {
            SideArg::Lower => "lower",
            SideArg::Upper => "upper",
            SideArg::TwoSided => "two-sided",
        },
        "intervals": intervals,
    });
    let resolved = json!({
        "structure": problem.structure(),
        "corr": corr_desc,
        "alpha": args.alpha,
        "estimates": args.estimates,
        "ses": args.ses,
    });
    Ok(("sci", resolved, pretty(&output)))
}

#[derive(Deserialize)]
struct CorrFile {
    entries: Vec<Vec<f64>>,
    #[serde(default)]
    df: Option<f64>,
}

/// Builds the PWER problem from a structure and a correlation source,
/// returning a manifest-friendly description of the correlation route.
fn build_problem(
    structure: PopulationStructure,
    corr: &CorrSource,
    weights: Option<Vec<f64>>,
) -> CliResult<(PwerProblem, Value)> {
    let df = match corr.df {
        Some(v) => Df::Finite(v),
        None => Df::Infinite,
    };
    let (structure, matrix, desc) = if let Some(path) = &corr.corr_file {
        let file: CorrFile = read_json(path)?;
        let matrix = CorrelationMatrix::from_rows(&file.entries)?;
        let df_desc = file.df;
        let desc = json!({"source": "file", "path": path.display().to_string(), "df": df_desc});
        let df_final = match (corr.df, file.df) {
            (Some(v), _) | (None, Some(v)) => Df::Finite(v),
            (None, None) => Df::Infinite,
        };
        return finish_problem(structure, matrix, df_final, weights, desc);
    } else if let Some(scenario) = corr.scenario {
        let kind: ScenarioKind = scenario.into();
        if structure.n_hypotheses() != 2 {
            return Err(validation(
                "--scenario needs a two-hypothesis structure".to_string(),
            ));
        }
        let rho = match corr.pi12 {
            Some(pi12) => {
                let s = TwoPopScenario::new(kind, pi12, 0.5, 0.5)?;
                pwer::twopop::scenario_correlation(&s)
            }
            None => {
                let pi12 = structure
                    .strata()
                    .iter()
                    .find(|s| s.subset == Subset::from_mask(0b11))
                    .map(|s| s.pi)
                    .unwrap_or(0.0);
                let pi1 = structure.population_prevalence(1)? - pi12;
                let pi2 = structure.population_prevalence(2)? - pi12;
                correlation_from_prevalences(kind, pi1, pi2, pi12)?
            }
        };
        let matrix = CorrelationMatrix::equicorrelated(2, rho)?;
        let desc = json!({"source": "scenario", "kind": kind, "rho": rho});
        (structure, matrix, desc)
    } else if corr.umbrella {
        return build_umbrella_problem(structure, df, weights);
    } else {
        return Err(validation(
            "choose a correlation source: --corr-file, --scenario or --umbrella",
        ));
    };
    finish_problem(structure, matrix, df, weights, desc)
}

/// Subset-strategy problem derived from disjoint strata prevalences: the
/// hypotheses are all non-empty subset strategies, stratum `i` is affected
/// by every strategy containing it.
fn build_umbrella_problem(
    structure: PopulationStructure,
    df: Df,
    weights: Option<Vec<f64>>,
) -> CliResult<(PwerProblem, Value)> {
    let l = structure.n_hypotheses();
    if structure.strata().iter().any(|s| s.subset.len() != 1) {
        return Err(validation(
            "--umbrella needs disjoint populations (singleton strata)",
        ));
    }
    if l > 4 {
        return Err(validation(
            "--umbrella supports at most 4 strata here (15 subset hypotheses); \
             use the umbrella subcommand for larger designs",
        ));
    }
    let pi: Vec<f64> = (1..=l)
        .map(|i| structure.population_prevalence(i))
        .collect::<pwer::Result<_>>()?;
    let matrix = pwer::umbrella::subset_corr_matrix(&pi)?;
    let n_subsets = (1usize << l) - 1;
    let strata: Vec<(Subset, f64)> = (0..l)
        .map(|i| {
            let hypotheses: Vec<usize> = (1..=n_subsets)
                .filter(|mask| mask & (1 << i) != 0)
                .collect();
            Ok((Subset::from_indices(&hypotheses)?, pi[i]))
        })
        .collect::<pwer::Result<_>>()?;
    let subset_structure = PopulationStructure::new(strata)?;
    let desc = json!({"source": "umbrella", "pi": pi, "subset_hypotheses": n_subsets});
    finish_problem(subset_structure, matrix, df, weights, desc)
}

fn finish_problem(
    structure: PopulationStructure,
    matrix: CorrelationMatrix,
    df: Df,
    weights: Option<Vec<f64>>,
    desc: Value,
) -> CliResult<(PwerProblem, Value)> {
    let mut problem = PwerProblem::new(structure, CorrelationModel::new(matrix, df))?;
    if let Some(w) = weights {
        problem = problem.with_weights(w)?;
    }
    Ok((problem, desc))
}

fn read_structure(path: &Path) -> CliResult<PopulationStructure> {
    read_json(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("invalid JSON in {}: {e}", path.display())))
}

/// Parses "start:step:end" into an inclusive grid.
fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(validation(format!("grid must be start:step:end, got {spec}")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|e| validation(format!("bad grid number {p}: {e}")))
        })
        .collect::<CliResult<_>>()?;
    let (start, step, end) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(validation("grid needs step > 0 and end >= start"));
    }
    let n = ((end - start) / step).round() as usize;
    Ok((0..=n).map(|i| (start + i as f64 * step).min(end)).collect())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn pretty(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("valid JSON");
    text.push('\n');
    text
}

/// Prints to stdout, or writes the output file plus its manifest.
fn emit(cli: &Cli, subcommand: &'static str, resolved: Value, output: &str) -> CliResult<()> {
    match &cli.out {
        None => {
            print!("{output}");
            Ok(())
        }
        Some(path) => {
            fs::write(path, output)
                .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
            let digest = Sha256::digest(output.as_bytes());
            let manifest = json!({
                "subcommand": subcommand,
                "config": resolved,
                "seed": cli.seed,
                "version": env!("CARGO_PKG_VERSION"),
                "sha256": format!("{digest:x}"),
            });
            let manifest_path = manifest_path(path);
            fs::write(&manifest_path, pretty(&manifest))
                .map_err(|e| validation(format!("cannot write {}: {e}", manifest_path.display())))?;
            Ok(())
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
