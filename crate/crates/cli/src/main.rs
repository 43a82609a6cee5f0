//! `hrpool`: combined treatment effects from pooled survival trials.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hrpool_core::analysis::report::{
    write_breslow_curve_csv, write_breslow_windows_csv, write_grid_csv, write_ordering_csv, write_sweep_csv,
};
use hrpool_core::analysis::{
    bias_sweep, breslow_limit, figure2_grid, ordering_suite, table1_grid, EmpiricalBreslowSpec, RunManifest,
};
use hrpool_core::combine::{
    binary_definitions, linear_hr, linear_log_hr, mixing_proportion, pooled_effect, solve_cpl_binary,
    theta_hm_estimate, theta_m_estimate, wald_test, AggregatesFile,
};
use hrpool_core::cox::fit_cox;
use hrpool_core::data::{pool, read_patient_csv, write_patient_csv, CovariateDistribution};
use hrpool_core::{CombinedEffect, Error, Method, ScenarioSpec, TrialAggregate, WaldResult, WeightScheme};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hrpool",
    version,
    about = "Combined hazard ratios for pooled survival trials"
)]
struct Cli {
    /// Master seed for randomized commands; overrides a scenario file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every combined-effect definition for an arm-indicator covariate.
    #[command(allow_negative_numbers = true)]
    Solve(SolveArgs),
    /// Combined estimates with variances and Wald tests from aggregates or patient lines.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Simulate one replicate of a scenario to a patient-line CSV.
    Simulate(SimulateArgs),
    /// Monte Carlo sweep of the pooled and plug-in estimates over study end times.
    Sweep(SweepArgs),
    /// Hazard-ratio definitions on the reference table layout.
    Table(TableArgs),
    /// Hazard-ratio definitions and percentage differences on a rectangular grid.
    Grid(GridArgs),
    /// Limiting hazard of the pooled Breslow estimate, optionally against simulation.
    #[command(allow_negative_numbers = true)]
    Breslow(BreslowArgs),
    /// Random checks of the ordering of the definitions.
    Ordering(OrderingArgs),
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(long)]
    a: f64,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    /// Cumulative baseline hazard at the administrative study end.
    #[arg(long = "tmax-H")]
    tmax_h: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Weights {
    InverseVariance,
    Size,
}

#[derive(Args, Serialize)]
#[group(required = true, multiple = false, id = "input")]
struct EstimateInput {
    /// Aggregates JSON: trials with n, beta_hat and covariance, plus the covariate law.
    #[arg(long)]
    aggregates: Option<PathBuf>,
    /// Patient-line CSV (trial_id, time, event, z1..zk).
    #[arg(long)]
    lines: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    input: EstimateInput,
    #[arg(long, value_enum, default_value = "inverse-variance")]
    weights: Weights,
    /// Covariate value at which the linear hazard-ratio combination is taken (default: all ones).
    #[arg(long, value_delimiter = ',')]
    z: Option<Vec<f64>>,
    /// Null value for the log-scale Wald tests; the hazard-ratio scale uses its exponential.
    #[arg(long, default_value_t = 0.0)]
    null: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replicate (random stream) to draw.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated ascending study end times; `inf` means no cut.
    #[arg(long, value_delimiter = ',', value_parser = parse_time)]
    tmax_grid: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TableArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GridArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    a_min: f64,
    #[arg(long, default_value_t = 3.0)]
    a_max: f64,
    #[arg(long, default_value_t = 0.2)]
    b_min: f64,
    #[arg(long, default_value_t = 3.0)]
    b_max: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

#[derive(Args, Serialize)]
struct BreslowArgs {
    #[arg(long)]
    a: f64,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    p: f64,
    /// Analytic curve on [0, t-end].
    #[arg(long, default_value_t = 5.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.05)]
    t_step: f64,
    /// Pooled subjects for the empirical comparison; 0 skips it.
    #[arg(long, default_value_t = 0)]
    samples: usize,
    #[arg(long, default_value_t = 10_000)]
    window_events: usize,
    #[arg(long, default_value_t = 2.0)]
    horizon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OrderingArgs {
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long, default_value_t = 0.05)]
    lo: f64,
    #[arg(long, default_value_t = 3.0)]
    hi: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_time(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|e| format!("`{s}`: {e}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start {n} worker threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERIC })
        }
    }
}

fn run(cli: &Cli) -> hrpool_core::Result<()> {
    match &cli.command {
        Command::Solve(args) => {
            let defs = binary_definitions(args.a, args.b, args.p, args.q, args.tmax_h)?;
            emit_json(&defs, None)
        }
        Command::Estimate(args) => estimate(args),
        Command::Simulate(args) => {
            let scenario = load_scenario(&args.scenario, cli.seed)?;
            write_patient_csv(&scenario.simulate(args.replicate), &args.out)?;
            write_manifest(&args.out, "simulate", Some(scenario.seed), &(args, &scenario))
        }
        Command::Sweep(args) => {
            let scenario = load_scenario(&args.scenario, cli.seed)?;
            let result = bias_sweep(&scenario, &args.tmax_grid, args.replicates)?;
            write_table(&args.out, |w| write_sweep_csv(&result, w))?;
            write_manifest(&args.out, "sweep", Some(scenario.seed), &(args, &scenario))
        }
        Command::Table(args) => {
            let grid = table1_grid()?;
            write_table(&args.out, |w| write_grid_csv(&grid, w))?;
            write_manifest(&args.out, "table", None, args)
        }
        Command::Grid(args) => {
            let grid = figure2_grid((args.a_min, args.a_max), (args.b_min, args.b_max), args.step)?;
            write_table(&args.out, |w| write_grid_csv(&grid, w))?;
            write_manifest(&args.out, "grid", None, args)
        }
        Command::Breslow(args) => breslow(args, cli.seed),
        Command::Ordering(args) => {
            let seed = seed_or_fresh(cli.seed);
            let reports = ordering_suite(args.draws, args.lo, args.hi, seed)?;
            write_table(&args.out, |w| write_ordering_csv(&reports, w))?;
            write_manifest(&args.out, "ordering", Some(seed), args)
        }
    }
}

fn seed_or_fresh(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> hrpool_core::Result<ScenarioSpec> {
    let mut scenario = ScenarioSpec::from_json_file(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    Ok(scenario)
}

fn write_table(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> hrpool_core::Result<()>,
) -> hrpool_core::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(out: &Path, command: &str, seed: Option<u64>, config: &impl Serialize) -> hrpool_core::Result<()> {
    let manifest = RunManifest::new(command, seed, config)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(manifest_path(out), text)?;
    Ok(())
}

fn emit_json(value: &impl Serialize, out: Option<&Path>) -> hrpool_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct EffectReport {
    #[serde(flatten)]
    effect: CombinedEffect,
    std_errors: Option<Vec<f64>>,
    /// Test of the first component against the null.
    wald: Option<WaldResult>,
}

#[derive(Serialize)]
struct EstimateReport {
    mixing_p: f64,
    trials: Vec<TrialAggregate>,
    effects: Vec<EffectReport>,
    /// Methods not computable for this input, with the reason.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    skipped: Vec<String>,
}

fn report(effect: CombinedEffect, null: f64) -> EffectReport {
    let null = if effect.method == Method::LinearHR {
        null.exp()
    } else {
        null
    };
    EffectReport {
        std_errors: effect.std_errors(),
        wald: wald_test(&effect, null, 0).ok(),
        effect,
    }
}

fn estimate(args: &EstimateArgs) -> hrpool_core::Result<()> {
    let (trials, dist, pooled) = match (&args.input.aggregates, &args.input.lines) {
        (Some(path), _) => {
            let file = AggregatesFile::from_json_file(path)?;
            (file.trials, file.covariate_distribution, None)
        }
        (None, Some(path)) => {
            let datasets = read_patient_csv(path)?;
            if datasets.len() < 2 {
                return Err(Error::InvalidInput(
                    "patient lines must contain at least two trials".into(),
                ));
            }
            let trials = datasets
                .iter()
                .map(|d| Ok(TrialAggregate::from_fit(d.label.clone(), &fit_cox(d)?, d.len())))
                .collect::<hrpool_core::Result<Vec<_>>>()?;
            let all = pool(&datasets)?;
            let dist = CovariateDistribution::empirical(all.subjects())?;
            (trials, dist, Some(fit_cox(&all)?))
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let scheme = match args.weights {
        Weights::InverseVariance => WeightScheme::InverseVariance,
        Weights::Size => WeightScheme::SizeProportional,
    };
    let k = trials[0].dim();
    let z = args.z.clone().unwrap_or_else(|| vec![1.0; k]);
    let p = mixing_proportion(&trials);
    let mut effects = Vec::new();
    let mut skipped = Vec::new();
    let mut attempt = |name: &str, result: hrpool_core::Result<CombinedEffect>| match result {
        Ok(effect) => {
            effects.push(report(effect, args.null));
            Ok(())
        }
        // Inverse-variance weights need positive variances; zero-variance input still
        // supports the other methods.
        Err(e @ Error::SingularVariance { .. }) => {
            skipped.push(format!("{name}: {e}"));
            Ok(())
        }
        Err(e) => Err(e),
    };
    attempt("linear_log", linear_log_hr(&trials, &scheme))?;
    attempt("linear_hr", linear_hr(&trials, &scheme, &z))?;
    if let Some(fit) = &pooled {
        attempt("pooled_mple", Ok(pooled_effect(fit, p)))?;
    }
    if trials.len() == 2 {
        attempt("misspecified", theta_m_estimate(&trials, &dist))?;
        attempt("harmonic_mean", theta_hm_estimate(&trials, &dist))?;
    } else {
        skipped.push("misspecified, harmonic_mean: need exactly two trials".into());
    }
    emit_json(
        &EstimateReport {
            mixing_p: p,
            trials,
            effects,
            skipped,
        },
        args.out.as_deref(),
    )
}

fn breslow(args: &BreslowArgs, seed: Option<u64>) -> hrpool_core::Result<()> {
    if !(args.t_end > 0.0 && args.t_step > 0.0) {
        return Err(Error::InvalidInput("t-end and t-step must be positive".into()));
    }
    let c_star = solve_cpl_binary(args.a, args.b, args.p, 0.5)?;
    let n = (args.t_end / args.t_step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * args.t_step).collect();
    let mut cmp = breslow_limit(args.a, args.b, args.p, c_star, &grid)?;
    let mut used_seed = None;
    if args.samples > 0 {
        let s = seed_or_fresh(seed);
        used_seed = Some(s);
        cmp = cmp.with_empirical(EmpiricalBreslowSpec {
            sample_size: args.samples,
            window_events: args.window_events,
            horizon: args.horizon,
            seed: s,
        })?;
        let mut windows = args.out.as_os_str().to_owned();
        windows.push(".windows.csv");
        write_table(Path::new(&windows), |w| write_breslow_windows_csv(&cmp, w))?;
    }
    write_table(&args.out, |w| write_breslow_curve_csv(&cmp, w))?;
    write_manifest(&args.out, "breslow", used_seed, args)
}
