use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ghjm::config::{ModelConfig, ScenarioConfig};
use ghjm::modelsel::{comparison_report, BridgeConfig, BridgeSpace, ComparisonRow};
use ghjm::predict::{all_baseline_draws, cr_predictive, predictive_baseline, write_curves};
use ghjm::run::{self, FittedRun};
use ghjm::{io, Error, Result};

/// Bayesian joint models for longitudinal and survival data with a general hazard structure.
#[derive(Parser, Debug)]
#[command(name = "ghjm", version)]
struct Cli {
    /// Seed for every random choice the command makes; overrides seeds in
    /// configuration files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// Fit a joint model and write chains, diagnostics and a posterior summary.
    Fit(FitArgs),
    /// Compare fitted runs by bridge-sampling marginal likelihoods.
    Compare(CompareArgs),
    /// Posterior-predictive baseline curves of a fitted run.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Shipped scenario (0, 1, 2, 3) or a path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Number of subjects (defaults to the scenario's).
    #[arg(long)]
    n: Option<usize>,
    /// Target censoring proportion, calibrated through the administrative time.
    #[arg(long)]
    censoring: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Model configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory holding longitudinal.csv and survival.csv.
    #[arg(long, conflicts_with_all = ["longitudinal", "survival"])]
    data: Option<PathBuf>,
    /// Longitudinal table, when the tables live in different places.
    #[arg(long, requires = "survival")]
    longitudinal: Option<PathBuf>,
    /// Survival table, paired with --longitudinal.
    #[arg(long, requires = "longitudinal")]
    survival: Option<PathBuf>,
    /// Run directory for chains, diagnostics and the summary.
    #[arg(long)]
    out: PathBuf,
    /// Number of chains (overrides the configuration file).
    #[arg(long)]
    chains: Option<usize>,
    /// Iterations per chain, warm-up included.
    #[arg(long)]
    iterations: Option<usize>,
    /// Warm-up iterations discarded from each chain.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every thin-th draw after warm-up.
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Run directories written by `fit`.
    #[arg(required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Write the report here as well as to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model names for the report (defaults to the directory names).
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    /// Integration space: `marginal` integrates the random effects out by
    /// quadrature; `augmented` bridges over them as sampled.
    #[arg(long, default_value = "marginal", value_parser = ["marginal", "augmented"])]
    space: String,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Run directory written by `fit`.
    run: PathBuf,
    /// Time grid as from:to:count or a comma-separated list.
    #[arg(long)]
    grid: String,
    /// CSV file for the curves.
    #[arg(long)]
    out: PathBuf,
}

fn simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut scenario = if Path::new(&args.scenario).is_file() {
        ScenarioConfig::from_toml(&read(Path::new(&args.scenario))?)?
    } else {
        ScenarioConfig::builtin(&args.scenario)?
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if let Some(c) = args.censoring {
        scenario.censoring.target = Some(c);
    }
    let n = args.n.unwrap_or(scenario.n);
    scenario.n = n;
    scenario.validate()?;
    let m = run::write_simulation(&args.out, &scenario, n)?;
    println!(
        "simulated {} subjects from {} (seed {}): censoring {:.3}, administrative time {:.4}",
        m.n, m.scenario, m.seed, m.realized_censoring, m.admin_time
    );
    Ok(())
}

fn fit(args: &FitArgs, seed: Option<u64>) -> Result<()> {
    let mut config = ModelConfig::from_toml(&read(&args.config)?)?;
    if let Some(s) = seed {
        config.sampler.seed = s;
    }
    let s = &mut config.sampler;
    s.chains = args.chains.unwrap_or(s.chains);
    s.iterations = args.iterations.unwrap_or(s.iterations);
    s.burn_in = args.burn_in.unwrap_or(s.burn_in);
    s.thin = args.thin.unwrap_or(s.thin);
    config.validate()?;
    let data = match (&args.data, &args.longitudinal, &args.survival) {
        (Some(d), _, _) => run::read_dataset_files(&d.join("longitudinal.csv"), &d.join("survival.csv"))?,
        (None, Some(l), Some(s)) => run::read_dataset_files(l, s)?,
        _ => return Err(Error::validation("give --data DIR or both --longitudinal and --survival")),
    };
    let fitted = run::fit(&config, data)?;
    fitted.save(&args.out)?;
    let summary = fitted.summary()?;
    let mut buf = Vec::new();
    io::write_summary(&mut buf, &summary)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn compare(args: &CompareArgs, seed: Option<u64>) -> Result<()> {
    if !args.names.is_empty() && args.names.len() != args.runs.len() {
        return Err(Error::validation("--names needs one name per run"));
    }
    let runs = args.runs.iter().map(|r| FittedRun::load(r)).collect::<Result<Vec<_>>>()?;
    let hash = &runs[0].manifest.dataset_hash;
    let mismatched: Vec<String> = args
        .runs
        .iter()
        .zip(&runs)
        .filter(|(_, r)| &r.manifest.dataset_hash != hash)
        .map(|(p, _)| p.display().to_string())
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Validation(vec![format!(
            "runs were fitted to different datasets than {}: {}",
            args.runs[0].display(),
            mismatched.join(", ")
        )]));
    }
    let cfg = BridgeConfig { seed: seed.unwrap_or(BridgeConfig::default().seed), ..Default::default() };
    let space = if args.space == "augmented" { BridgeSpace::Augmented } else { BridgeSpace::Marginal };
    let mut rows = Vec::with_capacity(runs.len());
    for (k, (path, r)) in args.runs.iter().zip(&runs).enumerate() {
        let est = r.log_marginal(space, &cfg)?;
        for w in &est.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        let model = match args.names.get(k) {
            Some(n) => n.clone(),
            None => path.file_name().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
        };
        rows.push(ComparisonRow { model, log_marginal: est.log_marginal, se: est.se });
    }
    let report = comparison_report(&rows)?;
    print!("{report}");
    if let Some(out) = &args.out {
        fs::write(out, &report).map_err(|e| Error::validation(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let run = FittedRun::load(&args.run)?;
    let grid = io::parse_grid(&args.grid)?;
    let draws = all_baseline_draws(&run.model, &run.chains)?;
    let labels: Vec<String> = run.model.spec.causes.iter().map(|c| c.cause.clone()).collect();
    let rows = if labels.len() > 1 {
        cr_predictive(&draws, &grid)?.rows(&labels)
    } else {
        let single: Vec<_> = draws.iter().map(|d| d[0]).collect();
        predictive_baseline(&single, &grid)?.rows(&labels[0])
    };
    let file = fs::File::create(&args.out).map_err(|e| Error::validation(format!("cannot create {}: {e}", args.out.display())))?;
    write_curves(std::io::BufWriter::new(file), &rows)?;
    println!("wrote {} curve values to {}", rows.len(), args.out.display());
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Fit(a) => fit(a, cli.seed),
        Command::Compare(a) => compare(a, cli.seed),
        Command::Predict(a) => predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
