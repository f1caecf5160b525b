use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skillgain::error::{Error, Result};
use skillgain::exec::Execution;
use skillgain::experiment::{
    evaluate_policy, preprocess_to_dir, report, run_experiment, ExperimentConfig, SourceFormat,
};
use skillgain::io::{read_json, write_json};
use skillgain::policy::{PolicyConfig, PolicyKind};
use skillgain::preprocess::{Fractions, PreprocessConfig, DEFAULT_MIN_INTERACTIONS};
use skillgain::replay::{ReplayData, DEFAULT_EVAL_HORIZON, DEFAULT_WARM_START_ROUNDS, DEFAULT_WINDOW};
use skillgain::synthetic::{generate, write_dataset, SyntheticSpec};
use skillgain::tuner::{grid_search, EvalSettings, GridSpec, TuneResult};

/// Offline replay evaluation of exercise recommendation policies.
#[derive(Parser)]
#[command(name = "skillgain", version)]
struct Cli {
    /// Run without the thread pool.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, filter and split raw interactions into train/validation/test.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic interaction log with known ground truth.
    Simulate(SimulateArgs),
    /// Grid-search one policy on the validation split.
    Tune(TuneArgs),
    /// Final test replay of one policy configuration.
    Evaluate(EvaluateArgs),
    /// Merge evaluation outputs into comparison tables.
    Report(ReportArgs),
    /// Run the full pipeline from a JSON experiment config.
    Run(RunArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw interaction file.
    #[arg(long)]
    input: PathBuf,
    /// Learner profile CSV (taken from the input for the assistments format).
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// `canonical` or `assistments`.
    #[arg(long, default_value = "canonical")]
    format: SourceFormat,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_INTERACTIONS)]
    min_interactions: usize,
    /// Train, validation and test fractions, e.g. `0.7,0.15,0.15`.
    #[arg(long)]
    fractions: Option<Fractions>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON generator spec; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Preprocessed data directory.
    #[arg(long)]
    data_dir: PathBuf,
    /// Random rounds before a policy's first training update.
    #[arg(long, default_value_t = DEFAULT_WARM_START_ROUNDS)]
    warm_start: usize,
    /// Fraction of each learner's logged exercises replayed at evaluation.
    #[arg(long, default_value_t = DEFAULT_EVAL_HORIZON)]
    horizon: f64,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    policy: PolicyKind,
    #[command(flatten)]
    replay: ReplayArgs,
    /// Comma-separated replay seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// JSON grid; defaults to the built-in grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PolicyKind,
    /// Inline JSON hyperparameters, e.g. `{"v": 0.05}`.
    #[arg(long, conflicts_with = "tuned")]
    params: Option<String>,
    /// Take the winning configuration from a `tune` output.
    #[arg(long)]
    tuned: Option<PathBuf>,
    #[command(flatten)]
    replay: ReplayArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep learning during the test replay.
    #[arg(long)]
    online: bool,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation directories as `name=dir`.
    #[arg(required = true)]
    evaluations: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn settings(args: &ReplayArgs, freeze: bool) -> EvalSettings {
    EvalSettings {
        warm_start_rounds: args.warm_start,
        horizon: args.horizon,
        freeze,
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("horizon must lie in (0, 1], got {horizon}")))
    }
}

fn load_data(dir: &Path) -> Result<ReplayData> {
    ReplayData::load(dir).map_err(|e| e.in_stage("load"))
}

fn preprocess(args: PreprocessArgs, exec: Execution) -> Result<()> {
    let config = PreprocessConfig {
        min_interactions: args.min_interactions,
        fractions: args.fractions.unwrap_or_default(),
    };
    let report = preprocess_to_dir(
        &args.input,
        args.profiles.as_deref(),
        args.format,
        None,
        &config,
        &args.out_dir,
        exec,
    )?;
    println!(
        "{} records in, {} retained (train {}, validation {}, test {}), {} malformed",
        report.input_records,
        report.final_counts.interactions,
        report.split.train,
        report.split.validation,
        report.split.test,
        report.malformed,
    );
    Ok(())
}

fn simulate(args: SimulateArgs, exec: Execution) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate(&spec, exec)?;
    write_dataset(&data, &spec, &args.out_dir)?;
    println!(
        "{} interactions for {} learners written to {}",
        data.interactions.len(),
        data.profiles.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn tune(args: TuneArgs, exec: Execution) -> Result<()> {
    check_horizon(args.replay.horizon)?;
    let grid: GridSpec = match &args.grid {
        Some(path) => read_json(path)?,
        None => GridSpec::default(),
    };
    let data = load_data(&args.replay.data_dir)?;
    let result = grid_search(args.policy, &grid, &data, &args.seeds, &settings(&args.replay, true), exec)?;
    write_json(&args.out, &result)?;
    let best = &result.scores[result.winner_index];
    println!(
        "{}: best of {} configurations {} (validation reward {:.6})",
        args.policy,
        result.scores.len(),
        serde_json::to_string(&result.winner)?,
        best.mean_reward
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    check_horizon(args.replay.horizon)?;
    let config = match (&args.params, &args.tuned) {
        (_, Some(path)) => {
            let tuned: TuneResult = read_json(path)?;
            if tuned.policy != args.policy {
                return Err(Error::Config(format!(
                    "{} holds a {} tuning result, not {}",
                    path.display(),
                    tuned.policy,
                    args.policy
                )));
            }
            tuned.winner
        }
        (Some(json), None) => args.policy.config_from_params(&serde_json::from_str(json)?)?,
        (None, None) => args.policy.default_config(),
    };
    let data = load_data(&args.replay.data_dir)?;
    let summary = evaluate_policy(
        &config,
        &data,
        args.seed,
        &settings(&args.replay, !args.online),
        args.window,
        &args.out,
    )?;
    println!(
        "{}: mean reward {:.6} over {} rounds",
        describe(&config),
        summary.final_reward,
        summary.rounds
    );
    Ok(())
}

fn describe(config: &PolicyConfig) -> String {
    match serde_json::to_string(config) {
        Ok(json) => json,
        Err(_) => config.kind().to_string(),
    }
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let evaluations = args
        .evaluations
        .iter()
        .map(|pair| match pair.split_once('=') {
            Some((name, dir)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
            _ => Err(Error::Config(format!("expected `name=dir`, got `{pair}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    report(&evaluations, &args.out)?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn run(args: RunArgs, sequential: bool) -> Result<()> {
    let mut config: ExperimentConfig = read_json(&args.config).map_err(|e| e.in_stage("config"))?;
    if sequential {
        config.parallel = false;
    }
    let summary = run_experiment(&config)?;
    for p in &summary.policies {
        println!("{:<8} {:.6} ({} rounds)", p.policy.to_string(), p.final_reward, p.rounds);
    }
    for (pair, gain) in &summary.improvements {
        match gain {
            Some(g) => println!("{pair}: {g:+.2}%"),
            None => println!("{pair}: undefined"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a, exec).map_err(|e| e.in_stage("preprocess")),
        Command::Simulate(a) => simulate(a, exec).map_err(|e| e.in_stage("simulate")),
        Command::Tune(a) => tune(a, exec).map_err(|e| e.in_stage("tune")),
        Command::Evaluate(a) => evaluate(a).map_err(|e| e.in_stage("evaluate")),
        Command::Report(a) => report_cmd(a).map_err(|e| e.in_stage("report")),
        Command::Run(a) => run(a, cli.sequential),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
