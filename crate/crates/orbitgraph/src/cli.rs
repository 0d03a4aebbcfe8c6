//! Command-line pipeline: dataset generation, training (with and without
//! the physics loss), evaluation, prediction plots and run comparison,
//! plus a bundled small-scale end-to-end reproduction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    comparison_csv, comparison_table, curve_csv, evaluate_model, metrics_csv, parse_metrics_csv,
    RunMetrics,
};
use crate::loss::LossConfig;
use crate::model::{load_checkpoint, ModelConfig};
use crate::scenario::{
    generate_dataset, load_dataset, save_dataset, DatasetSplit, ScenarioConfig, ScenarioTrajectory,
    FEATURE_DIM,
};
use crate::train::{fit, window_count, FitOutputs, TrainConfig};

/// Full run description; a run is reproducible from this plus nothing else.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub paths: RunPaths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub dataset: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        Ok(config)
    }
}

#[derive(Parser)]
#[command(
    name = "orbitgraph",
    version,
    about = "Satellite relative-motion forecasting with an evolving graph network and a physics-informed loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a constellation dataset and write it as JSON.
    Generate(GenerateArgs),
    /// Train a predictor on a dataset; writes checkpoints and a log.
    Train(TrainArgs),
    /// Compute RMSE metrics of a checkpoint over a dataset split.
    Evaluate(EvaluateArgs),
    /// Plot truth-versus-prediction series for one trajectory.
    Predict(PredictArgs),
    /// Merge two evaluated runs into a side-by-side comparison table.
    Plot(PlotArgs),
    /// Small-scale end-to-end pipeline: generate, train both loss arms,
    /// evaluate, compare.
    ReproduceDesk(ReproduceArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// RunConfig JSON; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset path.
    #[arg(long, default_value = "dataset.json")]
    out: PathBuf,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Agent count range (min max).
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    agents: Option<Vec<usize>>,
    /// Steps per trajectory.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Zero all cross-track components.
    #[arg(long)]
    planar: bool,
    /// Worker threads for generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// "on" trains with the ramped physics loss, "off" pins it to zero.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    physics: String,
    /// Output directory (checkpoints + training_log.csv).
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Training-schedule seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter-init seed override.
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Label recorded in metrics.csv.
    #[arg(long, default_value = "run")]
    label: String,
    /// Which split to evaluate.
    #[arg(long, default_value = "test", value_parser = ["train", "validation", "test", "all"])]
    split: String,
    /// Feed predictions back into the history while evaluating.
    #[arg(long)]
    autoregressive: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Index into the chosen split.
    #[arg(long)]
    trajectory_index: usize,
    #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
    split: String,
    #[arg(long, default_value = "predict")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Two run directories, each holding a metrics.csv.
    #[arg(num_args = 2, value_names = ["RUN_A", "RUN_B"])]
    run_dirs: Vec<PathBuf>,
    #[arg(long, default_value = "comparison")]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, default_value = "desk")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trajectories: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Agent count range (min max).
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [3, 3])]
    agents: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Failures split by exit code: 2 for unusable inputs or configuration,
/// 1 for failures during execution.
enum CliError {
    Usage(Error),
    Runtime(Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &Error {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e,
        }
    }
}

/// Input-side errors are usage errors.
fn usage<T>(result: Result<T>) -> std::result::Result<T, CliError> {
    result.map_err(CliError::Usage)
}

fn runtime<T>(result: Result<T>) -> std::result::Result<T, CliError> {
    result.map_err(CliError::Runtime)
}

pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ORBITGRAPH_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err.error());
            err.code()
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Plot(args) => cmd_plot(args),
        Command::ReproduceDesk(args) => cmd_reproduce_desk(args),
    }
}

fn load_run_config(path: &Option<PathBuf>) -> std::result::Result<RunConfig, CliError> {
    match path {
        Some(p) => usage(RunConfig::load(p)),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_generate(args: GenerateArgs) -> std::result::Result<(), CliError> {
    let mut config = load_run_config(&args.config)?;
    if let Some(n) = args.trajectories {
        config.scenario.trajectory_count = n;
    }
    if let Some(agents) = &args.agents {
        config.scenario.agent_count_range = [agents[0], agents[1]];
    }
    if let Some(steps) = args.steps {
        config.scenario.step_count = steps;
    }
    if let Some(seed) = args.seed {
        config.scenario.seed = seed;
    }
    if args.planar {
        config.scenario.planar = true;
    }
    usage(config.scenario.validate())?;

    let split = runtime(generate_dataset(&config.scenario, args.jobs.max(1)))?;
    runtime(save_dataset(&split, &args.out))?;

    let mut agent_histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut density_sum = 0.0;
    for traj in split.all() {
        *agent_histogram.entry(traj.agent_count()).or_insert(0) += 1;
        density_sum += traj.edge_density(0);
    }
    println!("wrote {} trajectories to {}", split.total(), args.out.display());
    println!(
        "split: {} train / {} validation / {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let histogram: Vec<String> = agent_histogram
        .iter()
        .map(|(agents, count)| format!("{agents} agents x{count}"))
        .collect();
    println!("agents: {}", histogram.join(", "));
    println!(
        "mean step-0 edge density: {:.4}",
        density_sum / split.total() as f64
    );
    Ok(())
}

fn apply_physics_arm(loss: &mut LossConfig, physics_on: bool) {
    if !physics_on {
        loss.lambda_phys_start = 0.0;
        loss.lambda_phys_max = 0.0;
    }
}

fn cmd_train(args: TrainArgs) -> std::result::Result<(), CliError> {
    let mut config = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(seed) = args.model_seed {
        config.train.model_seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    apply_physics_arm(&mut config.loss, args.physics == "on");
    usage(config.model.validate())?;
    usage(config.train.validate())?;
    usage(config.loss.validate())?;

    let dataset = usage(load_dataset(&args.dataset))?;
    usage(check_dataset_for_model(&dataset, &config.model))?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(Error::io(&args.out, e)))?;
    let log_path = args.out.join("training_log.csv");
    let result = runtime(fit(
        &dataset,
        &config.model,
        &config.train,
        &config.loss,
        FitOutputs {
            checkpoint_dir: Some(&args.out),
            log_path: Some(&log_path),
        },
    ))?;

    println!(
        "trained {} epochs (physics {}), best validation loss {:.6} at epoch {}",
        config.train.epochs,
        args.physics,
        result.best_val_loss,
        result.best_epoch
    );
    println!("checkpoint: {}", args.out.join("checkpoint_best.json").display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn select_split<'a>(
    dataset: &'a DatasetSplit,
    split: &str,
) -> std::result::Result<Vec<&'a ScenarioTrajectory>, CliError> {
    let out: Vec<&ScenarioTrajectory> = match split {
        "train" => dataset.train.iter().collect(),
        "validation" => dataset.validation.iter().collect(),
        "test" => dataset.test.iter().collect(),
        "all" => dataset.all().collect(),
        other => {
            return Err(CliError::Usage(Error::Config(format!(
                "unknown split {other}"
            ))))
        }
    };
    if out.is_empty() {
        return Err(CliError::Usage(Error::Config(format!(
            "dataset has no trajectories in the {split} split"
        ))));
    }
    Ok(out)
}

/// Compatibility between a model and a dataset: feature width and window
/// arithmetic must line up.
fn check_dataset_for_model(dataset: &DatasetSplit, model: &ModelConfig) -> Result<()> {
    if model.layer_dims[0] != FEATURE_DIM {
        return Err(Error::Config(format!(
            "model layer_dims[0] = {} incompatible with feature width {FEATURE_DIM}",
            model.layer_dims[0]
        )));
    }
    for traj in dataset.all() {
        if window_count(traj.step_count(), model.history_length, model.horizon) == 0 {
            return Err(Error::Config(format!(
                "trajectory with {} steps is shorter than history_length {} + horizon {}",
                traj.step_count(),
                model.history_length,
                model.horizon
            )));
        }
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> std::result::Result<(), CliError> {
    let model = usage(load_checkpoint(&args.checkpoint))?;
    let dataset = usage(load_dataset(&args.dataset))?;
    usage(check_dataset_for_model(&dataset, &model.params.config))?;
    let trajectories: Vec<ScenarioTrajectory> = select_split(&dataset, &args.split)?
        .into_iter()
        .cloned()
        .collect();

    let metrics = runtime(evaluate_model(
        &model,
        &trajectories,
        &LossConfig::default(),
        &args.label,
        args.autoregressive,
    ))?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(Error::io(&args.out, e)))?;
    let metrics_path = args.out.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(&metrics))
        .map_err(|e| CliError::Runtime(Error::io(&metrics_path, e)))?;
    let curve_path = args.out.join("curve.csv");
    std::fs::write(&curve_path, curve_csv(&metrics.curve))
        .map_err(|e| CliError::Runtime(Error::io(&curve_path, e)))?;

    println!("evaluated {} trajectories ({} split)", trajectories.len(), args.split);
    for row in &metrics.axis_rmse {
        println!(
            "sat {} {:<12} rmse {:.4} km",
            row.satellite + 1,
            row.axis.label(),
            row.rmse_km
        );
    }
    println!("mean loss: {:.6}", metrics.mean_loss);
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> std::result::Result<(), CliError> {
    let model = usage(load_checkpoint(&args.checkpoint))?;
    let dataset = usage(load_dataset(&args.dataset))?;
    usage(check_dataset_for_model(&dataset, &model.params.config))?;
    let trajectories = select_split(&dataset, &args.split)?;
    let traj = trajectories.get(args.trajectory_index).ok_or_else(|| {
        CliError::Usage(Error::Config(format!(
            "trajectory index {} out of range; the {} split has {} trajectories",
            args.trajectory_index,
            args.split,
            trajectories.len()
        )))
    })?;

    let files = runtime(crate::eval::emit_plots(
        traj,
        &model,
        &LossConfig::default(),
        &args.out,
    ))?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    for file in files {
        println!("  {file}");
    }
    Ok(())
}

fn read_run_metrics(dir: &Path) -> Result<RunMetrics> {
    let path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_metrics_csv(&text)
}

fn cmd_plot(args: PlotArgs) -> std::result::Result<(), CliError> {
    let a = usage(read_run_metrics(&args.run_dirs[0]))?;
    let b = usage(read_run_metrics(&args.run_dirs[1]))?;
    let table = usage(comparison_table(&a, &b))?;
    let csv = usage(comparison_csv(&a, &b))?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(Error::io(&args.out, e)))?;
    let table_path = args.out.join("comparison.txt");
    std::fs::write(&table_path, &table)
        .map_err(|e| CliError::Runtime(Error::io(&table_path, e)))?;
    let csv_path = args.out.join("comparison.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Runtime(Error::io(&csv_path, e)))?;
    print!("{table}");
    println!("comparison: {}", csv_path.display());
    Ok(())
}

/// Scenario defaults for the small-scale reproduction.
pub fn desk_scenario(
    seed: u64,
    trajectories: usize,
    steps: usize,
    agents: [usize; 2],
) -> ScenarioConfig {
    ScenarioConfig {
        agent_count_range: agents,
        step_count: steps,
        trajectory_count: trajectories,
        seed,
        ..ScenarioConfig::default()
    }
}

fn cmd_reproduce_desk(args: ReproduceArgs) -> std::result::Result<(), CliError> {
    let scenario = desk_scenario(
        args.seed,
        args.trajectories,
        args.steps,
        [args.agents[0], args.agents[1]],
    );
    usage(scenario.validate())?;
    let model_config = ModelConfig::default();
    let train_config = TrainConfig {
        epochs: args.epochs,
        ..TrainConfig::default()
    };
    usage(train_config.validate())?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(Error::io(&args.out, e)))?;
    println!(
        "generating {} trajectories ({}..{} agents, {} steps, seed {})",
        args.trajectories, args.agents[0], args.agents[1], args.steps, args.seed
    );
    let dataset = runtime(generate_dataset(&scenario, args.jobs.max(1)))?;
    let dataset_path = args.out.join("dataset.json");
    runtime(save_dataset(&dataset, &dataset_path))?;

    let mut metrics_by_arm = Vec::new();
    for (label, physics_on) in [("no_physics", false), ("physics", true)] {
        let arm_dir = args.out.join(label);
        std::fs::create_dir_all(&arm_dir)
            .map_err(|e| CliError::Runtime(Error::io(&arm_dir, e)))?;
        let mut loss = LossConfig::default();
        apply_physics_arm(&mut loss, physics_on);

        println!("training arm {label} ({} epochs)", args.epochs);
        let result = runtime(fit(
            &dataset,
            &model_config,
            &train_config,
            &loss,
            FitOutputs {
                checkpoint_dir: Some(&arm_dir),
                log_path: Some(&arm_dir.join("training_log.csv")),
            },
        ))?;
        println!(
            "  best validation loss {:.6} at epoch {}",
            result.best_val_loss, result.best_epoch
        );

        let metrics = runtime(evaluate_model(
            &result.model,
            &dataset.test,
            &loss,
            label,
            false,
        ))?;
        std::fs::write(arm_dir.join("metrics.csv"), metrics_csv(&metrics))
            .map_err(|e| CliError::Runtime(Error::io(arm_dir.join("metrics.csv"), e)))?;
        std::fs::write(arm_dir.join("curve.csv"), curve_csv(&metrics.curve))
            .map_err(|e| CliError::Runtime(Error::io(arm_dir.join("curve.csv"), e)))?;
        metrics_by_arm.push(metrics);
    }

    let table = runtime(comparison_table(&metrics_by_arm[0], &metrics_by_arm[1]))?;
    let csv = runtime(comparison_csv(&metrics_by_arm[0], &metrics_by_arm[1]))?;
    std::fs::write(args.out.join("comparison.txt"), &table)
        .map_err(|e| CliError::Runtime(Error::io(args.out.join("comparison.txt"), e)))?;
    std::fs::write(args.out.join("comparison.csv"), csv)
        .map_err(|e| CliError::Runtime(Error::io(args.out.join("comparison.csv"), e)))?;
    print!("{table}");
    println!("artifacts in {}", args.out.display());
    Ok(())
}
