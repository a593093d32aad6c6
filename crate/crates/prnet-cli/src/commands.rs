//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use prnet_core::autodiff::ParamStore;
use prnet_core::dataset::{prepare_split, Dataset};
use prnet_core::eval::evaluate_split;
use prnet_core::experiment::{
    ablation_variants, aggregate, run_experiment, run_sweep, sweep_trend,
    weighting_study_variants, write_aggregate_csv, write_results_csv, write_sweep_csv, SweepAxis,
    SweepSpec, VariantSpec,
};
use prnet_core::mrdata::{
    parse_mr_csv, read_station_registry, segment_sequences, ColumnSchema, MRSequence, NormStats,
};
use prnet_core::prnet::{init_params, ArchVariant};
use prnet_core::simgen::{generate_dataset, GenConfig};
use prnet_core::train::{
    holdout_indices, kfold_indices, train_model, trainable_snapshot, write_trace_csv, LossVariant,
    TrainConfig,
};

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "prnet",
    version,
    about = "Trajectory recovery and transportation-mode detection from cellular measurement records"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled MR dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset split and write a run directory.
    Train(TrainArgs),
    /// Evaluate a finished training run on its test split.
    Eval(EvalArgs),
    /// Annotate an unlabeled MR CSV with positions and modes.
    Predict(PredictArgs),
    /// Sensitivity sweep over sampling interval or station density.
    Sweep(SweepArgs),
    /// Weighting-study or architecture-ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config (TOML); defaults cover the desk-small world.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainCommon {
    /// Training config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (mr.csv + stations.csv).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss variant: full | pos_only | mode_only | uniform_weights | no_speed.
    #[arg(long)]
    variant: Option<String>,
    /// Architecture: full | local_only | global_only.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Use a literal 80/20 holdout instead of k-fold.
    #[arg(long)]
    holdout: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Training run directory (manifest.json + checkpoint.bin).
    #[arg(long)]
    run: PathBuf,
    /// Dataset override; defaults to the dataset recorded in the manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Training run directory.
    #[arg(long)]
    run: PathBuf,
    /// MR CSV to annotate.
    #[arg(long)]
    input: PathBuf,
    /// Station registry CSV; defaults to the manifest dataset's.
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Sweep axis: time_interval | station_density.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Grid preset: weighting | architecture.
    #[arg(long, default_value = "weighting")]
    study: String,
    /// Alphas for the weighting study.
    #[arg(long, default_value = "0.01,0.05,0.1")]
    alphas: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Comma-separated folds.
    #[arg(long, default_value = "0")]
    folds_list: String,
    #[arg(long)]
    out: PathBuf,
}

/// Everything eval / predict need to rebuild the model around a
/// checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    train_config: TrainConfig,
    norm_stats: NormStats,
    dataset_dir: PathBuf,
    diverged: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict(args),
        Command::Sweep(args) => sweep(args),
        Command::Ablate(args) => ablate(args),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| usage(format!("bad {what} value: {v}"))))
        .collect()
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn resolve_train_config(common: &TrainCommon) -> Result<TrainConfig, CliError> {
    let mut config: TrainConfig = load_toml(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(v) = &common.variant {
        config.variant =
            LossVariant::parse(v).ok_or_else(|| usage(format!("unknown variant {v}")))?;
    }
    if let Some(a) = &common.arch {
        config.model.arch = match a.as_str() {
            "full" => ArchVariant::Full,
            "local_only" => ArchVariant::LocalOnly,
            "global_only" => ArchVariant::GlobalOnly,
            _ => return Err(usage(format!("unknown arch {a}"))),
        };
    }
    if let Some(f) = common.fold {
        config.fold = f;
    }
    if let Some(f) = common.folds {
        config.folds = f;
    }
    if let Some(a) = common.alpha {
        config.alpha = a;
    }
    if let Some(t) = common.tau {
        config.tau = t;
    }
    if let Some(e) = common.epochs {
        config.epochs = e;
    }
    if common.holdout {
        config.holdout = true;
    }
    Ok(config)
}

fn echo_config<T: Serialize>(dir: &Path, config: &T) -> anyhow::Result<()> {
    let text = toml::to_string_pretty(config).context("serializing resolved config")?;
    std::fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut config: GenConfig = load_toml(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&args.out).context("creating output directory")?;
    echo_config(&args.out, &config)?;
    let summary = generate_dataset(&config, &args.out)
        .map_err(|e| CliError::Runtime(anyhow!("generation failed: {e}")))?;
    println!(
        "generated {} samples over {} stations into {} (dropped {} uncovered)",
        summary.samples,
        summary.stations,
        args.out.display(),
        summary.no_coverage_dropped
    );
    Ok(())
}

fn split_dataset<'a>(
    dataset: &'a Dataset,
    config: &TrainConfig,
) -> Result<(Vec<&'a MRSequence>, Vec<&'a MRSequence>), CliError> {
    let n = dataset.sequences.len();
    let (train_idx, test_idx) = if config.holdout {
        holdout_indices(n, 0.2, config.seed)
    } else {
        kfold_indices(n, config.folds, config.fold, config.seed)
            .map_err(|e| usage(e.to_string()))?
    };
    Ok((
        train_idx.iter().map(|&i| &dataset.sequences[i]).collect(),
        test_idx.iter().map(|&i| &dataset.sequences[i]).collect(),
    ))
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let config = resolve_train_config(&args.common)?;
    let dataset = Dataset::load(&args.common.data, config.tau)
        .map_err(|e| CliError::Runtime(anyhow!("loading dataset: {e}")))?;
    let (train_refs, test_refs) = split_dataset(&dataset, &config)?;
    if train_refs.is_empty() || test_refs.is_empty() {
        return Err(usage("dataset too small for the requested split"));
    }
    let prepared = prepare_split(&train_refs, &test_refs)
        .map_err(|e| CliError::Runtime(anyhow!("preparing split: {e}")))?;
    if !prepared.speed_fallback.is_empty() {
        eprintln!(
            "warning: no speed data for modes {:?}; their speed term is disabled",
            prepared.speed_fallback
        );
    }

    std::fs::create_dir_all(&args.out).context("creating run directory")?;
    echo_config(&args.out, &config)?;

    let outcome = train_model(&prepared.train, &prepared.speed_dists, &prepared.stats, &config);
    if outcome.diverged {
        eprintln!("warning: training diverged; checkpoint holds the last finite state");
    }
    write_trace_csv(&args.out.join("loss_trace.csv"), &outcome.trace)
        .context("writing loss trace")?;
    let snapshot = trainable_snapshot(&outcome.store);
    snapshot
        .save(&args.out.join("checkpoint.bin"))
        .map_err(|e| CliError::Runtime(anyhow!("saving checkpoint: {e}")))?;

    let manifest = RunManifest {
        train_config: config.clone(),
        norm_stats: prepared.stats.clone(),
        dataset_dir: args.common.data.clone(),
        diverged: outcome.diverged,
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).context("manifest json")?,
    )
    .context("writing manifest")?;

    if let Some(last) = outcome.trace.last() {
        println!(
            "trained {} epochs: joint {:.4}, loc {:.4}, mode {:.4} -> {}",
            outcome.trace.len(),
            last.joint,
            last.l_loc,
            last.l_mode,
            args.out.display()
        );
    }
    Ok(())
}

fn load_run(run: &Path) -> Result<(RunManifest, ParamStore), CliError> {
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(run.join("manifest.json"))
            .with_context(|| format!("reading manifest in {}", run.display()))?,
    )
    .context("parsing manifest")?;
    let template = init_params(&manifest.train_config.model, manifest.train_config.seed);
    let (store, report) = ParamStore::load_into(&run.join("checkpoint.bin"), template)
        .map_err(|e| CliError::Runtime(anyhow!("loading checkpoint: {e}")))?;
    if !report.missing.is_empty() {
        eprintln!(
            "warning: {} parameter groups absent from the checkpoint keep fresh initialization: {:?}",
            report.missing.len(),
            report.missing
        );
    }
    if !report.shape_mismatch.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "checkpoint shape mismatch for {:?}; was it trained with another architecture?",
            report.shape_mismatch
        )));
    }
    Ok((manifest, store))
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (manifest, store) = load_run(&args.run)?;
    let config = &manifest.train_config;
    let data_dir = args.data.unwrap_or_else(|| manifest.dataset_dir.clone());
    let dataset = Dataset::load(&data_dir, config.tau)
        .map_err(|e| CliError::Runtime(anyhow!("loading dataset: {e}")))?;
    let (_, test_refs) = split_dataset(&dataset, config)?;
    let outcome = evaluate_split(&test_refs, &store, &config.model, &manifest.norm_stats)
        .map_err(|e| CliError::Runtime(anyhow!("evaluation: {e}")))?;

    let out_dir = args.out.unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out_dir).context("creating output directory")?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&outcome).context("report json")?,
    )
    .context("writing report")?;
    {
        use std::io::Write;
        let mut f =
            std::fs::File::create(out_dir.join("report.csv")).context("creating report.csv")?;
        writeln!(f, "median_m,mean_m,p90_m,mode_acc,majority_share,count")
            .context("writing report.csv")?;
        writeln!(
            f,
            "{:.3},{:.3},{:.3},{:.4},{:.4},{}",
            outcome.errors.median_m,
            outcome.errors.mean_m,
            outcome.errors.p90_m,
            outcome.mode_accuracy,
            outcome.majority_share,
            outcome.errors.count
        )
        .context("writing report.csv")?;
    }
    println!(
        "median {:.1} m, mean {:.1} m, p90 {:.1} m, mode accuracy {:.3} over {} samples",
        outcome.errors.median_m,
        outcome.errors.mean_m,
        outcome.errors.p90_m,
        outcome.mode_accuracy,
        outcome.errors.count
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let (manifest, store) = load_run(&args.run)?;
    let config = &manifest.train_config;
    let stations_path = args
        .stations
        .unwrap_or_else(|| manifest.dataset_dir.join(prnet_core::dataset::REGISTRY_FILE));
    let registry = read_station_registry(&stations_path)
        .map_err(|e| CliError::Runtime(anyhow!("loading registry: {e}")))?;
    let (series, report) = parse_mr_csv(&args.input, &ColumnSchema::default(), &registry)
        .map_err(|e| CliError::Runtime(anyhow!("parsing input: {e}")))?;
    if report.rows_malformed > 0 || report.rows_dropped_noise > 0 {
        eprintln!(
            "warning: skipped {} malformed and {} noisy rows",
            report.rows_malformed, report.rows_dropped_noise
        );
    }

    use std::io::Write;
    let mut f = std::fs::File::create(&args.out).context("creating predictions file")?;
    writeln!(f, "MRTime,IMSI,lat,lon,mode,confidence").context("writing predictions")?;
    let mut rows = 0usize;
    for device in &series {
        let sequences = segment_sequences(&device.samples, config.tau);
        for seq in &sequences {
            let input = prnet_core::dataset::sequence_to_input(seq, &manifest.norm_stats);
            let preds = prnet_core::eval::predict_sequences(
                std::slice::from_ref(&input),
                &store,
                &config.model,
                &manifest.norm_stats,
            );
            let pred = &preds[0];
            for (t, sample) in seq.samples.iter().enumerate() {
                writeln!(
                    f,
                    "{},{},{:.7},{:.7},{},{:.4}",
                    sample.timestamp,
                    sample.imsi,
                    pred.positions[t].lat,
                    pred.positions[t].lon,
                    pred.modes[t].as_str(),
                    pred.confidences[t]
                )
                .context("writing predictions")?;
                rows += 1;
            }
        }
    }
    println!("wrote {rows} predictions to {}", args.out.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = resolve_train_config(&args.common)?;
    let axis = SweepAxis::parse(&args.axis)
        .ok_or_else(|| usage(format!("unknown sweep axis {}", args.axis)))?;
    let values: Vec<f64> = parse_list(&args.values, "axis")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let dataset = Dataset::load(&args.common.data, base.tau)
        .map_err(|e| CliError::Runtime(anyhow!("loading dataset: {e}")))?;
    let spec = SweepSpec { axis, values, seeds };
    std::fs::create_dir_all(&args.out).context("creating output directory")?;
    echo_config(&args.out, &base)?;
    let cells =
        run_sweep(&dataset, &base, &spec).map_err(|e| CliError::Runtime(anyhow!("sweep: {e}")))?;
    write_sweep_csv(&args.out.join("sweep.csv"), axis, &cells).context("writing sweep.csv")?;
    let trend = sweep_trend(&cells);
    let trend_json = serde_json::json!({
        "axis": axis.as_str(),
        "rho": trend.rho,
        "p_increasing": trend.p_greater,
        "p_decreasing": trend.p_less,
    });
    std::fs::write(args.out.join("trend.json"), serde_json::to_string_pretty(&trend_json).unwrap())
        .context("writing trend.json")?;
    println!(
        "sweep over {}: rho {:.3} (p_inc {:.4}, p_dec {:.4}); results in {}",
        axis.as_str(),
        trend.rho,
        trend.p_greater,
        trend.p_less,
        args.out.display()
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let base = resolve_train_config(&args.common)?;
    let alphas: Vec<f64> = parse_list(&args.alphas, "alpha")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let folds: Vec<usize> = parse_list(&args.folds_list, "fold")?;
    let variants: Vec<VariantSpec> = match args.study.as_str() {
        "weighting" => weighting_study_variants(&alphas),
        "architecture" => ablation_variants(base.alpha),
        other => return Err(usage(format!("unknown study {other}"))),
    };
    let dataset = Dataset::load(&args.common.data, base.tau)
        .map_err(|e| CliError::Runtime(anyhow!("loading dataset: {e}")))?;
    std::fs::create_dir_all(&args.out).context("creating output directory")?;
    echo_config(&args.out, &base)?;
    let results = run_experiment(&dataset, &base, &variants, &folds, &seeds)
        .map_err(|e| CliError::Runtime(anyhow!("experiment: {e}")))?;
    write_results_csv(&args.out.join("results.csv"), &results).context("writing results.csv")?;
    let rows = aggregate(&results);
    write_aggregate_csv(&args.out.join("aggregate.csv"), &rows)
        .context("writing aggregate.csv")?;
    for row in &rows {
        println!(
            "{:20} median {:7.1} ± {:5.1}  p90 {:7.1} ± {:5.1}  acc {:.3} ± {:.3}  ({} runs)",
            row.variant,
            row.median_m_mean,
            row.median_m_std,
            row.p90_m_mean,
            row.p90_m_std,
            row.mode_acc_mean,
            row.mode_acc_std,
            row.runs
        );
    }
    println!("results in {}", args.out.display());
    Ok(())
}
