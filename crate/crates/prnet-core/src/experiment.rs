//! Experiment harness: weighting-study and ablation grids over folds and
//! seeds, sensitivity sweeps with trend tests, and the results CSVs.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{prepare_split, Dataset, DatasetError};
use crate::eval::{
    drop_stations, evaluate_split, spearman_trend, subsample_time_interval, EvalError,
    SpearmanResult,
};
use crate::mrdata::MRSequence;
use crate::prnet::ArchVariant;
use crate::train::{kfold_indices, train_model, LossVariant, SplitError, TrainConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("experiment spec invalid: {0}")]
    InvalidSpec(String),
}

/// One named training configuration in a study grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub variant: LossVariant,
    pub arch: ArchVariant,
    pub alpha: f64,
}

impl VariantSpec {
    pub fn new(name: &str, variant: LossVariant, arch: ArchVariant, alpha: f64) -> Self {
        Self { name: name.to_string(), variant, arch, alpha }
    }
}

/// The weighting-study grid: position task alone, uniform weights, and
/// the uncertainty-weighted model at each alpha.
pub fn weighting_study_variants(alphas: &[f64]) -> Vec<VariantSpec> {
    let mut v = vec![
        VariantSpec::new("pos_only", LossVariant::PosOnly, ArchVariant::Full, 0.0),
        VariantSpec::new("mode_only", LossVariant::ModeOnly, ArchVariant::Full, 0.0),
        VariantSpec::new("uniform_weights", LossVariant::UniformWeights, ArchVariant::Full, 1.0),
        VariantSpec::new("no_speed", LossVariant::NoSpeed, ArchVariant::Full, 0.0),
    ];
    for &alpha in alphas {
        v.push(VariantSpec::new(
            &format!("full_a{alpha}"),
            LossVariant::Full,
            ArchVariant::Full,
            alpha,
        ));
    }
    v
}

/// The architecture ablation grid.
pub fn ablation_variants(alpha: f64) -> Vec<VariantSpec> {
    vec![
        VariantSpec::new("full", LossVariant::Full, ArchVariant::Full, alpha),
        VariantSpec::new("local_only", LossVariant::Full, ArchVariant::LocalOnly, alpha),
        VariantSpec::new("global_only", LossVariant::Full, ArchVariant::GlobalOnly, alpha),
    ]
}

/// One trained-and-evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub fold: usize,
    pub seed: u64,
    pub median_m: f64,
    pub mean_m: f64,
    pub p90_m: f64,
    pub mode_acc: f64,
    pub majority_share: f64,
    pub wall_s: f64,
    pub diverged: bool,
}

/// Split, prepare, train, evaluate for one configuration.
pub fn run_cell(
    dataset: &Dataset,
    config: &TrainConfig,
    variant_name: &str,
) -> Result<RunResult, ExperimentError> {
    let n = dataset.sequences.len();
    let (train_idx, test_idx) = if config.holdout {
        crate::train::holdout_indices(n, 0.2, config.seed)
    } else {
        kfold_indices(n, config.folds, config.fold, config.seed)?
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(ExperimentError::InvalidSpec(format!(
            "split produced an empty side ({} train / {} test)",
            train_idx.len(),
            test_idx.len()
        )));
    }
    let train_refs: Vec<&MRSequence> = train_idx.iter().map(|&i| &dataset.sequences[i]).collect();
    let test_refs: Vec<&MRSequence> = test_idx.iter().map(|&i| &dataset.sequences[i]).collect();
    let prepared = prepare_split(&train_refs, &test_refs)?;

    let started = Instant::now();
    let outcome = train_model(&prepared.train, &prepared.speed_dists, &prepared.stats, config);
    let wall_s = started.elapsed().as_secs_f64();

    let eval = evaluate_split(&test_refs, &outcome.store, &config.model, &prepared.stats)?;
    Ok(RunResult {
        variant: variant_name.to_string(),
        fold: config.fold,
        seed: config.seed,
        median_m: eval.errors.median_m,
        mean_m: eval.errors.mean_m,
        p90_m: eval.errors.p90_m,
        mode_acc: eval.mode_accuracy,
        majority_share: eval.majority_share,
        wall_s,
        diverged: outcome.diverged,
    })
}

/// Run every (variant, fold, seed) cell of a study grid.
pub fn run_experiment(
    dataset: &Dataset,
    base: &TrainConfig,
    variants: &[VariantSpec],
    folds: &[usize],
    seeds: &[u64],
) -> Result<Vec<RunResult>, ExperimentError> {
    if variants.is_empty() || folds.is_empty() || seeds.is_empty() {
        return Err(ExperimentError::InvalidSpec("empty grid".into()));
    }
    let mut results = Vec::new();
    for spec in variants {
        for &seed in seeds {
            for &fold in folds {
                let mut config = base.clone();
                config.variant = spec.variant;
                config.model.arch = spec.arch;
                config.alpha = spec.alpha;
                config.seed = seed;
                config.fold = fold;
                results.push(run_cell(dataset, &config, &spec.name)?);
            }
        }
    }
    Ok(results)
}

/// Mean and standard deviation of each metric per variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub runs: usize,
    pub median_m_mean: f64,
    pub median_m_std: f64,
    pub mean_m_mean: f64,
    pub mean_m_std: f64,
    pub p90_m_mean: f64,
    pub p90_m_std: f64,
    pub mode_acc_mean: f64,
    pub mode_acc_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut names: Vec<String> = Vec::new();
    for r in results {
        if !names.contains(&r.variant) {
            names.push(r.variant.clone());
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&RunResult> = results.iter().filter(|r| r.variant == name).collect();
            let grab = |f: fn(&RunResult) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
            let (median_m_mean, median_m_std) = mean_std(&grab(|r| r.median_m));
            let (mean_m_mean, mean_m_std) = mean_std(&grab(|r| r.mean_m));
            let (p90_m_mean, p90_m_std) = mean_std(&grab(|r| r.p90_m));
            let (mode_acc_mean, mode_acc_std) = mean_std(&grab(|r| r.mode_acc));
            AggregateRow {
                variant: name,
                runs: rows.len(),
                median_m_mean,
                median_m_std,
                mean_m_mean,
                mean_m_std,
                p90_m_mean,
                p90_m_std,
                mode_acc_mean,
                mode_acc_std,
            }
        })
        .collect()
}

pub fn write_results_csv(path: &Path, results: &[RunResult]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "variant,fold,seed,median_m,mean_m,p90_m,mode_acc,wall_s")?;
    for r in results {
        writeln!(
            f,
            "{},{},{},{:.3},{:.3},{:.3},{:.4},{:.2}",
            r.variant, r.fold, r.seed, r.median_m, r.mean_m, r.p90_m, r.mode_acc, r.wall_s
        )?;
    }
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "variant,runs,median_m_mean,median_m_std,mean_m_mean,mean_m_std,p90_m_mean,p90_m_std,mode_acc_mean,mode_acc_std"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{:.4}",
            r.variant,
            r.runs,
            r.median_m_mean,
            r.median_m_std,
            r.mean_m_mean,
            r.mean_m_std,
            r.p90_m_mean,
            r.p90_m_std,
            r.mode_acc_mean,
            r.mode_acc_std
        )?;
    }
    Ok(())
}

/// Sensitivity sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Thin samples toward a target gap in seconds; errors should grow
    /// with the interval.
    TimeInterval,
    /// Keep a fraction of stations; errors should shrink as density
    /// grows.
    StationDensity,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "time_interval" => Some(SweepAxis::TimeInterval),
            "station_density" => Some(SweepAxis::StationDensity),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TimeInterval => "time_interval",
            SweepAxis::StationDensity => "station_density",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(ExperimentError::InvalidSpec("empty sweep grid".into()));
        }
        match self.axis {
            SweepAxis::TimeInterval => {
                if self.values.iter().any(|&v| !(3.0..=120.0).contains(&v)) {
                    return Err(ExperimentError::InvalidSpec(
                        "time intervals must lie in [3, 120] s".into(),
                    ));
                }
            }
            SweepAxis::StationDensity => {
                if self.values.iter().any(|&v| !(0.25..=1.0).contains(&v)) {
                    return Err(ExperimentError::InvalidSpec(
                        "station density must lie in [0.25, 1.0]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: f64,
    pub result: RunResult,
}

/// Re-train per (value, seed) on the transformed dataset, as the
/// sensitivity protocol prescribes.
pub fn run_sweep(
    dataset: &Dataset,
    base: &TrainConfig,
    spec: &SweepSpec,
) -> Result<Vec<SweepCell>, ExperimentError> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &value in &spec.values {
        for &seed in &spec.seeds {
            let modified = match spec.axis {
                SweepAxis::TimeInterval => {
                    subsample_time_interval(dataset, value, seed, base.tau)
                }
                SweepAxis::StationDensity => drop_stations(dataset, value, seed, base.tau),
            };
            let mut config = base.clone();
            config.seed = seed;
            let name = format!("{}_{value}", spec.axis.as_str());
            let result = run_cell(&modified, &config, &name)?;
            cells.push(SweepCell { axis_value: value, result });
        }
    }
    Ok(cells)
}

/// Spearman trend of median error against the sweep axis.
pub fn sweep_trend(cells: &[SweepCell]) -> SpearmanResult {
    let x: Vec<f64> = cells.iter().map(|c| c.axis_value).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.result.median_m).collect();
    spearman_trend(&x, &y)
}

pub fn write_sweep_csv(path: &Path, axis: SweepAxis, cells: &[SweepCell]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "axis,value,seed,median_m,mean_m,p90_m,mode_acc")?;
    for c in cells {
        writeln!(
            f,
            "{},{},{},{:.3},{:.3},{:.3},{:.4}",
            axis.as_str(),
            c.axis_value,
            c.result.seed,
            c.result.median_m,
            c.result.mean_m,
            c.result.p90_m,
            c.result.mode_acc
        )?;
    }
    Ok(())
}
