//! Metrics and sensitivity transforms: localization error reports, mode
//! accuracy, timestamp-interval thinning, station dropping, and the
//! Spearman trend test used by the sweep harness.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tape};
use crate::dataset::{sequence_to_input, Dataset};
use crate::geo::{BoundingBox, GeoPoint, Projection};
use crate::mrdata::{segment_sequences, MRSample, Mode, NormStats, StationRegistry};
use crate::prnet::{forward_sequence, ForwardOptions, ModelConfig, SequenceInput};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("prediction/truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Localization error summary in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub median_m: f64,
    pub mean_m: f64,
    pub p90_m: f64,
    pub count: usize,
    /// Breakdown keyed by mode name, when mode labels were supplied.
    pub per_mode: BTreeMap<String, ModeErrors>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeErrors {
    pub median_m: f64,
    pub mean_m: f64,
    pub p90_m: f64,
    pub count: usize,
}

/// Median is the lower-middle element for even counts; p90 is the element
/// at index ceil(0.9 n) - 1 of the ascending sort.
fn order_stats(sorted: &[f64]) -> (f64, f64, f64) {
    let n = sorted.len();
    debug_assert!(n > 0);
    let median = sorted[(n - 1) / 2];
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let p90_idx = ((0.9 * n as f64).ceil() as usize).max(1) - 1;
    (median, mean, sorted[p90_idx])
}

/// Per-sample meter distances through the local equirectangular
/// projection anchored at the truth centroid box.
pub fn compute_errors(
    predicted: &[GeoPoint],
    truth: &[GeoPoint],
) -> Result<ErrorReport, EvalError> {
    compute_errors_by_mode(predicted, truth, None)
}

pub fn compute_errors_by_mode(
    predicted: &[GeoPoint],
    truth: &[GeoPoint],
    modes: Option<&[Mode]>,
) -> Result<ErrorReport, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(m) = modes {
        if m.len() != truth.len() {
            return Err(EvalError::LengthMismatch(m.len(), truth.len()));
        }
    }
    let bbox = BoundingBox::enclosing(truth.iter().copied(), 1e-3).ok_or(EvalError::EmptyInput)?;
    let proj = Projection::new(bbox.center());
    let dists: Vec<f64> =
        predicted.iter().zip(truth).map(|(p, t)| proj.distance_m(*p, *t)).collect();

    let mut sorted = dists.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (median_m, mean_m, p90_m) = order_stats(&sorted);

    let mut per_mode = BTreeMap::new();
    if let Some(mode_labels) = modes {
        for mode in Mode::ALL {
            let mut sub: Vec<f64> = dists
                .iter()
                .zip(mode_labels)
                .filter(|(_, &m)| m == mode)
                .map(|(d, _)| *d)
                .collect();
            if sub.is_empty() {
                continue;
            }
            sub.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (md, mn, p90) = order_stats(&sub);
            per_mode.insert(
                mode.as_str().to_string(),
                ModeErrors { median_m: md, mean_m: mn, p90_m: p90, count: sub.len() },
            );
        }
    }
    Ok(ErrorReport { median_m, mean_m, p90_m, count: dists.len(), per_mode })
}

/// Argmax with ties broken toward the lowest mode index.
pub fn argmax_mode(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of unmasked steps whose argmax matches the truth.
pub fn mode_accuracy(
    mode_probs: &[Vec<f64>],
    truth: &[i64],
    mask: &[bool],
) -> Result<f64, EvalError> {
    if mode_probs.len() != truth.len() || truth.len() != mask.len() {
        return Err(EvalError::LengthMismatch(mode_probs.len(), truth.len()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((p, &t), &m) in mode_probs.iter().zip(truth).zip(mask) {
        if !m || t < 0 {
            continue;
        }
        total += 1;
        if argmax_mode(p) == t as usize {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(hits as f64 / total as f64)
}

fn regroup_and_segment(samples: Vec<MRSample>, registry: StationRegistry, tau: usize) -> Dataset {
    let mut by_imsi: BTreeMap<String, Vec<MRSample>> = BTreeMap::new();
    for s in samples {
        by_imsi.entry(s.imsi.clone()).or_default().push(s);
    }
    let mut sequences = Vec::new();
    for (_, mut series) in by_imsi {
        series.sort_by_key(|s| s.timestamp);
        sequences.extend(segment_sequences(&series, tau));
    }
    Dataset::from_sequences(sequences, registry)
}

/// Thin each device's sample series so consecutive kept gaps approach
/// `max_interval` seconds (within [0.8, 1.2] x where achievable, choosing
/// randomly among window candidates), then re-segment.
pub fn subsample_time_interval(
    dataset: &Dataset,
    max_interval: f64,
    seed: u64,
    tau: usize,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rebuild per-device series first; thinning operates on the raw
    // sample stream, segmentation happens afterwards.
    let mut by_imsi: BTreeMap<String, Vec<MRSample>> = BTreeMap::new();
    for seq in &dataset.sequences {
        for s in &seq.samples {
            by_imsi.entry(s.imsi.clone()).or_default().push(s.clone());
        }
    }
    let mut kept_samples = Vec::new();
    for (_, mut samples) in by_imsi {
        samples.sort_by_key(|s| s.timestamp);
        let mut kept = vec![0usize];
        loop {
            let last_t = samples[*kept.last().unwrap()].timestamp as f64;
            let lo = last_t + 0.8 * max_interval;
            let hi = last_t + 1.2 * max_interval;
            let start = kept.last().unwrap() + 1;
            let window: Vec<usize> = (start..samples.len())
                .filter(|&i| {
                    let t = samples[i].timestamp as f64;
                    t >= lo && t <= hi
                })
                .collect();
            if let Some(&pick) = window.choose(&mut rng) {
                kept.push(pick);
                continue;
            }
            // No candidate inside the window: take the first overshoot.
            match (start..samples.len()).find(|&i| (samples[i].timestamp as f64) > hi) {
                Some(i) => kept.push(i),
                None => break,
            }
        }
        kept_samples.extend(kept.into_iter().map(|i| samples[i].clone()));
    }
    regroup_and_segment(kept_samples, dataset.registry.clone(), tau)
}

/// Keep a global random subset of stations of the given fraction; delete
/// the rest from every sample, re-serve samples by their strongest
/// remaining reading, drop samples with none, and re-segment.
pub fn drop_stations(dataset: &Dataset, fraction_kept: f64, seed: u64, tau: usize) -> Dataset {
    assert!(fraction_kept > 0.0 && fraction_kept <= 1.0, "fraction must be in (0, 1]");
    if fraction_kept == 1.0 {
        return dataset.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<_> = dataset.registry.ids().collect();
    ids.sort_unstable();
    use rand::seq::SliceRandom;
    ids.shuffle(&mut rng);
    let keep_count = ((ids.len() as f64 * fraction_kept).round() as usize).max(1);
    let kept: std::collections::HashSet<_> = ids.into_iter().take(keep_count).collect();

    let mut registry = StationRegistry::new();
    for (id, pos) in dataset.registry.iter() {
        if kept.contains(&id) {
            registry.insert(id, pos);
        }
    }

    let mut samples = Vec::new();
    for seq in &dataset.sequences {
        for sample in &seq.samples {
            let stations: Vec<_> =
                sample.stations.iter().filter(|r| kept.contains(&r.id)).cloned().collect();
            if stations.is_empty() {
                continue;
            }
            let mut s = sample.clone();
            s.stations = stations;
            samples.push(s);
        }
    }
    regroup_and_segment(samples, registry, tau)
}

/// Spearman rank correlation with average ranks for ties, plus one-sided
/// p-values from the t approximation.
#[derive(Debug, Clone, Copy)]
pub struct SpearmanResult {
    pub rho: f64,
    /// P(trend >= observed) under no association; small means an
    /// increasing trend.
    pub p_greater: f64,
    /// Small means a decreasing trend.
    pub p_less: f64,
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_trend(x: &[f64], y: &[f64]) -> SpearmanResult {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 3, "need at least 3 points for a trend");
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    let denom = (vx * vy).sqrt();
    let rho = if denom > 0.0 { cov / denom } else { 0.0 };
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho).max(1e-12)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    let cdf = dist.cdf(t);
    SpearmanResult { rho, p_greater: 1.0 - cdf, p_less: cdf }
}

/// Model outputs for one sequence, denormalized to degrees.
#[derive(Debug, Clone)]
pub struct SequencePrediction {
    pub positions: Vec<GeoPoint>,
    pub mode_probs: Vec<Vec<f64>>,
    pub modes: Vec<Mode>,
    pub confidences: Vec<f64>,
}

/// Inference over prepared inputs; positions leave the unit box through
/// the training bounding box carried by `stats`.
pub fn predict_sequences(
    inputs: &[SequenceInput],
    store: &ParamStore,
    model: &ModelConfig,
    stats: &NormStats,
) -> Vec<SequencePrediction> {
    inputs
        .par_iter()
        .map(|input| {
            let mut tape = Tape::new();
            let fwd = forward_sequence(
                &mut tape,
                store,
                model,
                input,
                input.len(),
                &ForwardOptions::inference(),
            )
            .expect("forward shapes");
            let mut positions = Vec::with_capacity(fwd.steps.len());
            let mut mode_probs = Vec::with_capacity(fwd.steps.len());
            let mut modes = Vec::with_capacity(fwd.steps.len());
            let mut confidences = Vec::with_capacity(fwd.steps.len());
            for step in &fwd.steps {
                let y = tape.value(step.position);
                positions.push(stats.bbox.denormalize([y.data()[0], y.data()[1]]));
                let probs = tape.value(step.mode_probs).data().to_vec();
                let idx = argmax_mode(&probs);
                modes.push(Mode::from_index(idx).expect("mode index"));
                confidences.push(probs[idx]);
                mode_probs.push(probs);
            }
            SequencePrediction { positions, mode_probs, modes, confidences }
        })
        .collect()
}

/// Test-split evaluation: localization errors over labeled steps plus
/// mode accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub errors: ErrorReport,
    pub mode_accuracy: f64,
    /// Share of the most frequent true mode; the majority-class baseline.
    pub majority_share: f64,
}

pub fn evaluate_split(
    test_sequences: &[&crate::mrdata::MRSequence],
    store: &ParamStore,
    model: &ModelConfig,
    stats: &NormStats,
) -> Result<EvalOutcome, EvalError> {
    let inputs: Vec<SequenceInput> =
        test_sequences.iter().map(|s| sequence_to_input(s, stats)).collect();
    let predictions = predict_sequences(&inputs, store, model, stats);

    let mut pred_points = Vec::new();
    let mut true_points = Vec::new();
    let mut true_modes = Vec::new();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for (seq, pred) in test_sequences.iter().zip(&predictions) {
        for (t, sample) in seq.samples.iter().enumerate() {
            if let Some(p) = sample.position_label {
                pred_points.push(pred.positions[t]);
                true_points.push(p);
                if let Some(m) = sample.mode_label {
                    true_modes.push(m);
                }
            }
            probs.push(pred.mode_probs[t].clone());
            labels.push(sample.mode_label.map(|m| m.index() as i64).unwrap_or(-1));
            mask.push(sample.position_label.is_some());
        }
    }
    let errors = compute_errors_by_mode(
        &pred_points,
        &true_points,
        (true_modes.len() == true_points.len()).then_some(&true_modes[..]),
    )?;
    let accuracy = mode_accuracy(&probs, &labels, &mask)?;

    let mut counts = [0usize; 3];
    for &l in &labels {
        if l >= 0 {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let majority_share =
        if total > 0 { *counts.iter().max().unwrap() as f64 / total as f64 } else { 0.0 };

    Ok(EvalOutcome { errors, mode_accuracy: accuracy, majority_share })
}
