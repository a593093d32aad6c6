//! Mini-batch training: padding and masking, the joint objective, Adam
//! with gradient clipping, divergence handling, and the loss trace.

mod batch;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamHyper, ParamStore, Tape};
use crate::losses::{joint_loss_value, sequence_losses, SpeedLookup, TaskWeighting, UncertaintyParams};
use crate::mrdata::{NormStats, SpeedDistribution};
use crate::prnet::{
    forward_sequence, init_params, mode_head_params, position_head_params, ForwardOptions,
    ModelConfig, SequenceInput, PARAM_S1, PARAM_S2,
};

pub use batch::{holdout_indices, kfold_indices, pad_batch, Batch, MaskMatrix, PaddedSequence, SplitError};

/// Which loss terms train, mirroring the weighting-study rows and the
/// ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Uncertainty-weighted two-task loss plus the alpha-weighted speed
    /// term.
    #[default]
    Full,
    /// Position regression alone.
    PosOnly,
    /// Mode detection alone.
    ModeOnly,
    /// All three terms with frozen weight 1 each, no regularizer.
    UniformWeights,
    /// Uncertainty-weighted two-task loss without the speed term.
    NoSpeed,
}

impl LossVariant {
    pub fn weighting(self, alpha: f64) -> TaskWeighting {
        match self {
            LossVariant::Full => TaskWeighting::Uncertainty { alpha },
            LossVariant::NoSpeed => TaskWeighting::Uncertainty { alpha: 0.0 },
            LossVariant::PosOnly => TaskWeighting::Fixed { loc: 1.0, mode: 0.0, speed: 0.0 },
            LossVariant::ModeOnly => TaskWeighting::Fixed { loc: 0.0, mode: 1.0, speed: 0.0 },
            LossVariant::UniformWeights => TaskWeighting::uniform(),
        }
    }

    /// Parameters excluded from both updates and checkpoints.
    pub fn frozen_params(self, config: &ModelConfig) -> Vec<String> {
        let sigmas = || vec![PARAM_S1.to_string(), PARAM_S2.to_string()];
        match self {
            LossVariant::Full | LossVariant::NoSpeed => Vec::new(),
            LossVariant::UniformWeights => sigmas(),
            LossVariant::PosOnly => {
                let mut v = mode_head_params(config);
                v.extend(sigmas());
                v
            }
            LossVariant::ModeOnly => {
                let mut v = position_head_params();
                v.extend(sigmas());
                v
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::PosOnly => "pos_only",
            LossVariant::ModeOnly => "mode_only",
            LossVariant::UniformWeights => "uniform_weights",
            LossVariant::NoSpeed => "no_speed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(LossVariant::Full),
            "pos_only" => Some(LossVariant::PosOnly),
            "mode_only" => Some(LossVariant::ModeOnly),
            "uniform_weights" => Some(LossVariant::UniformWeights),
            "no_speed" => Some(LossVariant::NoSpeed),
            _ => None,
        }
    }
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    5e-4
}
fn default_alpha() -> f64 {
    0.05
}
fn default_tau() -> usize {
    4
}
fn default_seed() -> u64 {
    1
}
fn default_folds() -> usize {
    5
}
fn default_clip() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Weight of the speed-constraint term in the joint loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Minimum samples per sequence during segmentation.
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold: usize,
    /// Use a literal 80/20 holdout instead of the k-fold protocol.
    #[serde(default)]
    pub holdout: bool,
    #[serde(default)]
    pub variant: LossVariant,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Linearly interpolate the speed-likelihood table so the speed term
    /// has a gradient through the predicted positions.
    #[serde(default)]
    pub interpolate_speed: bool,
    #[serde(default)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            alpha: default_alpha(),
            tau: default_tau(),
            seed: default_seed(),
            folds: default_folds(),
            fold: 0,
            holdout: false,
            variant: LossVariant::default(),
            grad_clip: default_clip(),
            interpolate_speed: false,
            model: ModelConfig::default(),
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_loc: f64,
    pub l_mode: f64,
    pub l_speed: f64,
    pub joint: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub trace: Vec<EpochStats>,
    /// Training hit a non-finite loss; `store` is the last good state.
    pub diverged: bool,
}

struct SeqResult {
    tape: Tape,
    loc: f64,
    mode: f64,
    speed: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_sequence(
    padded: &PaddedSequence,
    store: &ParamStore,
    config: &ModelConfig,
    weighting: TaskWeighting,
    lookup: &SpeedLookup,
    unit_scale: [f64; 2],
    inv_labeled: f64,
    with_speed: bool,
) -> SeqResult {
    let mut tape = Tape::new();
    let fwd = forward_sequence(
        &mut tape,
        store,
        config,
        &padded.input,
        padded.real_len,
        &ForwardOptions::default(),
    )
    .expect("forward shapes are config-consistent");
    let positions: Vec<_> = fwd.steps.iter().map(|s| s.position).collect();
    let probs: Vec<_> = fwd.steps.iter().map(|s| s.mode_probs).collect();
    let zero_lookup;
    let effective_lookup = if with_speed {
        lookup
    } else {
        zero_lookup = SpeedLookup::zero(config.num_modes);
        &zero_lookup
    };
    let losses = sequence_losses(
        &mut tape,
        &positions,
        &probs,
        &padded.input,
        unit_scale,
        effective_lookup,
    )
    .expect("loss shapes are config-consistent");

    let contribution = match weighting {
        TaskWeighting::Uncertainty { alpha } => {
            let s1 = store.leaf(&mut tape, PARAM_S1);
            let s2 = store.leaf(&mut tape, PARAM_S2);
            let neg_s1 = tape.scale(s1, -1.0);
            let w1 = tape.exp_guarded(neg_s1);
            let half_w1 = tape.scale(w1, 0.5);
            let neg_s2 = tape.scale(s2, -1.0);
            let w2 = tape.exp_guarded(neg_s2);
            let half_w2 = tape.scale(w2, 0.5);
            let t1 = tape.mul(half_w1, losses.loc_sum).unwrap();
            let t2 = tape.mul(half_w2, losses.mode_sum).unwrap();
            let t3 = tape.scale(losses.speed_sum, alpha);
            let a = tape.add(t1, t2).unwrap();
            tape.add(a, t3).unwrap()
        }
        TaskWeighting::Fixed { loc, mode, speed } => {
            let t1 = tape.scale(losses.loc_sum, loc);
            let t2 = tape.scale(losses.mode_sum, mode);
            let t3 = tape.scale(losses.speed_sum, speed);
            let a = tape.add(t1, t2).unwrap();
            tape.add(a, t3).unwrap()
        }
    };
    let scaled = tape.scale(contribution, inv_labeled);
    tape.backward(scaled).expect("scalar loss");

    // Padded steps must never receive gradient.
    #[cfg(debug_assertions)]
    for &leaf in &fwd.input_leaves[padded.real_len..] {
        debug_assert!(
            tape.grad(leaf).unwrap().iter().all(|&g| g == 0.0),
            "gradient leaked into structural padding"
        );
    }

    SeqResult {
        loc: tape.value(losses.loc_sum).item(),
        mode: tape.value(losses.mode_sum).item(),
        speed: tape.value(losses.speed_sum).item(),
        tape,
    }
}

/// Train on prepared inputs. Deterministic for a fixed (inputs, config)
/// pair: batch composition, shuffling, initialization, and the ordered
/// gradient reduction all derive from `config.seed`.
pub fn train_model(
    inputs: &[SequenceInput],
    speed_dists: &[SpeedDistribution],
    stats: &NormStats,
    config: &TrainConfig,
) -> TrainOutcome {
    assert!(!inputs.is_empty(), "training set is empty");
    assert!(config.batch_size >= 1);
    let model = &config.model;
    let weighting = config.variant.weighting(config.alpha);
    let with_speed = match weighting {
        TaskWeighting::Uncertainty { alpha } => alpha != 0.0,
        TaskWeighting::Fixed { speed, .. } => speed != 0.0,
    };
    let lookup = SpeedLookup::new(speed_dists, config.interpolate_speed);
    let unit_scale = stats.bbox.unit_scale_m();

    let mut store = init_params(model, config.seed);
    for name in config.variant.frozen_params(model) {
        store.set_trainable(&name, false);
    }
    let hyper = AdamHyper { lr: config.learning_rate, ..AdamHyper::default() };

    // Length-bucketed fixed batches; their order shuffles every epoch.
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(inputs[i].len()));
    let batches: Vec<Vec<usize>> =
        order.chunks(config.batch_size).map(|c| c.to_vec()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e3779b9));
    let mut trace = Vec::with_capacity(config.epochs);
    let mut last_good = store.clone();

    for epoch in 0..config.epochs {
        let mut batch_order: Vec<usize> = (0..batches.len()).collect();
        batch_order.shuffle(&mut rng);

        let mut sum_loc = 0.0;
        let mut sum_mode = 0.0;
        let mut sum_speed = 0.0;
        let mut sum_labeled = 0usize;
        let mut joint_total = 0.0;
        let mut joint_batches = 0usize;

        for &b in &batch_order {
            let members: Vec<&SequenceInput> = batches[b].iter().map(|&i| &inputs[i]).collect();
            let owned: Vec<SequenceInput> = members.into_iter().cloned().collect();
            let batch = pad_batch(&owned);
            let labeled = batch.labeled_steps();
            if labeled == 0 {
                continue;
            }
            let inv = 1.0 / labeled as f64;

            let results: Vec<SeqResult> = batch
                .sequences
                .par_iter()
                .map(|ps| {
                    run_sequence(ps, &store, model, weighting, &lookup, unit_scale, inv, with_speed)
                })
                .collect();

            for r in &results {
                store.absorb(&r.tape);
            }
            if weighting.uses_uncertainty() {
                store.accumulate_grad(PARAM_S1, &crate::autodiff::Tensor::scalar(0.5));
                store.accumulate_grad(PARAM_S2, &crate::autodiff::Tensor::scalar(0.5));
            }
            store.clip_grads(config.grad_clip);
            store.adam_step(&hyper);

            let (bl, bm, bs) = results.iter().fold((0.0, 0.0, 0.0), |acc, r| {
                (acc.0 + r.loc, acc.1 + r.mode, acc.2 + r.speed)
            });
            sum_loc += bl;
            sum_mode += bm;
            sum_speed += bs;
            sum_labeled += labeled;
            let u = UncertaintyParams {
                s1: store.value(PARAM_S1).item(),
                s2: store.value(PARAM_S2).item(),
                alpha: config.alpha,
            };
            let joint = match weighting {
                TaskWeighting::Uncertainty { alpha } => joint_loss_value(
                    bl * inv,
                    bm * inv,
                    bs * inv,
                    &UncertaintyParams { alpha, ..u },
                ),
                TaskWeighting::Fixed { loc, mode, speed } => {
                    loc * bl * inv + mode * bm * inv + speed * bs * inv
                }
            };
            joint_total += joint;
            joint_batches += 1;
        }

        let m = sum_labeled.max(1) as f64;
        let stats_row = EpochStats {
            epoch,
            l_loc: sum_loc / m,
            l_mode: sum_mode / m,
            l_speed: sum_speed / m,
            joint: joint_total / joint_batches.max(1) as f64,
            sigma1: (store.value(PARAM_S1).item() / 2.0).exp(),
            sigma2: (store.value(PARAM_S2).item() / 2.0).exp(),
        };
        let finite = stats_row.joint.is_finite()
            && stats_row.l_loc.is_finite()
            && stats_row.l_mode.is_finite()
            && stats_row.l_speed.is_finite();
        trace.push(stats_row);
        if !finite {
            return TrainOutcome { store: last_good, trace, diverged: true };
        }
        last_good = store.clone();
    }

    TrainOutcome { store, trace, diverged: false }
}

/// One no-update pass over the inputs, returning per-step-normalized
/// (l_loc, l_mode, l_speed) and the labeled-step count.
pub fn evaluate_losses(
    inputs: &[SequenceInput],
    store: &ParamStore,
    model: &ModelConfig,
    speed_dists: &[SpeedDistribution],
    interpolate_speed: bool,
    stats: &NormStats,
) -> (f64, f64, f64, usize) {
    let lookup = SpeedLookup::new(speed_dists, interpolate_speed);
    let unit_scale = stats.bbox.unit_scale_m();
    let parts: Vec<(f64, f64, f64, usize)> = inputs
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
            let positions: Vec<_> = fwd.steps.iter().map(|s| s.position).collect();
            let probs: Vec<_> = fwd.steps.iter().map(|s| s.mode_probs).collect();
            let losses =
                sequence_losses(&mut tape, &positions, &probs, input, unit_scale, &lookup)
                    .expect("loss shapes");
            (
                tape.value(losses.loc_sum).item(),
                tape.value(losses.mode_sum).item(),
                tape.value(losses.speed_sum).item(),
                losses.labeled_steps,
            )
        })
        .collect();
    let (mut loc, mut mode, mut speed, mut labeled) = (0.0, 0.0, 0.0, 0usize);
    for (l, m, s, n) in parts {
        loc += l;
        mode += m;
        speed += s;
        labeled += n;
    }
    let denom = labeled.max(1) as f64;
    (loc / denom, mode / denom, speed / denom, labeled)
}

/// Copy of the store holding only trainable parameters (Adam state
/// included); this is what checkpoints persist, so single-task checkpoints
/// omit the frozen head.
pub fn trainable_snapshot(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, entry) in store.iter() {
        if entry.trainable {
            out.insert_entry(name, entry.clone());
        }
    }
    out.set_step(store.step());
    out
}

/// Write the loss trace as CSV.
pub fn write_trace_csv(path: &Path, trace: &[EpochStats]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,l_loc,l_mode,l_speed,joint,sigma1,sigma2")?;
    for row in trace {
        writeln!(
            f,
            "{},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            row.epoch, row.l_loc, row.l_mode, row.l_speed, row.joint, row.sigma1, row.sigma2
        )?;
    }
    Ok(())
}
