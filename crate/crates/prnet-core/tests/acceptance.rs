//! Acceptance suite. Each test prints one PASS/FAIL line; run with
//! `cargo test --test acceptance -- --nocapture` to see them all.

mod support;

use prnet_core::autodiff::{ParamStore, Tensor};
use prnet_core::geo::BoundingBox;
use prnet_core::losses::{joint_loss_value, UncertaintyParams};
use prnet_core::mrdata::{segment_sequences, split_subsequences, NormStats};
use prnet_core::prnet::{forward_sequence, init_params, ForwardOptions, ModelConfig};
use prnet_core::train::{pad_batch, train_model, LossVariant, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{fd_check_model, random_model_input, report, sample_with_serving, toy_speed_dists};

/// Criterion 1: every layer and the composed model match central finite
/// differences at < 1e-4 relative error over 100 seeds, in under 2 min.
#[test]
fn criterion_1_gradient_correctness() {
    let started = std::time::Instant::now();
    let config = ModelConfig::tiny();
    // Layer attribution by parameter prefix; every group below must show
    // up in every seed's check.
    let layer_of = |name: &str| -> &'static str {
        if name.starts_with("conv.") {
            "conv_layer"
        } else if name.starts_with("local.") {
            "local_recurrent"
        } else if name.starts_with("bottom.time") {
            "time_attention"
        } else if name.starts_with("bottom.") {
            "bottom_recurrent"
        } else if name.starts_with("upper.") {
            "upper_recurrent"
        } else if name.starts_with("attn.") {
            "subseq_attention"
        } else if name.starts_with("out.") {
            "output_layer"
        } else if name.starts_with("pos.") {
            "position_head"
        } else if name.starts_with("mode.") {
            "mode_head"
        } else {
            "other"
        }
    };
    let expected_layers = [
        "conv_layer",
        "local_recurrent",
        "time_attention",
        "bottom_recurrent",
        "upper_recurrent",
        "subseq_attention",
        "output_layer",
        "position_head",
        "mode_head",
    ];

    let mut worst: f64 = 0.0;
    let mut worst_layer = String::new();
    let mut seen: std::collections::BTreeSet<&str> = Default::default();
    for seed in 0..100u64 {
        let store = init_params(&config, seed.wrapping_add(1000));
        let input = random_model_input(&config, seed, true, &store);
        let errs = fd_check_model(&config, &store, &input, seed);
        for (name, err) in errs {
            let group = layer_of(&name);
            seen.insert(group);
            if err > worst {
                worst = err;
                worst_layer = format!("{group}/{name}");
            }
        }
    }
    let covered = expected_layers.iter().all(|l| seen.contains(l));
    let elapsed = started.elapsed();
    let pass = worst < 1e-4 && elapsed.as_secs() < 120 && covered;
    report(
        1,
        "gradient correctness (layers + composed model, 100 seeds)",
        pass,
        &format!("max rel err {worst:.2e} at {worst_layer}, {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(pass, "worst {worst:.3e} at {worst_layer} in {elapsed:?}, covered={covered}");
}

/// Criterion 2: joint-loss algebra at unit sigmas, and the closed-form
/// stationary point recovered numerically.
#[test]
fn criterion_2_loss_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ok = true;
    for _ in 0..50 {
        let l_loc = rng.random_range(0.0..5.0);
        let l_mode = rng.random_range(0.0..5.0);
        let joint = joint_loss_value(l_loc, l_mode, 0.0, &UncertaintyParams::unit(0.0));
        ok &= (joint - (0.5 * l_loc + 0.5 * l_mode)).abs() < 1e-12;
    }
    // Stationary point: minimizing over s recovers sigma^2 = l_loc.
    for &l_loc in &[0.037, 0.5, 1.0, 2.31, 17.0] {
        let f = |s: f64| {
            joint_loss_value(l_loc, 0.0, 0.0, &UncertaintyParams { s1: s, s2: 0.0, alpha: 0.0 })
        };
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let sigma_sq = (0.5 * (lo + hi)).exp();
        ok &= (sigma_sq - l_loc).abs() < 1e-6;
    }
    report(2, "joint-loss algebra and stationary point", ok, "");
    assert!(ok);
}

/// Criterion 3: gradients with respect to structurally padded step inputs
/// are exactly zero, and perturbing padded inputs leaves the loss
/// bit-identical.
#[test]
fn criterion_3_mask_neutrality() {
    let config = ModelConfig::tiny();
    let mut ok = true;
    for seed in 0..20u64 {
        let store = init_params(&config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Batch of ragged sequences, padded.
        let inputs: Vec<_> = (0..4)
            .map(|i| random_model_input(&config, seed * 10 + i, false, &store))
            .collect();
        let batch = pad_batch(&inputs);
        let dists = toy_speed_dists();
        let lookup = prnet_core::losses::SpeedLookup::new(&dists, false);

        for padded in &batch.sequences {
            let mut tape = prnet_core::autodiff::Tape::new();
            let fwd = forward_sequence(
                &mut tape,
                &store,
                &config,
                &padded.input,
                padded.real_len,
                &ForwardOptions::default(),
            )
            .unwrap();
            let positions: Vec<_> = fwd.steps.iter().map(|s| s.position).collect();
            let probs: Vec<_> = fwd.steps.iter().map(|s| s.mode_probs).collect();
            let losses = prnet_core::losses::sequence_losses(
                &mut tape,
                &positions,
                &probs,
                &padded.input,
                [1000.0, 1000.0],
                &lookup,
            )
            .unwrap();
            let s1 = store.leaf(&mut tape, "uncertainty.s1");
            let s2 = store.leaf(&mut tape, "uncertainty.s2");
            let joint = prnet_core::losses::joint_loss(
                &mut tape,
                losses.loc_sum,
                losses.mode_sum,
                losses.speed_sum,
                Some(s1),
                Some(s2),
                prnet_core::losses::TaskWeighting::Uncertainty { alpha: 0.05 },
            )
            .unwrap();
            let baseline = tape.value(joint).item();
            tape.backward(joint).unwrap();
            for &leaf in &fwd.input_leaves[padded.real_len..] {
                ok &= tape.grad(leaf).unwrap().iter().all(|&g| g == 0.0);
            }

            // Perturb the padded inputs and rebuild: the loss must be
            // bit-identical.
            if padded.real_len < padded.input.len() {
                let mut perturbed = padded.input.clone();
                for t in padded.real_len..perturbed.features.len() {
                    perturbed.features[t] = Tensor::uniform(
                        &[config.num_features, config.num_stations],
                        3.0,
                        &mut rng,
                    );
                    perturbed.delta_t[t] = rng.random_range(0.0..100.0);
                }
                let mut tape2 = prnet_core::autodiff::Tape::new();
                let fwd2 = forward_sequence(
                    &mut tape2,
                    &store,
                    &config,
                    &perturbed,
                    padded.real_len,
                    &ForwardOptions::default(),
                )
                .unwrap();
                let positions2: Vec<_> = fwd2.steps.iter().map(|s| s.position).collect();
                let probs2: Vec<_> = fwd2.steps.iter().map(|s| s.mode_probs).collect();
                let losses2 = prnet_core::losses::sequence_losses(
                    &mut tape2,
                    &positions2,
                    &probs2,
                    &perturbed,
                    [1000.0, 1000.0],
                    &lookup,
                )
                .unwrap();
                let s1b = store.leaf(&mut tape2, "uncertainty.s1");
                let s2b = store.leaf(&mut tape2, "uncertainty.s2");
                let joint2 = prnet_core::losses::joint_loss(
                    &mut tape2,
                    losses2.loc_sum,
                    losses2.mode_sum,
                    losses2.speed_sum,
                    Some(s1b),
                    Some(s2b),
                    prnet_core::losses::TaskWeighting::Uncertainty { alpha: 0.05 },
                )
                .unwrap();
                ok &= tape2.value(joint2).item().to_bits() == baseline.to_bits();
            }
        }
    }
    report(3, "mask neutrality (padded steps carry zero gradient)", ok, "");
    assert!(ok);
}

/// Criterion 4: segmentation and subsequence splitting match brute-force
/// oracles exhaustively (length <= 8 over 3 ids) and on 1000 random
/// series up to length 200.
#[test]
fn criterion_4_segmentation_oracles() {
    let mut ok = true;
    let mut checked = 0usize;

    // Independent oracle: repeatedly find the first run shorter than tau
    // and merge it with its successor (predecessor when it is last).
    fn oracle_merge(ids: &[i64], tau: usize) -> Vec<usize> {
        let mut runs: Vec<usize> = Vec::new();
        let mut i = 0;
        while i < ids.len() {
            let mut j = i;
            while j + 1 < ids.len() && ids[j + 1] == ids[i] {
                j += 1;
            }
            runs.push(j - i + 1);
            i = j + 1;
        }
        loop {
            if runs.len() <= 1 {
                break;
            }
            let Some(k) = runs.iter().position(|&r| r < tau) else { break };
            if k + 1 < runs.len() {
                let v = runs.remove(k);
                runs[k] += v;
            } else {
                let v = runs.pop().unwrap();
                *runs.last_mut().unwrap() += v;
            }
        }
        runs
    }

    fn rle(ids: &[Option<i64>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for t in 1..ids.len() {
            if ids[t] != ids[t - 1] {
                out.push((start, t - 1));
                start = t;
            }
        }
        if !ids.is_empty() {
            out.push((start, ids.len() - 1));
        }
        out
    }

    // Exhaustive: every serving-id series of length 1..=8 over 3 ids,
    // tau 1..=4.
    for len in 1..=8usize {
        let mut series = vec![0usize; len];
        loop {
            let ids: Vec<i64> = series.iter().map(|&d| d as i64).collect();
            let samples: Vec<_> =
                ids.iter().enumerate().map(|(t, &id)| sample_with_serving(t as i64, id, None)).collect();
            for tau in 1..=4usize {
                let seqs = segment_sequences(&samples, tau);
                let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
                let expect = oracle_merge(&ids, tau);
                ok &= lens == expect;
                // Concatenation reproduces the series exactly.
                let rebuilt: Vec<i64> =
                    seqs.iter().flat_map(|s| s.samples.iter().map(|x| x.timestamp)).collect();
                ok &= rebuilt == (0..len as i64).collect::<Vec<_>>();
                checked += 1;
            }
            // Next id assignment.
            let mut pos = 0;
            loop {
                if pos == len {
                    break;
                }
                series[pos] += 1;
                if series[pos] < 3 {
                    break;
                }
                series[pos] = 0;
                pos += 1;
            }
            if pos == len {
                break;
            }
        }
    }

    // Randomized: series up to length 200 with random second stations;
    // subsequence bounds must match run-length encoding.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let len = rng.random_range(1..=200usize);
        let ids: Vec<i64> = (0..len).map(|_| rng.random_range(0..5)).collect();
        let second: Vec<Option<i64>> = (0..len)
            .map(|_| if rng.random_bool(0.15) { None } else { Some(rng.random_range(0..4)) })
            .collect();
        let samples: Vec<_> = ids
            .iter()
            .zip(&second)
            .enumerate()
            .map(|(t, (&id, &sec))| sample_with_serving(t as i64, id, sec))
            .collect();
        let tau = rng.random_range(1..=5usize);
        let seqs = segment_sequences(&samples, tau);
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        ok &= lens == oracle_merge(&ids, tau);
        let total: usize = lens.iter().sum();
        ok &= total == len;
        if seqs.len() > 1 {
            ok &= lens.iter().all(|&l| l >= tau);
        }
        // Subsequence bounds match RLE of literal second ids, and every
        // bound is maximal.
        for seq in &seqs {
            let keys: Vec<Option<i64>> =
                seq.samples.iter().map(|s| s.second_id().map(|i| i.cellid)).collect();
            let bounds = split_subsequences(&seq.samples);
            ok &= bounds == rle(&keys);
            for &(s, e) in &bounds {
                if s > 0 {
                    ok &= keys[s - 1] != keys[s];
                }
                if e + 1 < keys.len() {
                    ok &= keys[e + 1] != keys[e];
                }
            }
        }
        checked += 1;
    }
    report(4, "segmentation vs brute-force oracles", ok, &format!("{checked} cases"));
    assert!(ok);
}

/// Criterion 5: two sequences are memorized within 500 epochs: per-step
/// position loss < 1e-3 in unit-box units and 100% mode accuracy, in
/// under 5 minutes.
#[test]
fn criterion_5_memorization() {
    let started = std::time::Instant::now();
    let (inputs, stats, dists) = support::two_labeled_sequences();
    let config = TrainConfig {
        epochs: 500,
        batch_size: 2,
        learning_rate: 5e-3,
        seed: 5,
        variant: LossVariant::Full,
        alpha: 0.05,
        ..TrainConfig::default()
    };
    let outcome = train_model(&inputs, &dists, &stats, &config);
    let (l_loc, _, _, labeled) = prnet_core::train::evaluate_losses(
        &inputs,
        &outcome.store,
        &config.model,
        &dists,
        false,
        &stats,
    );
    // Mode accuracy on the training pair.
    let preds = prnet_core::eval::predict_sequences(&inputs, &outcome.store, &config.model, &stats);
    let mut hits = 0usize;
    let mut total = 0usize;
    for (input, pred) in inputs.iter().zip(&preds) {
        for (t, &label) in input.mode_labels.iter().enumerate() {
            total += 1;
            if pred.modes[t].index() as i64 == label {
                hits += 1;
            }
        }
    }
    let acc = hits as f64 / total as f64;
    let elapsed = started.elapsed();
    let pass =
        !outcome.diverged && l_loc < 1e-3 && acc == 1.0 && elapsed.as_secs() < 300 && labeled > 0;
    report(
        5,
        "memorization of two sequences",
        pass,
        &format!("loc {l_loc:.2e}/step, mode acc {acc:.3}, {:.0}s", elapsed.as_secs_f64()),
    );
    assert!(pass, "loc {l_loc}, acc {acc}, elapsed {elapsed:?}");
}

/// Criterion 10: identical (config, seed) runs produce identical traces
/// and the checkpoint round-trips bit-exactly.
#[test]
fn criterion_10_determinism_and_checkpoints() {
    let (inputs, stats, dists) = support::two_labeled_sequences();
    let config = TrainConfig {
        epochs: 6,
        batch_size: 2,
        learning_rate: 2e-3,
        seed: 10,
        ..TrainConfig::default()
    };
    let a = train_model(&inputs, &dists, &stats, &config);
    let b = train_model(&inputs, &dists, &stats, &config);
    let mut ok = a.trace.len() == b.trace.len();
    for (ra, rb) in a.trace.iter().zip(&b.trace) {
        ok &= ra.joint.to_bits() == rb.joint.to_bits()
            && ra.l_loc.to_bits() == rb.l_loc.to_bits()
            && ra.l_mode.to_bits() == rb.l_mode.to_bits()
            && ra.l_speed.to_bits() == rb.l_speed.to_bits();
    }
    for (name, entry) in a.store.iter() {
        ok &= entry.value == b.store.entry(name).value;
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    a.store.save(&path).unwrap();
    let loaded = ParamStore::load(&path).unwrap();
    for (name, entry) in a.store.iter() {
        let other = loaded.entry(name);
        ok &= entry.value == other.value
            && entry.adam_m == other.adam_m
            && entry.adam_v == other.adam_v;
    }
    ok &= loaded.step() == a.store.step();
    report(10, "determinism and checkpoint round-trip", ok, "");
    assert!(ok);
}

/// Invariant from the training contract: the smoothed joint loss is
/// non-increasing over epochs on a small set, tolerating 5% upticks.
#[test]
fn training_loss_trends_downward() {
    let (inputs, stats, dists) = support::many_labeled_sequences(24, 77);
    let config = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 2e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = train_model(&inputs, &dists, &stats, &config);
    let joints: Vec<f64> = outcome.trace.iter().map(|r| r.joint).collect();
    let window = 10usize;
    let smooth: Vec<f64> = joints
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let mut ok = true;
    for pair in smooth.windows(2) {
        // Non-increasing, tolerating 5% upticks.
        ok &= pair[1] <= pair[0] + 0.05 * pair[0].abs();
    }
    ok &= smooth.last().unwrap() < smooth.first().unwrap();
    assert!(ok, "joint loss trend violated: {joints:?}");
}

/// Normalization stats guard: every labeled training position normalizes
/// strictly inside the unit box.
#[test]
fn norm_stats_bbox_strictly_contains_training_labels() {
    let bbox = BoundingBox::new(31.0, 31.01, 121.0, 121.015);
    let stats = NormStats::identity(bbox);
    let inside = bbox.normalize(prnet_core::geo::GeoPoint::new(31.005, 121.0075));
    assert!(inside[0] > 0.0 && inside[0] < 1.0);
    let _ = stats;
}
