//! Shared fixtures and the finite-difference harness for the acceptance
//! suite.

use std::collections::BTreeMap;

use prnet_core::autodiff::{NodeId, ParamStore, Tape, Tensor};
use prnet_core::dataset::{prepare_split, Dataset};
use prnet_core::geo::GeoPoint;
use prnet_core::mrdata::{
    MRSample, MRSequence, Mode, NormStats, SpeedDistribution, StationId, StationReading,
};
use prnet_core::prnet::{forward_sequence, ForwardOptions, ModelConfig, SequenceInput};
use prnet_core::simgen::{generate_samples, GenConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn report(criterion: usize, title: &str, pass: bool, extra: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    if extra.is_empty() {
        println!("[{tag}] criterion {criterion}: {title}");
    } else {
        println!("[{tag}] criterion {criterion}: {title} ({extra})");
    }
}

/// Minimal MR sample with a given serving and optional second station.
pub fn sample_with_serving(t: i64, serving: i64, second: Option<i64>) -> MRSample {
    let mut stations = vec![StationReading {
        id: StationId::new(7000, serving),
        position: Some(GeoPoint::new(31.0, 121.0)),
        asu_level: 15.0,
        signal_level: 3.0,
        rssi: -80.0,
    }];
    if let Some(s) = second {
        stations.push(StationReading {
            id: StationId::new(7000, 1000 + s),
            position: Some(GeoPoint::new(31.001, 121.001)),
            asu_level: 10.0,
            signal_level: 2.0,
            rssi: -90.0,
        });
    }
    MRSample {
        timestamp: t,
        imsi: "oracle".into(),
        stations,
        mode_label: None,
        position_label: None,
    }
}

pub fn toy_speed_dists() -> Vec<SpeedDistribution> {
    vec![
        SpeedDistribution::from_speeds(Mode::Walking, 0.5, 60, &[1.0, 1.2, 1.5]),
        SpeedDistribution::from_speeds(Mode::Cycling, 0.5, 60, &[3.0, 4.0, 5.5]),
        SpeedDistribution::from_speeds(Mode::Driving, 0.5, 60, &[8.0, 12.0, 17.0]),
    ]
}

/// Random model input with labels; when `relu_margin` is set the features
/// are redrawn until every convolution pre-activation sits at least 1e-3
/// from the ReLU kink, keeping finite differences valid.
pub fn random_model_input(
    config: &ModelConfig,
    seed: u64,
    relu_margin: bool,
    store: &ParamStore,
) -> SequenceInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491).wrapping_add(17));
    let subseq_lens: Vec<usize> =
        (0..rng.random_range(1..=3usize)).map(|_| rng.random_range(1..=3usize)).collect();
    let total: usize = subseq_lens.iter().sum();
    let conv_w = store.contains("conv.w").then(|| store.value("conv.w").clone());
    let conv_b = store.contains("conv.b").then(|| store.value("conv.b").clone());

    let mut features = Vec::with_capacity(total);
    for _ in 0..total {
        loop {
            let x = Tensor::uniform(&[config.num_features, config.num_stations], 1.0, &mut rng);
            if !relu_margin {
                features.push(x);
                break;
            }
            let (Some(w), Some(b)) = (&conv_w, &conv_b) else {
                features.push(x);
                break;
            };
            let pre = w.matmul(&x).unwrap();
            let clear = pre
                .data()
                .iter()
                .enumerate()
                .all(|(i, v)| (v + b.data()[i / x.cols()]).abs() > 1e-3);
            if clear {
                features.push(x);
                break;
            }
        }
    }

    let mut delta_t = Vec::with_capacity(total);
    let mut subseq_index = Vec::with_capacity(total);
    for (i, &l) in subseq_lens.iter().enumerate() {
        for j in 0..l {
            delta_t.push(if j == 0 { 0.0 } else { rng.random_range(1.0..60.0) });
            subseq_index.push(i);
        }
    }
    SequenceInput {
        features,
        delta_t,
        subseq_index,
        pos_labels: (0..total)
            .map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)])
            .collect(),
        mode_labels: (0..total).map(|_| rng.random_range(0..config.num_modes as i64)).collect(),
    }
}

/// Smooth probe functional over all step outputs: random linear forms in
/// Y and V plus a log-weighted form in M (exercising the softmax
/// backward).
pub fn probe_loss(
    tape: &mut Tape,
    steps: &[prnet_core::prnet::StepOutput],
    config: &ModelConfig,
    seed: u64,
) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(5));
    let mut terms = Vec::new();
    for step in steps {
        let cy = tape.constant(Tensor::uniform(&[2], 1.0, &mut rng));
        let cm = tape.constant(Tensor::uniform(&[config.num_modes], 1.0, &mut rng));
        let cv = tape.constant(Tensor::uniform(&[config.feature_dim], 1.0, &mut rng));
        let t1 = tape.dot(cy, step.position).unwrap();
        let logm = tape.log_guarded(step.mode_probs);
        let t2 = tape.dot(cm, logm).unwrap();
        let t3 = tape.dot(cv, step.features).unwrap();
        let a = tape.add(t1, t2).unwrap();
        terms.push(tape.add(a, t3).unwrap());
    }
    let cat = tape.concat(&terms);
    tape.sum_all(cat)
}

/// AD-vs-central-difference comparison across every model parameter;
/// returns the max relative error per parameter tensor.
pub fn fd_check_model(
    config: &ModelConfig,
    store: &ParamStore,
    input: &SequenceInput,
    seed: u64,
) -> Vec<(String, f64)> {
    let eval = |st: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let fwd = forward_sequence(
            &mut tape,
            st,
            config,
            input,
            input.len(),
            &ForwardOptions::default(),
        )
        .unwrap();
        let loss = probe_loss(&mut tape, &fwd.steps, config, seed);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let fwd = forward_sequence(
        &mut tape,
        store,
        config,
        input,
        input.len(),
        &ForwardOptions::default(),
    )
    .unwrap();
    let loss = probe_loss(&mut tape, &fwd.steps, config, seed);
    tape.backward(loss).unwrap();
    let ad: BTreeMap<String, Tensor> =
        tape.param_grads().map(|(n, g)| (n.to_string(), g.clone())).collect();

    let eps = 1e-5;
    let mut out = Vec::new();
    for (name, grad) in &ad {
        if name.starts_with("uncertainty.") {
            continue;
        }
        let mut worst: f64 = 0.0;
        for i in 0..grad.len() {
            let mut plus = store.clone();
            plus.value_mut(name).data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.value_mut(name).data_mut()[i] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = grad.data()[i];
            let abs = (a - fd).abs();
            let rel = if abs < 1e-8 { 0.0 } else { abs / a.abs().max(fd.abs()).max(1e-8) };
            worst = worst.max(rel);
        }
        out.push((name.clone(), worst));
    }
    out
}

fn labeled_dataset(trajectories: usize, seed: u64) -> Dataset {
    let mut cfg = GenConfig::default();
    cfg.mobility.trajectories = trajectories;
    cfg.mobility.duration_s = 150.0;
    cfg.mobility.segment_s = 75.0;
    cfg.world.box_km = [1.5, 1.5];
    cfg.world.station_density_per_km2 = 18.0;
    cfg.seed = seed;
    let (world, samples, _) = generate_samples(&cfg).unwrap();
    let mut by_imsi: BTreeMap<String, Vec<MRSample>> = BTreeMap::new();
    for s in samples {
        by_imsi.entry(s.imsi.clone()).or_default().push(s);
    }
    let mut sequences = Vec::new();
    for (_, series) in by_imsi {
        sequences.extend(prnet_core::mrdata::segment_sequences(&series, 4));
    }
    Dataset::from_sequences(sequences, world.registry)
}

/// Two decently long labeled sequences plus fitted stats and speed
/// distributions, for the memorization and determinism criteria.
pub fn two_labeled_sequences() -> (Vec<SequenceInput>, NormStats, Vec<SpeedDistribution>) {
    let dataset = labeled_dataset(10, 41);
    let mut seqs: Vec<&MRSequence> = dataset.sequences.iter().collect();
    seqs.sort_by_key(|s| std::cmp::Reverse(s.len()));
    let chosen: Vec<&MRSequence> = seqs.into_iter().take(2).collect();
    let prepared = prepare_split(&chosen, &[]).unwrap();
    (prepared.train, prepared.stats, prepared.speed_dists)
}

/// A batch of labeled sequences for trend checks.
pub fn many_labeled_sequences(
    count: usize,
    seed: u64,
) -> (Vec<SequenceInput>, NormStats, Vec<SpeedDistribution>) {
    let dataset = labeled_dataset(count, seed);
    let refs: Vec<&MRSequence> = dataset.sequences.iter().take(count).collect();
    let prepared = prepare_split(&refs, &[]).unwrap();
    (prepared.train, prepared.stats, prepared.speed_dists)
}
