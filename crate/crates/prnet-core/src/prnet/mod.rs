//! The position-recovery network: a local single-point predictor, a
//! hierarchical global recurrent predictor with time-interval and
//! subsequence attention, and the two task heads sharing its features.

mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};

pub use forward::{
    bind_lstm, forward_sequence, local_predictor, materialize_outputs, ForwardOptions, GateTrace,
    LstmLeaves, SequenceForward, SequenceInput, SequenceOutput, StepOutput,
};

/// Which part of the feature extractor runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchVariant {
    /// Local predictor feeding the global hierarchical predictor.
    #[default]
    Full,
    /// Local predictor alone with a dense layer producing the shared
    /// features; every sample is handled as a single point.
    LocalOnly,
    /// Global predictor alone, fed the flattened raw feature matrix.
    GlobalOnly,
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Features per station column (F).
    pub num_features: usize,
    /// Station slots per sample (N).
    pub num_stations: usize,
    /// Convolution filters (K).
    pub conv_filters: usize,
    /// Local recurrent hidden units per station step.
    pub local_hidden: usize,
    /// Bottom recurrent hidden units.
    pub bottom_hidden: usize,
    /// Upper recurrent hidden units.
    pub upper_hidden: usize,
    /// Shared feature dimension.
    pub feature_dim: usize,
    /// Stacked FC layers in the mode head (T >= 1).
    pub mode_layers: usize,
    /// Number of transportation modes.
    pub num_modes: usize,
    pub arch: ArchVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_features: crate::mrdata::FEATURES_PER_STATION,
            num_stations: crate::mrdata::MAX_STATIONS,
            conv_filters: 16,
            local_hidden: 8,
            bottom_hidden: 64,
            upper_hidden: 64,
            feature_dim: 32,
            mode_layers: 3,
            num_modes: 3,
            arch: ArchVariant::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            num_features: 4,
            num_stations: 3,
            conv_filters: 2,
            local_hidden: 4,
            bottom_hidden: 4,
            upper_hidden: 4,
            feature_dim: 4,
            mode_layers: 2,
            num_modes: 3,
            arch: ArchVariant::Full,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.num_features,
            self.num_stations,
            self.conv_filters,
            self.local_hidden,
            self.bottom_hidden,
            self.upper_hidden,
            self.feature_dim,
            self.mode_layers,
        ];
        if all.iter().any(|&v| v == 0) {
            return Err("all model dimensions must be positive".into());
        }
        if self.num_modes < 2 {
            return Err("need at least two transportation modes".into());
        }
        Ok(())
    }

    /// Input width of the bottom recurrent layer.
    pub fn bottom_input(&self) -> usize {
        match self.arch {
            ArchVariant::GlobalOnly => self.num_features * self.num_stations,
            _ => self.num_stations * self.local_hidden,
        }
    }
}

pub const PARAM_S1: &str = "uncertainty.s1";
pub const PARAM_S2: &str = "uncertainty.s2";

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

fn insert_lstm(
    store: &mut ParamStore,
    prefix: &str,
    hidden: usize,
    input: usize,
    rng: &mut ChaCha8Rng,
) {
    let cat = hidden + input;
    for gate in ["wz", "wf", "wg", "wo"] {
        store.insert(&format!("{prefix}.{gate}"), xavier(&[hidden, cat], cat, hidden, rng));
    }
    store.insert(&format!("{prefix}.bz"), Tensor::zeros(&[hidden]));
    // Forget-gate bias starts at one, the usual recurrent stabilizer.
    store.insert(&format!("{prefix}.bf"), Tensor::new(vec![hidden], vec![1.0; hidden]));
    store.insert(&format!("{prefix}.bg"), Tensor::zeros(&[hidden]));
    store.insert(&format!("{prefix}.bo"), Tensor::zeros(&[hidden]));
}

/// Fresh parameters for every layer the architecture variant uses, plus
/// the two task-uncertainty scalars (as log-variances, starting at 0 so
/// both sigmas start at 1).
pub fn init_params(config: &ModelConfig, seed: u64) -> ParamStore {
    config.validate().expect("invalid model config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (f, n, k) = (config.num_features, config.num_stations, config.conv_filters);

    if config.arch != ArchVariant::GlobalOnly {
        store.insert("conv.w", xavier(&[k, f], f, k, &mut rng));
        store.insert("conv.b", Tensor::zeros(&[k]));
        insert_lstm(&mut store, "local", config.local_hidden, k, &mut rng);
    }

    match config.arch {
        ArchVariant::LocalOnly => {
            let p_len = n * config.local_hidden;
            store.insert(
                "localout.w",
                xavier(&[config.feature_dim, p_len], p_len, config.feature_dim, &mut rng),
            );
            store.insert("localout.b", Tensor::zeros(&[config.feature_dim]));
        }
        ArchVariant::Full | ArchVariant::GlobalOnly => {
            let d_b = config.bottom_hidden;
            let d_u = config.upper_hidden;
            insert_lstm(&mut store, "bottom", d_b, config.bottom_input(), &mut rng);
            store.insert("bottom.time_w", xavier(&[1], 1, 1, &mut rng));
            store.insert("bottom.time_b", Tensor::zeros(&[1]));
            insert_lstm(&mut store, "upper", d_u, d_b, &mut rng);
            store.insert("attn.w", xavier(&[d_u, d_u], d_u, d_u, &mut rng));
            store.insert("attn.b", Tensor::zeros(&[d_u]));
            store.insert("attn.v", xavier(&[d_u], d_u, 1, &mut rng));
            store.insert(
                "out.w_bottom",
                xavier(&[config.feature_dim, d_b], d_b, config.feature_dim, &mut rng),
            );
            store.insert(
                "out.w_upper",
                xavier(&[config.feature_dim, d_u], d_u, config.feature_dim, &mut rng),
            );
            store.insert("out.b", Tensor::zeros(&[config.feature_dim]));
        }
    }

    store.insert("pos.w", xavier(&[2, config.feature_dim], config.feature_dim, 2, &mut rng));
    store.insert("pos.b", Tensor::zeros(&[2]));

    let d_f = config.feature_dim;
    for layer in 1..=config.mode_layers {
        let (out_dim, in_dim) =
            if layer == config.mode_layers { (config.num_modes, d_f) } else { (d_f, d_f) };
        store.insert(&format!("mode.w{layer}"), xavier(&[out_dim, in_dim], in_dim, out_dim, &mut rng));
        store.insert(&format!("mode.b{layer}"), Tensor::zeros(&[out_dim]));
    }

    store.insert(PARAM_S1, Tensor::scalar(0.0));
    store.insert(PARAM_S2, Tensor::scalar(0.0));
    store
}

/// Parameter names belonging to the mode-detection head.
pub fn mode_head_params(config: &ModelConfig) -> Vec<String> {
    (1..=config.mode_layers)
        .flat_map(|l| [format!("mode.w{l}"), format!("mode.b{l}")])
        .collect()
}

/// Parameter names belonging to the position head.
pub fn position_head_params() -> Vec<String> {
    vec!["pos.w".into(), "pos.b".into()]
}
