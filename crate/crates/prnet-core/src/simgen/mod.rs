//! Synthetic world, mobility, and radio-signal generation producing
//! labeled MR datasets with mixed modes, irregular sampling, and
//! configurable station density.

mod signal;
mod trajectory;
mod world;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrdata::{write_mr_csv, write_station_registry, MRSample, Mode, ParseError};

pub use signal::{synthesize_mr, SignalModel};
pub use trajectory::{simulate_trajectory, GapSampler, ModeSchedule, TrackPoint};
pub use world::{build_world, World, WorldConfig};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("csv write: {0}")]
    Csv(#[from] ParseError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Per-mode speed ranges in m/s.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpeedRanges {
    pub walking: [f64; 2],
    pub cycling: [f64; 2],
    pub driving: [f64; 2],
}

impl Default for SpeedRanges {
    fn default() -> Self {
        Self { walking: [0.5, 2.0], cycling: [2.0, 7.0], driving: [5.0, 20.0] }
    }
}

impl SpeedRanges {
    pub fn range(&self, mode: Mode) -> [f64; 2] {
        match mode {
            Mode::Walking => self.walking,
            Mode::Cycling => self.cycling,
            Mode::Driving => self.driving,
        }
    }
}

fn default_trajectories() -> usize {
    200
}
fn default_duration() -> f64 {
    240.0
}
fn default_segment() -> f64 {
    120.0
}
fn default_mode_mix() -> [f64; 3] {
    [0.60, 0.25, 0.15]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobilityConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// Wall time each device moves, in seconds.
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Length of each constant-mode schedule segment, in seconds.
    #[serde(default = "default_segment")]
    pub segment_s: f64,
    /// Target share of walking / cycling / driving samples.
    #[serde(default = "default_mode_mix")]
    pub mode_mix: [f64; 3],
    /// Draw one speed per mode period instead of per road segment.
    #[serde(default)]
    pub constant_speed: bool,
    #[serde(default)]
    pub speed_ranges: SpeedRanges,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            duration_s: default_duration(),
            segment_s: default_segment(),
            mode_mix: default_mode_mix(),
            constant_speed: false,
            speed_ranges: SpeedRanges::default(),
        }
    }
}

fn default_buckets() -> Vec<[f64; 2]> {
    vec![[1.0, 3.0], [3.0, 5.0], [5.0, 10.0], [10.0, 30.0], [30.0, 60.0], [60.0, 125.0]]
}

fn default_weights() -> Vec<f64> {
    vec![0.7132, 0.1708, 0.0814, 0.0177, 0.0134, 0.0035]
}

/// Timestamp-gap distribution: a bucket is drawn by weight, then an
/// integer gap uniformly inside it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default = "default_buckets")]
    pub interval_buckets: Vec<[f64; 2]>,
    #[serde(default = "default_weights")]
    pub bucket_weights: Vec<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { interval_buckets: default_buckets(), bucket_weights: default_weights() }
    }
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GenConfig {
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub signal: SignalModel,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.world.station_density_per_km2 <= 0.0 {
            return Err(GenError::InvalidConfig("station density must be positive".into()));
        }
        if self.world.box_km[0] <= 0.0 || self.world.box_km[1] <= 0.0 {
            return Err(GenError::InvalidConfig("world box must have positive area".into()));
        }
        if self.mobility.trajectories == 0 || self.mobility.duration_s <= 0.0 {
            return Err(GenError::InvalidConfig("mobility config needs work to do".into()));
        }
        let mix: f64 = self.mobility.mode_mix.iter().sum();
        if (mix - 1.0).abs() > 1e-6 {
            return Err(GenError::InvalidConfig("mode mix must sum to 1".into()));
        }
        if self.sampling.interval_buckets.len() != self.sampling.bucket_weights.len()
            || self.sampling.interval_buckets.is_empty()
        {
            return Err(GenError::InvalidConfig("bucket table malformed".into()));
        }
        let g = &self.signal;
        if !(2.0..=4.0).contains(&g.path_loss_exponent) || g.shadowing_std_db < 0.0 {
            return Err(GenError::InvalidConfig("signal model out of range".into()));
        }
        Ok(())
    }

    /// The small mixed-mode world used throughout the evaluation harness.
    pub fn desk_small() -> Self {
        GenConfig::default()
    }
}

/// Counters describing one generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSummary {
    pub stations: usize,
    pub trajectories: usize,
    pub samples: usize,
    pub no_coverage_dropped: usize,
    pub mode_counts: [usize; 3],
}

/// Exact-quota mode assignment for all schedule segments, shuffled.
fn segment_modes(total: usize, mix: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<Mode> {
    let mut counts = [0usize; 3];
    let mut acc = 0usize;
    for i in 0..2 {
        counts[i] = (mix[i] * total as f64).round() as usize;
        acc += counts[i];
    }
    counts[2] = total.saturating_sub(acc);
    let mut modes = Vec::with_capacity(total);
    for (i, &c) in counts.iter().enumerate() {
        modes.extend(std::iter::repeat_n(Mode::ALL[i], c));
    }
    modes.truncate(total);
    modes.shuffle(rng);
    modes
}

/// Generate all samples in memory (world, per-device trajectories, radio
/// synthesis). Used by both the CSV writer and the in-process harness.
pub fn generate_samples(config: &GenConfig) -> Result<(World, Vec<MRSample>, GenSummary), GenError> {
    config.validate()?;
    let world = build_world(&config.world, config.seed);

    let per_traj = (config.mobility.duration_s / config.mobility.segment_s).ceil().max(1.0) as usize;
    let total_segments = per_traj * config.mobility.trajectories;
    let mut mode_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x5851_f42d).wrapping_add(1));
    let all_modes = segment_modes(total_segments, config.mobility.mode_mix, &mut mode_rng);

    let gaps = GapSampler::new(&config.sampling)
        .map_err(GenError::InvalidConfig)?;

    let mut samples = Vec::new();
    let mut dropped = 0usize;
    let mut mode_counts = [0usize; 3];
    for i in 0..config.mobility.trajectories {
        let schedule = ModeSchedule::from_segments(
            &all_modes[i * per_traj..(i + 1) * per_traj],
            config.mobility.segment_s,
        );
        let traj_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let track = simulate_trajectory(
            &world,
            &schedule,
            &gaps,
            &config.mobility.speed_ranges,
            config.mobility.constant_speed,
            traj_seed,
        );
        let imsi = format!("SIM{i:05}");
        let (mut mr, no_cov) = synthesize_mr(
            &world,
            &track,
            &config.signal,
            &imsi,
            traj_seed.wrapping_add(0x9e37),
        );
        dropped += no_cov;
        for s in &mr {
            if let Some(m) = s.mode_label {
                mode_counts[m.index()] += 1;
            }
        }
        samples.append(&mut mr);
    }

    let summary = GenSummary {
        stations: world.registry.len(),
        trajectories: config.mobility.trajectories,
        samples: samples.len(),
        no_coverage_dropped: dropped,
        mode_counts,
    };
    Ok((world, samples, summary))
}

/// Generate and write `mr.csv`, `stations.csv`, and `manifest.json` into
/// `out_dir`. Byte-identical output for identical (config, seed).
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<GenSummary, GenError> {
    let (world, samples, summary) = generate_samples(config)?;
    std::fs::create_dir_all(out_dir)?;
    write_mr_csv(&out_dir.join(crate::dataset::MR_FILE), &samples)?;
    write_station_registry(&out_dir.join(crate::dataset::REGISTRY_FILE), &world.registry)?;
    let manifest = serde_json::json!({
        "kind": "synthetic-mr-dataset",
        "config": config,
        "summary": summary,
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        let mut cfg = GenConfig::default();
        cfg.mobility.trajectories = 20;
        cfg.mobility.duration_s = 120.0;
        cfg.mobility.segment_s = 60.0;
        cfg.world.station_density_per_km2 = 15.0;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn mode_proportions_track_the_mix() {
        let mut cfg = small_config();
        cfg.mobility.trajectories = 120;
        cfg.mobility.duration_s = 240.0;
        let (_, _, summary) = generate_samples(&cfg).unwrap();
        let total: usize = summary.mode_counts.iter().sum();
        assert!(total > 0);
        for (i, &count) in summary.mode_counts.iter().enumerate() {
            let share = count as f64 / total as f64;
            let target = cfg.mobility.mode_mix[i];
            assert!(
                (share - target).abs() < 0.02,
                "mode {i}: share {share:.3} vs target {target:.3}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_csv_is_byte_identical() {
        let cfg = small_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, dir_a.path()).unwrap();
        generate_dataset(&cfg, dir_b.path()).unwrap();
        for file in ["mr.csv", "stations.csv"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn different_seed_changes_the_data() {
        let mut cfg = small_config();
        let (_, samples_a, _) = generate_samples(&cfg).unwrap();
        cfg.seed = 12;
        let (_, samples_b, _) = generate_samples(&cfg).unwrap();
        assert_ne!(samples_a.len(), 0);
        let a0 = samples_a[0].position_label.unwrap();
        let b0 = samples_b[0].position_label.unwrap();
        assert!(a0.lat != b0.lat || a0.lon != b0.lon);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config();
        cfg.world.station_density_per_km2 = 0.0;
        assert!(matches!(generate_samples(&cfg), Err(GenError::InvalidConfig(_))));
        let mut cfg = small_config();
        cfg.mobility.mode_mix = [0.5, 0.5, 0.5];
        assert!(matches!(generate_samples(&cfg), Err(GenError::InvalidConfig(_))));
    }

    #[test]
    fn segment_mode_quota_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let modes = segment_modes(1000, [0.601, 0.252, 0.147], &mut rng);
        let walking = modes.iter().filter(|&&m| m == Mode::Walking).count();
        let cycling = modes.iter().filter(|&&m| m == Mode::Cycling).count();
        assert_eq!(walking, 601);
        assert_eq!(cycling, 252);
        assert_eq!(modes.len(), 1000);
    }
}
