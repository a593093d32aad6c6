//! Radio synthesis: log-distance path loss with Gaussian shadowing, top-7
//! station selection, and monotone AsuLevel / SignalLevel derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mrdata::{MRSample, StationReading, MAX_STATIONS};

use super::{TrackPoint, World};

fn default_p0() -> f64 {
    -30.0
}
fn default_gamma() -> f64 {
    2.8
}
fn default_shadow() -> f64 {
    4.0
}
fn default_range() -> f64 {
    900.0
}
fn default_hysteresis() -> f64 {
    4.0
}
fn default_corr() -> f64 {
    80.0
}

/// Log-distance path-loss model: RSSI = P0 - 10 gamma log10(d) + N(0, s^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignalModel {
    /// Reference power at 1 m, dBm.
    #[serde(default = "default_p0")]
    pub p0_dbm: f64,
    #[serde(default = "default_gamma")]
    pub path_loss_exponent: f64,
    #[serde(default = "default_shadow")]
    pub shadowing_std_db: f64,
    /// Stations farther than this are invisible.
    #[serde(default = "default_range")]
    pub max_range_m: f64,
    /// A new station must beat the current serving station by this many
    /// dB before a handoff occurs.
    #[serde(default = "default_hysteresis")]
    pub handoff_hysteresis_db: f64,
    /// Shadowing decorrelation distance in meters; the per-station fade
    /// evolves as a distance-driven AR(1) process along the trajectory.
    #[serde(default = "default_corr")]
    pub shadow_correlation_m: f64,
}

impl Default for SignalModel {
    fn default() -> Self {
        Self {
            p0_dbm: default_p0(),
            path_loss_exponent: default_gamma(),
            shadowing_std_db: default_shadow(),
            max_range_m: default_range(),
            handoff_hysteresis_db: default_hysteresis(),
            shadow_correlation_m: default_corr(),
        }
    }
}

impl SignalModel {
    /// Deterministic part of the received power at distance `d` meters.
    pub fn mean_rssi(&self, d: f64) -> f64 {
        self.p0_dbm - 10.0 * self.path_loss_exponent * d.max(1.0).log10()
    }
}

/// GSM-style ASU from dBm: (rssi + 113) / 2, clamped to [0, 31].
fn asu_level(rssi: f64) -> f64 {
    (((rssi + 113.0) / 2.0).round()).clamp(0.0, 31.0)
}

/// Coarse 0..4 quality bucket, monotone in RSSI.
fn signal_level(rssi: f64) -> f64 {
    if rssi >= -75.0 {
        4.0
    } else if rssi >= -85.0 {
        3.0
    } else if rssi >= -95.0 {
        2.0
    } else if rssi >= -105.0 {
        1.0
    } else {
        0.0
    }
}

/// Synthesize MR samples along a trajectory: per position, every station
/// within range gets a shadowed RSSI draw; the 7 strongest readings are
/// kept in descending order (ties to the lower station id) and the
/// ground-truth position and mode are attached as labels. Positions with
/// zero stations in range are dropped and counted.
pub fn synthesize_mr(
    world: &World,
    track: &[TrackPoint],
    signal: &SignalModel,
    imsi: &str,
    seed: u64,
) -> (Vec<MRSample>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = if signal.shadowing_std_db > 0.0 {
        Some(Normal::new(0.0, signal.shadowing_std_db).expect("valid std"))
    } else {
        None
    };
    let mut out = Vec::with_capacity(track.len());
    let mut no_coverage = 0usize;
    let mut serving: Option<crate::mrdata::StationId> = None;
    // Per-station shadowing state: spatially correlated fading evolving
    // with distance moved (AR(1) with rho = exp(-d / d_corr)).
    let mut fade: Vec<f64> = match shadow {
        Some(n) => world.stations.iter().map(|_| n.sample(&mut rng)).collect(),
        None => vec![0.0; world.stations.len()],
    };
    let mut prev_xy: Option<[f64; 2]> = None;

    for point in track {
        // Track points are generated in world meters; recover them for
        // distance computations.
        let unit = world.bbox.normalize(point.position);
        let xy = [unit[1] * world.extent_m[0], unit[0] * world.extent_m[1]];

        if let (Some(n), Some(prev)) = (shadow, prev_xy) {
            let moved = ((xy[0] - prev[0]).powi(2) + (xy[1] - prev[1]).powi(2)).sqrt();
            let rho = (-moved / signal.shadow_correlation_m.max(1e-6)).exp();
            let fresh = (1.0 - rho * rho).sqrt();
            for f in fade.iter_mut() {
                *f = rho * *f + fresh * n.sample(&mut rng);
            }
        }
        prev_xy = Some(xy);

        let mut readings: Vec<StationReading> = Vec::new();
        for (k, (id, sxy)) in world.stations.iter().enumerate() {
            let d = ((xy[0] - sxy[0]).powi(2) + (xy[1] - sxy[1]).powi(2)).sqrt();
            if d > signal.max_range_m {
                continue;
            }
            let rssi = (signal.mean_rssi(d) + fade[k]).clamp(-120.0, -30.0);
            readings.push(StationReading {
                id: *id,
                position: world.registry.get(*id),
                asu_level: asu_level(rssi),
                signal_level: signal_level(rssi),
                rssi,
            });
        }
        if readings.is_empty() {
            no_coverage += 1;
            continue;
        }
        readings.sort_by(|a, b| {
            b.rssi.partial_cmp(&a.rssi).unwrap().then_with(|| a.id.cmp(&b.id))
        });
        // Handoff hysteresis: keep the previous serving station in front
        // unless a rival beats it by the configured margin.
        if let Some(prev) = serving {
            if let Some(pos_idx) = readings.iter().position(|r| r.id == prev) {
                if pos_idx > 0
                    && readings[0].rssi < readings[pos_idx].rssi + signal.handoff_hysteresis_db
                {
                    let keep = readings.remove(pos_idx);
                    readings.insert(0, keep);
                }
            }
        }
        serving = Some(readings[0].id);
        readings.truncate(MAX_STATIONS);
        out.push(MRSample {
            timestamp: point.timestamp,
            imsi: imsi.to_string(),
            stations: readings,
            mode_label: Some(point.mode),
            position_label: Some(point.position),
        });
    }
    (out, no_coverage)
}
