//! Per-mode empirical speed distributions feeding the speed-constraint
//! loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MRSequence, Mode};
use crate::autodiff::LookupTable;
use crate::geo::Projection;

pub const DEFAULT_BIN_WIDTH: f64 = 0.5;
pub const DEFAULT_NUM_BINS: usize = 60;

#[derive(Debug, Error)]
pub enum SpeedError {
    #[error("fewer than 2 usable labeled pairs for mode {0:?}")]
    InsufficientData(Mode),
}

/// Histogram over ground-truth speeds of one transportation mode,
/// normalized to sum 1. Speeds past the last bin accumulate there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedDistribution {
    pub mode: Mode,
    pub bin_width: f64,
    pub probabilities: Vec<f64>,
}

impl SpeedDistribution {
    pub fn from_speeds(mode: Mode, bin_width: f64, num_bins: usize, speeds: &[f64]) -> Self {
        assert!(bin_width > 0.0 && num_bins > 0);
        let mut counts = vec![0.0; num_bins];
        for &v in speeds {
            let idx = ((v.max(0.0) / bin_width) as usize).min(num_bins - 1);
            counts[idx] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        if total > 0.0 {
            for c in counts.iter_mut() {
                *c /= total;
            }
        }
        Self { mode, bin_width, probabilities: counts }
    }

    /// All-zero distribution: every lookup returns probability 0, so the
    /// speed term contributes -log(1) = 0.
    pub fn empty(mode: Mode) -> Self {
        Self {
            mode,
            bin_width: DEFAULT_BIN_WIDTH,
            probabilities: vec![0.0; DEFAULT_NUM_BINS],
        }
    }

    /// Histogram value at a speed; always in [0, 1].
    pub fn lookup(&self, speed: f64) -> f64 {
        let idx =
            ((speed.max(0.0) / self.bin_width) as usize).min(self.probabilities.len() - 1);
        self.probabilities[idx]
    }

    /// Table form used by the differentiable tape lookup.
    pub fn table(&self, interpolate: bool) -> LookupTable {
        LookupTable {
            bin_width: self.bin_width,
            values: self.probabilities.clone(),
            interpolate,
        }
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// Estimate the speed distribution of `mode` from ground-truth consecutive
/// positions. A pair contributes when both samples carry position labels,
/// the later sample is labeled with `mode`, and timestamps strictly
/// increase.
pub fn estimate_speed_distribution(
    sequences: &[MRSequence],
    mode: Mode,
    bin_width: f64,
    num_bins: usize,
    projection: &Projection,
) -> Result<SpeedDistribution, SpeedError> {
    let mut speeds = Vec::new();
    for seq in sequences {
        for pair in seq.samples.windows(2) {
            let (prev, cur) = (&pair[0], &pair[1]);
            if cur.mode_label != Some(mode) {
                continue;
            }
            let (Some(p0), Some(p1)) = (prev.position_label, cur.position_label) else {
                continue;
            };
            let dt = (cur.timestamp - prev.timestamp) as f64;
            if dt <= 0.0 {
                continue;
            }
            speeds.push(projection.distance_m(p0, p1) / dt);
        }
    }
    if speeds.len() < 2 {
        return Err(SpeedError::InsufficientData(mode));
    }
    Ok(SpeedDistribution::from_speeds(mode, bin_width, num_bins, &speeds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_speeds_form_a_point_mass() {
        let d = SpeedDistribution::from_speeds(Mode::Walking, 0.5, 10, &[1.0; 25]);
        assert_eq!(d.probabilities[2], 1.0);
        assert!((d.total() - 1.0).abs() < 1e-9);
        assert_eq!(d.lookup(1.2), 1.0);
        assert_eq!(d.lookup(9.0), 0.0);
    }

    #[test]
    fn uniform_draws_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let speeds: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..10.0)).collect();
        let d = SpeedDistribution::from_speeds(Mode::Driving, 1.0, 10, &speeds);
        for (i, &p) in d.probabilities.iter().enumerate() {
            assert!((p - 0.1).abs() < 0.02, "bin {i} = {p}");
        }
        assert!((d.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overflow_lands_in_last_bin() {
        let d = SpeedDistribution::from_speeds(Mode::Driving, 1.0, 4, &[0.5, 100.0]);
        assert_eq!(d.probabilities[0], 0.5);
        assert_eq!(d.probabilities[3], 0.5);
        assert_eq!(d.lookup(1e9), 0.5);
    }

    #[test]
    fn lookups_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let speeds: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..30.0)).collect();
        let d = SpeedDistribution::from_speeds(Mode::Cycling, 0.5, 60, &speeds);
        for _ in 0..1000 {
            let v = rng.random_range(0.0..100.0);
            let p = d.lookup(v);
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
