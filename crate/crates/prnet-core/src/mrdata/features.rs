//! Feature extraction: each sample becomes an F x N matrix, one column per
//! station slot, z-normalized where the feature is continuous.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MRSample, MAX_STATIONS};
use crate::autodiff::Tensor;
use crate::geo::BoundingBox;

/// Features per station column: normalized latitude, normalized longitude,
/// two id hash buckets, and z-scored AsuLevel / SignalLevel / RSSI.
pub const FEATURES_PER_STATION: usize = 7;

const HASH_BUCKETS: u64 = 64;
const Z_FEATURES: [usize; 3] = [4, 5, 6];
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no labeled training samples to fit normalization statistics")]
    NoTrainingData,
}

/// Normalization state fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Per-feature means; identity (0) for features that are already in
    /// [0, 1] by construction.
    pub mean: Vec<f64>,
    /// Per-feature standard deviations, floored at 1e-8; identity (1) for
    /// non-z features.
    pub std: Vec<f64>,
    /// World box enclosing every labeled training position.
    pub bbox: BoundingBox,
}

impl NormStats {
    /// Fit z-statistics for the continuous signal features over every
    /// reading in the training samples. The bounding box is supplied by the
    /// caller (it must enclose the training labels).
    pub fn fit<'a>(
        samples: impl IntoIterator<Item = &'a MRSample>,
        bbox: BoundingBox,
    ) -> Result<Self, FeatureError> {
        let mut sums = [0.0; 3];
        let mut sq_sums = [0.0; 3];
        let mut count = 0usize;
        for sample in samples {
            for reading in &sample.stations {
                let vals = [reading.asu_level, reading.signal_level, reading.rssi];
                for (i, v) in vals.iter().enumerate() {
                    sums[i] += v;
                    sq_sums[i] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(FeatureError::NoTrainingData);
        }
        let mut mean = vec![0.0; FEATURES_PER_STATION];
        let mut std = vec![1.0; FEATURES_PER_STATION];
        for (k, &feat) in Z_FEATURES.iter().enumerate() {
            let m = sums[k] / count as f64;
            let var = (sq_sums[k] / count as f64 - m * m).max(0.0);
            mean[feat] = m;
            std[feat] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std, bbox })
    }

    /// Identity statistics over a fixed box; used by tests and degenerate
    /// pipelines.
    pub fn identity(bbox: BoundingBox) -> Self {
        Self {
            mean: vec![0.0; FEATURES_PER_STATION],
            std: vec![1.0; FEATURES_PER_STATION],
            bbox,
        }
    }
}

fn fnv1a(x: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in x.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket_feature(id: i64) -> f64 {
    (fnv1a(id as u64) % HASH_BUCKETS) as f64 / (HASH_BUCKETS - 1) as f64
}

/// Build the F x N feature matrix for one sample. Column n holds the
/// features of the n-th strongest station; columns for absent stations
/// (including stations missing from the registry) are all zero. Returns
/// the matrix and the number of columns dropped because the station was
/// unknown to the registry.
pub fn featurize(sample: &MRSample, stats: &NormStats) -> (Tensor, usize) {
    let mut data = vec![0.0; FEATURES_PER_STATION * MAX_STATIONS];
    let mut unknown = 0usize;
    for (n, reading) in sample.stations.iter().take(MAX_STATIONS).enumerate() {
        let Some(pos) = reading.position else {
            unknown += 1;
            continue;
        };
        let unit = stats.bbox.normalize(pos);
        let raw = [
            unit[0],
            unit[1],
            bucket_feature(reading.id.rncid),
            bucket_feature(reading.id.cellid),
            reading.asu_level,
            reading.signal_level,
            reading.rssi,
        ];
        for (f, &v) in raw.iter().enumerate() {
            data[f * MAX_STATIONS + n] = (v - stats.mean[f]) / stats.std[f];
        }
    }
    (Tensor::matrix(FEATURES_PER_STATION, MAX_STATIONS, data), unknown)
}
