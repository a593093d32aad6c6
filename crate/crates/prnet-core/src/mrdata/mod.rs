//! Measurement-record data model: samples, handoff-segmented sequences,
//! feature extraction, and per-mode speed statistics.

mod features;
mod parse;
mod segment;
mod speed;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

pub use features::{featurize, FeatureError, NormStats, FEATURES_PER_STATION};
pub use parse::{
    parse_mr_csv, read_station_registry, write_mr_csv, write_station_registry, ColumnSchema,
    DeviceSeries, ParseError, ParseReport,
};
pub use segment::{segment_sequences, split_subsequences};
pub use speed::{
    estimate_speed_distribution, SpeedDistribution, SpeedError, DEFAULT_BIN_WIDTH,
    DEFAULT_NUM_BINS,
};

/// Stations reported per measurement record.
pub const MAX_STATIONS: usize = 7;

/// Transportation modes carried by labeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Walking,
    Cycling,
    Driving,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Walking, Mode::Cycling, Mode::Driving];

    pub fn index(self) -> usize {
        match self {
            Mode::Walking => 0,
            Mode::Cycling => 1,
            Mode::Driving => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Mode> {
        Mode::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Walking => "walking",
            Mode::Cycling => "cycling",
            Mode::Driving => "driving",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "walking" | "walk" | "0" => Some(Mode::Walking),
            "cycling" | "cycle" | "bike" | "1" => Some(Mode::Cycling),
            "driving" | "drive" | "car" | "2" => Some(Mode::Driving),
            _ => None,
        }
    }
}

/// (RNCID, CellID) pair jointly identifying a base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StationId {
    pub rncid: i64,
    pub cellid: i64,
}

impl StationId {
    pub fn new(rncid: i64, cellid: i64) -> Self {
        Self { rncid, cellid }
    }
}

/// One reported neighbouring base station inside a measurement record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationReading {
    pub id: StationId,
    /// Registry coordinate; `None` when the station is absent from the
    /// registry, in which case feature extraction treats the column as
    /// absent.
    pub position: Option<GeoPoint>,
    pub asu_level: f64,
    pub signal_level: f64,
    pub rssi: f64,
}

/// One measurement record: a timestamped set of up to
/// [`MAX_STATIONS`] station readings sorted by descending RSSI, the
/// serving station first, plus optional ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRSample {
    pub timestamp: i64,
    pub imsi: String,
    pub stations: Vec<StationReading>,
    pub mode_label: Option<Mode>,
    pub position_label: Option<GeoPoint>,
}

impl MRSample {
    pub fn serving_id(&self) -> StationId {
        self.stations[0].id
    }

    /// Literal second-strongest station id, the subsequence key. `None`
    /// when the sample reports a single station.
    pub fn second_id(&self) -> Option<StationId> {
        self.stations.get(1).map(|r| r.id)
    }
}

/// A handoff-delimited run of samples, possibly tau-merged, with its
/// subsequence partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRSequence {
    pub samples: Vec<MRSample>,
    /// Id of the longest constituent serving run (the run itself when no
    /// merge happened).
    pub serving_id: StationId,
    /// Inclusive (start, end) index pairs partitioning `samples` into runs
    /// of constant second-strongest station.
    pub subsequence_bounds: Vec<(usize, usize)>,
}

impl MRSequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subsequence index of every sample, derived from the bounds.
    pub fn subsequence_index(&self) -> Vec<usize> {
        let mut out = vec![0; self.samples.len()];
        for (i, &(s, e)) in self.subsequence_bounds.iter().enumerate() {
            for slot in out.iter_mut().take(e + 1).skip(s) {
                *slot = i;
            }
        }
        out
    }
}

/// Station id -> coordinate map loaded from the registry CSV.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StationRegistry {
    positions: HashMap<StationId, GeoPoint>,
}

impl StationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: StationId, pos: GeoPoint) {
        self.positions.insert(id, pos);
    }

    pub fn get(&self, id: StationId) -> Option<GeoPoint> {
        self.positions.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StationId, GeoPoint)> + '_ {
        self.positions.iter().map(|(k, v)| (*k, *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = StationId> + '_ {
        self.positions.keys().copied()
    }
}
