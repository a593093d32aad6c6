//! Dataset plumbing: loading MR + registry CSVs, segmentation, and the
//! train-split-only featurization pipeline.

use std::path::Path;

use thiserror::Error;

use crate::geo::{BoundingBox, GeoPoint, Projection};
use crate::mrdata::{
    estimate_speed_distribution, featurize, parse_mr_csv, read_station_registry,
    segment_sequences, ColumnSchema, MRSequence, Mode, NormStats, ParseError, ParseReport,
    SpeedDistribution, StationRegistry, DEFAULT_BIN_WIDTH, DEFAULT_NUM_BINS,
};
use crate::prnet::SequenceInput;

pub const MR_FILE: &str = "mr.csv";
pub const REGISTRY_FILE: &str = "stations.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("dataset has no sequences")]
    Empty,
    #[error("no labeled positions to fit a bounding box")]
    NoLabels,
}

/// Segmented MR dataset plus its station registry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<MRSequence>,
    pub registry: StationRegistry,
    pub parse_report: ParseReport,
}

impl Dataset {
    /// Read `mr.csv` and `stations.csv` from a dataset directory and
    /// segment each device series with the given tau.
    pub fn load(dir: &Path, tau: usize) -> Result<Self, DatasetError> {
        let registry = read_station_registry(&dir.join(REGISTRY_FILE))?;
        let (series, parse_report) =
            parse_mr_csv(&dir.join(MR_FILE), &ColumnSchema::default(), &registry)?;
        let mut sequences = Vec::new();
        for device in &series {
            sequences.extend(segment_sequences(&device.samples, tau));
        }
        if sequences.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self { sequences, registry, parse_report })
    }

    pub fn from_sequences(sequences: Vec<MRSequence>, registry: StationRegistry) -> Self {
        Self { sequences, registry, parse_report: ParseReport::default() }
    }

    /// Box strictly containing every labeled position.
    pub fn label_bbox(&self) -> Option<BoundingBox> {
        let points: Vec<GeoPoint> = self
            .sequences
            .iter()
            .flat_map(|s| s.samples.iter().filter_map(|x| x.position_label))
            .collect();
        BoundingBox::enclosing(points, 1e-3)
    }
}

/// Featurized sequences ready for the model, together with the fitted
/// normalization state and per-mode speed distributions (training-split
/// statistics only).
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Vec<SequenceInput>,
    pub test: Vec<SequenceInput>,
    pub stats: NormStats,
    pub speed_dists: Vec<SpeedDistribution>,
    /// Modes that had too little training data for a distribution and fell
    /// back to the all-zero one.
    pub speed_fallback: Vec<Mode>,
}

/// Convert one segmented sequence into model input under fixed stats.
pub fn sequence_to_input(seq: &MRSequence, stats: &NormStats) -> SequenceInput {
    let subseq_index = seq.subsequence_index();
    let mut features = Vec::with_capacity(seq.len());
    let mut delta_t = Vec::with_capacity(seq.len());
    let mut pos_labels = Vec::with_capacity(seq.len());
    let mut mode_labels = Vec::with_capacity(seq.len());
    for (t, sample) in seq.samples.iter().enumerate() {
        let (matrix, _unknown) = featurize(sample, stats);
        features.push(matrix);
        let gap = if t == 0 || subseq_index[t] != subseq_index[t - 1] {
            0.0
        } else {
            (sample.timestamp - seq.samples[t - 1].timestamp) as f64
        };
        delta_t.push(gap);
        pos_labels.push(match sample.position_label {
            Some(p) => stats.bbox.normalize(p),
            None => [-1.0, -1.0],
        });
        mode_labels.push(sample.mode_label.map(|m| m.index() as i64).unwrap_or(-1));
    }
    SequenceInput { features, delta_t, subseq_index, pos_labels, mode_labels }
}

/// Fit stats on the training sequences, then featurize both splits and
/// estimate the per-mode speed distributions from the training split.
pub fn prepare_split(
    train_seqs: &[&MRSequence],
    test_seqs: &[&MRSequence],
) -> Result<PreparedSplit, DatasetError> {
    let points: Vec<GeoPoint> = train_seqs
        .iter()
        .flat_map(|s| s.samples.iter().filter_map(|x| x.position_label))
        .collect();
    let bbox = BoundingBox::enclosing(points, 1e-3).ok_or(DatasetError::NoLabels)?;
    let stats = NormStats::fit(
        train_seqs.iter().flat_map(|s| s.samples.iter()),
        bbox,
    )
    .map_err(|_| DatasetError::NoLabels)?;

    let projection = Projection::new(bbox.center());
    let owned_train: Vec<MRSequence> = train_seqs.iter().map(|s| (*s).clone()).collect();
    let mut speed_dists = Vec::new();
    let mut speed_fallback = Vec::new();
    for mode in Mode::ALL {
        match estimate_speed_distribution(
            &owned_train,
            mode,
            DEFAULT_BIN_WIDTH,
            DEFAULT_NUM_BINS,
            &projection,
        ) {
            Ok(d) => speed_dists.push(d),
            Err(_) => {
                speed_fallback.push(mode);
                speed_dists.push(SpeedDistribution::empty(mode));
            }
        }
    }

    let train = train_seqs.iter().map(|s| sequence_to_input(s, &stats)).collect();
    let test = test_seqs.iter().map(|s| sequence_to_input(s, &stats)).collect();
    Ok(PreparedSplit { train, test, stats, speed_dists, speed_fallback })
}
