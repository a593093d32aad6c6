//! Handoff segmentation: serving-station runs with tau-merging, and
//! second-station subsequence splits.

use super::{MRSample, MRSequence, StationId};

/// Split a time-sorted single-device series into sequences of constant
/// serving station. Runs shorter than `tau` are merged forward into their
/// successor; a short final run merges backward into the previous output,
/// so every sequence ends up with at least `tau` samples unless the whole
/// series is one sequence.
pub fn segment_sequences(series: &[MRSample], tau: usize) -> Vec<MRSequence> {
    let tau = tau.max(1);
    if series.is_empty() {
        return Vec::new();
    }

    // Maximal runs of constant serving id: (start, len, id).
    let mut runs: Vec<(usize, usize, StationId)> = Vec::new();
    for (i, sample) in series.iter().enumerate() {
        let id = sample.serving_id();
        match runs.last_mut() {
            Some((_, len, last)) if *last == id => *len += 1,
            _ => runs.push((i, 1, id)),
        }
    }

    // Greedy forward merge: accumulate runs until the group reaches tau.
    // Groups are stored as (start, len, constituents).
    let mut groups: Vec<(usize, usize, Vec<(usize, StationId)>)> = Vec::new();
    let mut acc: Option<(usize, usize, Vec<(usize, StationId)>)> = None;
    for &(start, len, id) in &runs {
        match acc.as_mut() {
            None => acc = Some((start, len, vec![(len, id)])),
            Some((_, alen, constituents)) => {
                *alen += len;
                constituents.push((len, id));
            }
        }
        if acc.as_ref().unwrap().1 >= tau {
            groups.push(acc.take().unwrap());
        }
    }
    if let Some(tail) = acc {
        match groups.last_mut() {
            // Short trailing group merges backward.
            Some((_, glen, constituents)) => {
                *glen += tail.1;
                constituents.extend(tail.2);
            }
            None => groups.push(tail),
        }
    }

    groups
        .into_iter()
        .map(|(start, len, constituents)| {
            let serving_id = longest_constituent(&constituents);
            let samples = series[start..start + len].to_vec();
            let subsequence_bounds = split_subsequences(&samples);
            MRSequence { samples, serving_id, subsequence_bounds }
        })
        .collect()
}

fn longest_constituent(constituents: &[(usize, StationId)]) -> StationId {
    let mut best = constituents[0];
    for &c in &constituents[1..] {
        if c.0 > best.0 {
            best = c;
        }
    }
    best.1
}

/// Maximal runs of constant second-strongest station id, as inclusive
/// (start, end) bounds. Samples without a second station share a sentinel
/// "absent" key, so consecutive ones group together.
pub fn split_subsequences(samples: &[MRSample]) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    if samples.is_empty() {
        return bounds;
    }
    let mut start = 0;
    let mut key = samples[0].second_id();
    for (i, sample) in samples.iter().enumerate().skip(1) {
        let k = sample.second_id();
        if k != key {
            bounds.push((start, i - 1));
            start = i;
            key = k;
        }
    }
    bounds.push((start, samples.len() - 1));
    bounds
}
