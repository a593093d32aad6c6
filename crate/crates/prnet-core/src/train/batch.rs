//! Mini-batch padding, the label mask matrix, and fold splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::prnet::SequenceInput;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("fold {fold} out of range for {folds} folds")]
    FoldOutOfRange { fold: usize, folds: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
}

/// Per-step 0/1 indicators per sequence: an entry is 0 exactly where the
/// position label is the [-1, -1] padding sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub rows: Vec<Vec<bool>>,
}

impl MaskMatrix {
    pub fn count(&self) -> usize {
        self.rows.iter().map(|r| r.iter().filter(|&&m| m).count()).sum()
    }
}

/// One sequence padded to the batch length. Steps at `real_len..` are
/// structural padding with zero features and sentinel labels.
#[derive(Debug, Clone)]
pub struct PaddedSequence {
    pub input: SequenceInput,
    pub real_len: usize,
}

/// Padded sequences plus the mask matrix reconstructed from the labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub sequences: Vec<PaddedSequence>,
    pub max_len: usize,
    pub mask: MaskMatrix,
}

impl Batch {
    /// Labeled steps across the whole batch.
    pub fn labeled_steps(&self) -> usize {
        self.mask.count()
    }
}

/// Pad every sequence to the batch maximum: zero features, zero gaps, the
/// last subsequence index, [-1, -1] position labels, and -1 mode labels.
pub fn pad_batch(inputs: &[SequenceInput]) -> Batch {
    assert!(!inputs.is_empty(), "cannot pad an empty batch");
    let max_len = inputs.iter().map(|i| i.len()).max().unwrap();
    let mut sequences = Vec::with_capacity(inputs.len());
    for input in inputs {
        let real_len = input.len();
        assert!(real_len > 0, "cannot pad an empty sequence");
        let mut padded = input.clone();
        let feat_shape = padded.features[0].shape().to_vec();
        let last_subseq = *padded.subseq_index.last().unwrap();
        for _ in real_len..max_len {
            padded.features.push(Tensor::zeros(&feat_shape));
            padded.delta_t.push(0.0);
            padded.subseq_index.push(last_subseq);
            padded.pos_labels.push([-1.0, -1.0]);
            padded.mode_labels.push(-1);
        }
        sequences.push(PaddedSequence { input: padded, real_len });
    }
    let rows = sequences.iter().map(|s| s.input.label_mask()).collect();
    Batch { sequences, max_len, mask: MaskMatrix { rows } }
}

/// Disjoint k-fold split over sequence indices: the shuffled order is cut
/// into k balanced slices and `fold` is the test slice.
pub fn kfold_indices(
    n: usize,
    folds: usize,
    fold: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    if folds < 2 {
        return Err(SplitError::TooFewFolds(folds));
    }
    if fold >= folds {
        return Err(SplitError::FoldOutOfRange { fold, folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let lo = fold * n / folds;
    let hi = (fold + 1) * n / folds;
    let test: Vec<usize> = order[lo..hi].to_vec();
    let train: Vec<usize> =
        order.iter().copied().enumerate().filter(|(i, _)| *i < lo || *i >= hi).map(|(_, v)| v).collect();
    Ok((train, test))
}

/// Literal holdout split with the given test fraction.
pub fn holdout_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = ((n as f64) * test_fraction).round() as usize;
    let test = order[..cut].to_vec();
    let train = order[cut..].to_vec();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize) -> SequenceInput {
        SequenceInput {
            features: vec![Tensor::zeros(&[2, 2]); len],
            delta_t: (0..len).map(|i| if i == 0 { 0.0 } else { 3.0 }).collect(),
            subseq_index: vec![0; len],
            pos_labels: vec![[0.5, 0.5]; len],
            mode_labels: vec![0; len],
        }
    }

    #[test]
    fn pads_to_longest_and_masks_padding() {
        let batch = pad_batch(&[seq(3), seq(5)]);
        assert_eq!(batch.max_len, 5);
        assert_eq!(batch.mask.rows[0], vec![true, true, true, false, false]);
        assert_eq!(batch.mask.rows[1], vec![true; 5]);
        assert_eq!(batch.sequences[0].input.len(), 5);
        assert_eq!(batch.sequences[0].real_len, 3);
        assert_eq!(batch.labeled_steps(), 8);
    }

    #[test]
    fn equal_lengths_need_no_padding() {
        let batch = pad_batch(&[seq(4), seq(4)]);
        assert!(batch.mask.rows.iter().all(|r| r.iter().all(|&m| m)));
    }

    #[test]
    fn mask_matches_label_rule_on_random_batches() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.random_range(1..6);
            let inputs: Vec<SequenceInput> = (0..m)
                .map(|_| {
                    let mut s = seq(rng.random_range(1..9));
                    // Some real steps may be unlabeled too.
                    for t in 0..s.len() {
                        if rng.random_bool(0.2) {
                            s.pos_labels[t] = [-1.0, -1.0];
                        }
                    }
                    s
                })
                .collect();
            let batch = pad_batch(&inputs);
            for row in batch.sequences.iter().zip(&batch.mask.rows) {
                let (padded, mask) = row;
                for t in 0..batch.max_len {
                    let expect = padded.input.pos_labels[t] != [-1.0, -1.0];
                    assert_eq!(mask[t], expect);
                }
            }
        }
    }

    #[test]
    fn kfold_partitions_exactly() {
        let n = 100;
        let folds = 5;
        let mut seen = vec![0usize; n];
        for fold in 0..folds {
            let (train, test) = kfold_indices(n, folds, fold, 9).unwrap();
            assert_eq!(test.len(), 20);
            assert_eq!(train.len(), 80);
            for &i in &test {
                seen[i] += 1;
            }
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        // Every sequence lands in exactly one test fold.
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn kfold_is_deterministic_per_seed() {
        let a = kfold_indices(57, 5, 2, 11).unwrap();
        let b = kfold_indices(57, 5, 2, 11).unwrap();
        assert_eq!(a, b);
        let c = kfold_indices(57, 5, 2, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fold_out_of_range_is_rejected() {
        assert_eq!(
            kfold_indices(10, 5, 5, 0).unwrap_err(),
            SplitError::FoldOutOfRange { fold: 5, folds: 5 }
        );
        assert_eq!(kfold_indices(10, 1, 0, 0).unwrap_err(), SplitError::TooFewFolds(1));
    }

    #[test]
    fn holdout_respects_fraction() {
        let (train, test) = holdout_indices(50, 0.2, 3);
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 40);
    }
}
