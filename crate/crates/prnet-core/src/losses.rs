//! Task losses on the tape: masked position regression, masked mode
//! cross-entropy, the speed-constraint term, and the uncertainty-weighted
//! joint loss.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LookupTable, NodeId, ShapeError, Tape, Tensor};
use crate::mrdata::SpeedDistribution;
use crate::prnet::SequenceInput;

/// Learnable log-variances of the two task likelihoods plus the fixed
/// speed-loss weight. With s = log sigma^2 the effective task weight is
/// exp(-s)/2 and the regularizer log sigma contributes s/2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub s1: f64,
    pub s2: f64,
    pub alpha: f64,
}

impl UncertaintyParams {
    pub fn unit(alpha: f64) -> Self {
        Self { s1: 0.0, s2: 0.0, alpha }
    }

    pub fn sigma1(&self) -> f64 {
        (self.s1 / 2.0).exp()
    }

    pub fn sigma2(&self) -> f64 {
        (self.s2 / 2.0).exp()
    }

    pub fn weight1(&self) -> f64 {
        (-self.s1).exp() / 2.0
    }

    pub fn weight2(&self) -> f64 {
        (-self.s2).exp() / 2.0
    }
}

/// How the three loss terms combine into the batch joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskWeighting {
    /// Learned homoscedastic-uncertainty weights with log-sigma
    /// regularizers, plus the fixed alpha on the speed term.
    Uncertainty { alpha: f64 },
    /// Frozen weights, no regularizer (covers the single-task and
    /// uniform-weight rows of the weighting study).
    Fixed { loc: f64, mode: f64, speed: f64 },
}

impl TaskWeighting {
    pub fn uniform() -> Self {
        TaskWeighting::Fixed { loc: 1.0, mode: 1.0, speed: 1.0 }
    }

    pub fn uses_uncertainty(&self) -> bool {
        matches!(self, TaskWeighting::Uncertainty { .. })
    }
}

/// Per-mode speed likelihood tables in mode-index order.
#[derive(Debug, Clone)]
pub struct SpeedLookup {
    tables: Vec<Arc<LookupTable>>,
}

impl SpeedLookup {
    pub fn new(dists: &[SpeedDistribution], interpolate: bool) -> Self {
        let mut tables: Vec<Option<Arc<LookupTable>>> = vec![None; dists.len()];
        for d in dists {
            let idx = d.mode.index();
            assert!(idx < tables.len(), "mode index outside table");
            tables[idx] = Some(Arc::new(d.table(interpolate)));
        }
        Self {
            tables: tables
                .into_iter()
                .map(|t| t.expect("one distribution per mode, in mode-index order"))
                .collect(),
        }
    }

    /// Zero-probability tables: the speed term vanishes everywhere.
    pub fn zero(num_modes: usize) -> Self {
        Self {
            tables: (0..num_modes)
                .map(|_| {
                    Arc::new(LookupTable { bin_width: 1.0, values: vec![0.0], interpolate: false })
                })
                .collect(),
        }
    }

    pub fn num_modes(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, mode_index: usize) -> Arc<LookupTable> {
        Arc::clone(&self.tables[mode_index])
    }

    /// Expected likelihood under a mode distribution, plain-value form.
    pub fn expected(&self, mode_probs: &[f64], speed: f64) -> f64 {
        mode_probs
            .iter()
            .zip(&self.tables)
            .map(|(m, t)| m * t.eval(speed).0)
            .sum()
    }
}

/// Scalar nodes for one sequence's loss sums plus contribution counters.
pub struct SequenceLosses {
    /// Sum over labeled steps of the unit-box position error norm.
    pub loc_sum: NodeId,
    /// Sum over labeled steps of the mode negative log-likelihood.
    pub mode_sum: NodeId,
    /// Sum over contributing pairs of -log(1 + P(v_hat)); always <= 0.
    pub speed_sum: NodeId,
    /// Steps with a position label (the Eq.-15 mask count).
    pub labeled_steps: usize,
    /// Steps contributing to the mode loss.
    pub mode_steps: usize,
    /// Consecutive same-subsequence labeled pairs contributing to the
    /// speed loss.
    pub speed_pairs: usize,
    /// Pairs skipped for a zero timestamp gap.
    pub zero_gap_pairs: usize,
}

fn sum_or_zero(tape: &mut Tape, parts: &[NodeId]) -> NodeId {
    if parts.is_empty() {
        tape.scalar(0.0)
    } else {
        let cat = tape.concat(parts);
        tape.sum_all(cat)
    }
}

/// Build the three masked loss sums for one sequence. `positions` and
/// `mode_probs` hold the model's per-step output nodes for the real steps;
/// labels, gaps, and the mask come from the input. `unit_scale_m` converts
/// unit-box displacements to meters for the speed estimate.
pub fn sequence_losses(
    tape: &mut Tape,
    positions: &[NodeId],
    mode_probs: &[NodeId],
    input: &SequenceInput,
    unit_scale_m: [f64; 2],
    speed: &SpeedLookup,
) -> Result<SequenceLosses, ShapeError> {
    assert_eq!(positions.len(), mode_probs.len());
    let real_len = positions.len();
    let mask = input.label_mask();

    // Position loss: masked Euclidean norms in unit-box coordinates.
    let mut loc_terms = Vec::new();
    for t in 0..real_len {
        if !mask[t] {
            continue;
        }
        let label = tape.constant(Tensor::vector(input.pos_labels[t].to_vec()));
        let diff = tape.sub(positions[t], label)?;
        let sq = tape.mul(diff, diff)?;
        let ss = tape.sum_all(sq);
        loc_terms.push(tape.sqrt_guarded(ss));
    }
    let labeled_steps = loc_terms.len();
    let loc_sum = sum_or_zero(tape, &loc_terms);

    // Mode loss: negative log-likelihood of the true class.
    let mut mode_terms = Vec::new();
    for t in 0..real_len {
        if !mask[t] || input.mode_labels[t] < 0 {
            continue;
        }
        let p = tape.pick(mode_probs[t], input.mode_labels[t] as usize);
        mode_terms.push(tape.log_guarded(p));
    }
    let mode_steps = mode_terms.len();
    let log_sum = sum_or_zero(tape, &mode_terms);
    let mode_sum = tape.scale(log_sum, -1.0);

    // Speed-constraint loss over consecutive labeled pairs inside one
    // subsequence.
    let scale_node = tape.constant(Tensor::vector(unit_scale_m.to_vec()));
    let mut speed_terms = Vec::new();
    let mut zero_gap_pairs = 0usize;
    for t in 1..real_len {
        if !mask[t] || !mask[t - 1] || input.subseq_index[t] != input.subseq_index[t - 1] {
            continue;
        }
        let dt = input.delta_t[t];
        if dt <= 0.0 {
            zero_gap_pairs += 1;
            continue;
        }
        let diff = tape.sub(positions[t], positions[t - 1])?;
        let meters = tape.mul(diff, scale_node)?;
        let sq = tape.mul(meters, meters)?;
        let ss = tape.sum_all(sq);
        let dist = tape.sqrt_guarded(ss);
        let v_hat = tape.scale(dist, 1.0 / dt);
        let per_mode: Vec<NodeId> = (0..speed.num_modes())
            .map(|c| tape.lookup(v_hat, speed.table(c)))
            .collect::<Result<_, _>>()?;
        let p_vec = tape.concat(&per_mode);
        let expected = tape.dot(mode_probs[t], p_vec)?;
        let one_plus = tape.add_scalar(expected, 1.0);
        let lg = tape.log_guarded(one_plus);
        speed_terms.push(lg);
    }
    let speed_pairs = speed_terms.len();
    let speed_pos = sum_or_zero(tape, &speed_terms);
    let speed_sum = tape.scale(speed_pos, -1.0);

    Ok(SequenceLosses {
        loc_sum,
        mode_sum,
        speed_sum,
        labeled_steps,
        mode_steps,
        speed_pairs,
        zero_gap_pairs,
    })
}

/// Combine scalar loss nodes into the joint objective. Under uncertainty
/// weighting `s1`/`s2` must be parameter leaves; the regularizer
/// (s1 + s2)/2 is included here.
pub fn joint_loss(
    tape: &mut Tape,
    l_loc: NodeId,
    l_mode: NodeId,
    l_speed: NodeId,
    s1: Option<NodeId>,
    s2: Option<NodeId>,
    weighting: TaskWeighting,
) -> Result<NodeId, ShapeError> {
    match weighting {
        TaskWeighting::Uncertainty { alpha } => {
            let s1 = s1.expect("uncertainty weighting needs s1");
            let s2 = s2.expect("uncertainty weighting needs s2");
            let neg_s1 = tape.scale(s1, -1.0);
            let w1 = tape.exp_guarded(neg_s1);
            let half_w1 = tape.scale(w1, 0.5);
            let neg_s2 = tape.scale(s2, -1.0);
            let w2 = tape.exp_guarded(neg_s2);
            let half_w2 = tape.scale(w2, 0.5);
            let term_loc = tape.mul(half_w1, l_loc)?;
            let term_mode = tape.mul(half_w2, l_mode)?;
            let term_speed = tape.scale(l_speed, alpha);
            let s_sum = tape.add(s1, s2)?;
            let reg = tape.scale(s_sum, 0.5);
            let a = tape.add(term_loc, term_mode)?;
            let b = tape.add(a, term_speed)?;
            tape.add(b, reg)
        }
        TaskWeighting::Fixed { loc, mode, speed } => {
            let term_loc = tape.scale(l_loc, loc);
            let term_mode = tape.scale(l_mode, mode);
            let term_speed = tape.scale(l_speed, speed);
            let a = tape.add(term_loc, term_mode)?;
            tape.add(a, term_speed)
        }
    }
}

/// Closed-form value of the uncertainty-weighted joint loss.
pub fn joint_loss_value(l_loc: f64, l_mode: f64, l_speed: f64, u: &UncertaintyParams) -> f64 {
    u.weight1() * l_loc + u.weight2() * l_mode + u.alpha * l_speed + (u.s1 + u.s2) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrdata::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_input(
        pos_labels: Vec<[f64; 2]>,
        mode_labels: Vec<i64>,
        delta_t: Vec<f64>,
        subseq_index: Vec<usize>,
    ) -> SequenceInput {
        let n = pos_labels.len();
        SequenceInput {
            features: vec![Tensor::zeros(&[1, 1]); n],
            delta_t,
            subseq_index,
            pos_labels,
            mode_labels,
        }
    }

    /// Fixed output nodes standing in for the model.
    fn output_nodes(
        tape: &mut Tape,
        positions: &[[f64; 2]],
        probs: &[Vec<f64>],
    ) -> (Vec<NodeId>, Vec<NodeId>) {
        let pos = positions
            .iter()
            .map(|p| tape.input(Tensor::vector(p.to_vec())))
            .collect();
        let m = probs.iter().map(|p| tape.input(Tensor::vector(p.clone()))).collect();
        (pos, m)
    }

    #[test]
    fn perfect_positions_cost_nothing() {
        let mut tape = Tape::new();
        let labels = vec![[0.3, 0.4], [0.6, 0.1]];
        let (pos, probs) =
            output_nodes(&mut tape, &labels, &[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]);
        let input = plain_input(labels.clone(), vec![0, 0], vec![0.0, 5.0], vec![0, 0]);
        let losses = sequence_losses(
            &mut tape,
            &pos,
            &probs,
            &input,
            [100.0, 100.0],
            &SpeedLookup::zero(3),
        )
        .unwrap();
        assert_eq!(tape.value(losses.loc_sum).item(), 0.0);
    }

    #[test]
    fn single_axis_distance() {
        let mut tape = Tape::new();
        let (pos, probs) = output_nodes(&mut tape, &[[0.5, 0.5]], &[vec![1.0, 0.0, 0.0]]);
        let input = plain_input(vec![[0.5, 0.9]], vec![0], vec![0.0], vec![0]);
        let losses =
            sequence_losses(&mut tape, &pos, &probs, &input, [1.0, 1.0], &SpeedLookup::zero(3))
                .unwrap();
        assert!((tape.value(losses.loc_sum).item() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn masked_steps_contribute_nothing_and_get_no_gradient() {
        let mut tape = Tape::new();
        let (pos, probs) = output_nodes(
            &mut tape,
            &[[0.2, 0.2], [0.9, 0.9]],
            &[vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1]],
        );
        // Second step carries the sentinel label: masked out.
        let input =
            plain_input(vec![[0.3, 0.3], [-1.0, -1.0]], vec![0, 1], vec![0.0, 3.0], vec![0, 0]);
        let losses = sequence_losses(
            &mut tape,
            &pos,
            &probs,
            &input,
            [10.0, 10.0],
            &SpeedLookup::zero(3),
        )
        .unwrap();
        assert_eq!(losses.labeled_steps, 1);
        assert_eq!(losses.mode_steps, 1);
        assert_eq!(losses.speed_pairs, 0);
        let l = tape.value(losses.loc_sum).item();
        let expected = ((0.1f64 * 0.1) * 2.0).sqrt();
        assert!((l - expected).abs() < 1e-12);
        // No gradient flows into the masked step's outputs.
        let m = tape.value(losses.mode_sum).item();
        assert!(m > 0.0);
        let joint = {
            let a = tape.add(losses.loc_sum, losses.mode_sum).unwrap();
            tape.add(a, losses.speed_sum).unwrap()
        };
        tape.backward(joint).unwrap();
        assert!(tape.grad(pos[1]).unwrap().iter().all(|&g| g == 0.0));
        assert!(tape.grad(probs[1]).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn certain_correct_mode_costs_nothing_uniform_costs_log3() {
        let mut tape = Tape::new();
        let (pos, probs) = output_nodes(
            &mut tape,
            &[[0.5, 0.5], [0.5, 0.5]],
            &[vec![1.0, 0.0, 0.0], vec![1.0 / 3.0; 3]],
        );
        let input =
            plain_input(vec![[0.5, 0.5], [0.5, 0.5]], vec![0, 2], vec![0.0, 1.0], vec![0, 1]);
        let losses =
            sequence_losses(&mut tape, &pos, &probs, &input, [1.0, 1.0], &SpeedLookup::zero(3))
                .unwrap();
        let total = tape.value(losses.mode_sum).item();
        assert!((total - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mode_loss_matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = rng.random_range(1..12);
            let mut positions = Vec::new();
            let mut probs = Vec::new();
            let mut labels = Vec::new();
            let mut modes = Vec::new();
            for _ in 0..n {
                positions.push([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                probs.push(raw.into_iter().map(|v| v / s).collect::<Vec<_>>());
                labels.push(if rng.random_bool(0.8) {
                    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
                } else {
                    [-1.0, -1.0]
                });
                modes.push(rng.random_range(-1..3));
            }
            let mut tape = Tape::new();
            let (pos, prob_nodes) = output_nodes(&mut tape, &positions, &probs);
            let input = plain_input(
                labels.clone(),
                modes.clone(),
                (0..n).map(|i| i as f64).collect(),
                vec![0; n],
            );
            let losses = sequence_losses(
                &mut tape,
                &pos,
                &prob_nodes,
                &input,
                [1.0, 1.0],
                &SpeedLookup::zero(3),
            )
            .unwrap();
            let mut oracle = 0.0;
            for t in 0..n {
                if labels[t] != [-1.0, -1.0] && modes[t] >= 0 {
                    oracle -= probs[t][modes[t] as usize].max(1e-12).ln();
                }
            }
            let got = tape.value(losses.mode_sum).item();
            assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        }
    }

    fn driving_lookup(p_at_4: f64) -> SpeedLookup {
        // Bin width 1: speed 4 m/s lands in bin 4.
        let mut values = vec![0.0; 10];
        values[4] = p_at_4;
        let mk = |mode: Mode, v: &Vec<f64>| SpeedDistribution {
            mode,
            bin_width: 1.0,
            probabilities: v.clone(),
        };
        let zero = vec![0.0; 10];
        SpeedLookup::new(
            &[mk(Mode::Walking, &zero), mk(Mode::Cycling, &zero), mk(Mode::Driving, &values)],
            false,
        )
    }

    /// Two steps 4 meters apart in 1 second with a driving prediction.
    fn speed_case(tape: &mut Tape, lookup: &SpeedLookup) -> SequenceLosses {
        let (pos, probs) = output_nodes(
            tape,
            &[[0.0, 0.0], [0.04, 0.0]],
            &[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
        );
        let input = plain_input(
            vec![[0.0, 0.0], [0.04, 0.0]],
            vec![2, 2],
            vec![0.0, 1.0],
            vec![0, 0],
        );
        sequence_losses(tape, &pos, &probs, &input, [100.0, 100.0], lookup).unwrap()
    }

    #[test]
    fn speed_term_matches_reported_likelihood() {
        let mut tape = Tape::new();
        let losses = speed_case(&mut tape, &driving_lookup(0.238));
        assert_eq!(losses.speed_pairs, 1);
        let got = tape.value(losses.speed_sum).item();
        let expected = -(1.0f64 + 0.238).ln();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected + 0.2135).abs() < 1e-4);
    }

    #[test]
    fn out_of_distribution_speed_is_free() {
        let mut tape = Tape::new();
        let losses = speed_case(&mut tape, &driving_lookup(0.0));
        assert_eq!(tape.value(losses.speed_sum).item(), 0.0);
    }

    #[test]
    fn speed_term_decreases_in_likelihood() {
        let term = |p: f64| {
            let mut tape = Tape::new();
            let losses = speed_case(&mut tape, &driving_lookup(p));
            tape.value(losses.speed_sum).item()
        };
        assert!(term(0.5) < term(0.1));
        let mut prev = term(0.0);
        for p in [0.1, 0.3, 0.7, 1.0] {
            let cur = term(p);
            assert!(cur < prev);
            prev = cur;
        }
        // Bounded within [-log 2, 0].
        assert!(term(1.0) >= -(2.0f64.ln()) - 1e-12);
    }

    #[test]
    fn zero_gap_pairs_are_skipped_and_counted() {
        let mut tape = Tape::new();
        let (pos, probs) = output_nodes(
            &mut tape,
            &[[0.1, 0.1], [0.2, 0.2]],
            &[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        );
        let input = plain_input(
            vec![[0.1, 0.1], [0.2, 0.2]],
            vec![0, 0],
            vec![0.0, 0.0],
            vec![0, 0],
        );
        let losses = sequence_losses(
            &mut tape,
            &pos,
            &probs,
            &input,
            [100.0, 100.0],
            &driving_lookup(0.5),
        )
        .unwrap();
        assert_eq!(losses.speed_pairs, 0);
        assert_eq!(losses.zero_gap_pairs, 1);
        assert_eq!(tape.value(losses.speed_sum).item(), 0.0);
    }

    #[test]
    fn unit_sigmas_halve_each_task() {
        let u = UncertaintyParams::unit(0.0);
        let j = joint_loss_value(3.0, 5.0, -0.25, &u);
        assert!((j - (0.5 * 3.0 + 0.5 * 5.0)).abs() < 1e-12);
        let z = joint_loss_value(0.0, 0.0, 0.0, &u);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn tape_joint_matches_value_form() {
        let mut tape = Tape::new();
        let l_loc = tape.scalar(1.7);
        let l_mode = tape.scalar(0.9);
        let l_speed = tape.scalar(-0.3);
        let s1 = tape.param("uncertainty.s1", Tensor::scalar(0.4));
        let s2 = tape.param("uncertainty.s2", Tensor::scalar(-1.1));
        let j = joint_loss(
            &mut tape,
            l_loc,
            l_mode,
            l_speed,
            Some(s1),
            Some(s2),
            TaskWeighting::Uncertainty { alpha: 0.05 },
        )
        .unwrap();
        let expected = joint_loss_value(
            1.7,
            0.9,
            -0.3,
            &UncertaintyParams { s1: 0.4, s2: -1.1, alpha: 0.05 },
        );
        assert!((tape.value(j).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn s1_gradient_matches_closed_form_and_finite_differences() {
        let l_loc = 2.31;
        let grad_at = |s1: f64| -> f64 {
            let mut tape = Tape::new();
            let loc = tape.scalar(l_loc);
            let mode = tape.scalar(0.0);
            let speed = tape.scalar(0.0);
            let s1_node = tape.param("uncertainty.s1", Tensor::scalar(s1));
            let s2_node = tape.param("uncertainty.s2", Tensor::scalar(0.0));
            let j = joint_loss(
                &mut tape,
                loc,
                mode,
                speed,
                Some(s1_node),
                Some(s2_node),
                TaskWeighting::Uncertainty { alpha: 0.0 },
            )
            .unwrap();
            tape.backward(j).unwrap();
            tape.grad(s1_node).unwrap().item()
        };
        let value_at = |s1: f64| {
            joint_loss_value(l_loc, 0.0, 0.0, &UncertaintyParams { s1, s2: 0.0, alpha: 0.0 })
        };
        for s1 in [-1.0f64, 0.0, 0.8] {
            let analytic = -(-s1).exp() / 2.0 * l_loc + 0.5;
            let ad = grad_at(s1);
            let h = 1e-6;
            let fd = (value_at(s1 + h) - value_at(s1 - h)) / (2.0 * h);
            assert!((ad - analytic).abs() < 1e-12);
            assert!((ad - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn stationary_sigma_squared_recovers_loc_loss() {
        // Minimize exp(-s)/2 * l + s/2 over s by ternary search; the
        // minimizer satisfies sigma^2 = exp(s*) = l.
        let l_loc = 0.6180339887;
        let f = |s: f64| {
            joint_loss_value(l_loc, 0.0, 0.0, &UncertaintyParams { s1: s, s2: 0.0, alpha: 0.0 })
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s_star = 0.5 * (lo + hi);
        assert!((s_star.exp() - l_loc).abs() < 1e-6);
    }

    #[test]
    fn uniform_weighting_is_the_identity_combination() {
        let mut tape = Tape::new();
        let l_loc = tape.scalar(1.25);
        let l_mode = tape.scalar(0.5);
        let l_speed = tape.scalar(-0.125);
        let j = joint_loss(&mut tape, l_loc, l_mode, l_speed, None, None, TaskWeighting::uniform())
            .unwrap();
        assert!((tape.value(j).item() - (1.25 + 0.5 - 0.125)).abs() < 1e-15);
    }

    #[test]
    fn loss_sign_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.random_range(2..8);
            let mut positions = Vec::new();
            let mut probs = Vec::new();
            for _ in 0..n {
                positions.push([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                probs.push(raw.into_iter().map(|v| v / s).collect::<Vec<_>>());
            }
            let labels: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let mut tape = Tape::new();
            let (pos, prob_nodes) = output_nodes(&mut tape, &positions, &probs);
            let input = plain_input(
                labels,
                (0..n as i64).map(|i| i % 3).collect(),
                (0..n).map(|i| if i == 0 { 0.0 } else { 2.0 }).collect(),
                vec![0; n],
            );
            let lookup = driving_lookup(0.7);
            let losses =
                sequence_losses(&mut tape, &pos, &prob_nodes, &input, [50.0, 50.0], &lookup)
                    .unwrap();
            assert!(tape.value(losses.loc_sum).item() >= 0.0);
            assert!(tape.value(losses.mode_sum).item() >= 0.0);
            assert!(tape.value(losses.speed_sum).item() <= 0.0);
        }
    }
}
