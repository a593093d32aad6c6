//! Tape construction for one MR sequence: local predictor, bottom and
//! upper recurrent layers with their attentions, output layer, and the two
//! task heads.

use crate::autodiff::{NodeId, ParamStore, ShapeError, Tape, Tensor};

use super::{ArchVariant, ModelConfig};

/// Featurized model input for one sequence (real steps only; structural
/// padding is layered on top by the batcher).
#[derive(Debug, Clone)]
pub struct SequenceInput {
    /// Per-step F x N feature matrices.
    pub features: Vec<Tensor>,
    /// Per-step timestamp gap in seconds; 0 at the first step of every
    /// subsequence.
    pub delta_t: Vec<f64>,
    /// Non-decreasing subsequence index per step.
    pub subseq_index: Vec<usize>,
    /// Unit-box position labels; [-1, -1] marks an unlabeled step.
    pub pos_labels: Vec<[f64; 2]>,
    /// Mode label index per step; -1 marks an unlabeled step.
    pub mode_labels: Vec<i64>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Eq.-15 style label mask: a step counts iff its position label is
    /// not the [-1, -1] sentinel.
    pub fn label_mask(&self) -> Vec<bool> {
        self.pos_labels.iter().map(|p| *p != [-1.0, -1.0]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    /// Capture per-step time-attention and scaled forget-gate values.
    pub trace_gates: bool,
    /// Bind parameters as gradient-tracked leaves; turn off for pure
    /// inference passes.
    pub track_params: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { trace_gates: false, track_params: true }
    }
}

impl ForwardOptions {
    pub fn inference() -> Self {
        Self { trace_gates: false, track_params: false }
    }
}

/// Time-attention instrumentation for one bottom-layer step.
#[derive(Debug, Clone, Copy)]
pub struct GateTrace {
    /// a = tanh(w Δt + b).
    pub attention: f64,
    /// Mean of the scaled forget gate vector.
    pub forget_mean: f64,
}

/// Tape handles for one step's outputs.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Sigmoid position in the unit box, shape (2,).
    pub position: NodeId,
    /// Softmax mode distribution, shape (num_modes,).
    pub mode_probs: NodeId,
    /// Shared feature vector, shape (feature_dim,).
    pub features: NodeId,
}

/// Everything the caller needs after building one sequence's graph.
pub struct SequenceForward {
    /// Gradient-tracked input leaves for every supplied step, including
    /// structurally padded ones (those stay disconnected from the graph).
    pub input_leaves: Vec<NodeId>,
    /// Outputs for the first `real_len` steps.
    pub steps: Vec<StepOutput>,
    /// Subsequence attention weights, one per subsequence.
    pub attention: Vec<f64>,
    pub gate_trace: Option<Vec<GateTrace>>,
}

/// Plain-value outputs padded back to the full step count.
#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub positions: Vec<[f64; 2]>,
    pub mode_probs: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

/// Bound LSTM parameters with the four gate weight matrices fused into
/// one (4H, H+I) node; rows are ordered z, f, g, o.
pub struct LstmLeaves {
    w_cat: NodeId,
    b_cat: NodeId,
    hidden: usize,
}

fn bind(tape: &mut Tape, store: &ParamStore, name: &str, track: bool) -> NodeId {
    if track {
        store.leaf(tape, name)
    } else {
        tape.constant(store.value(name).clone())
    }
}

pub fn bind_lstm(tape: &mut Tape, store: &ParamStore, prefix: &str, track: bool) -> LstmLeaves {
    let hidden = store.value(&format!("{prefix}.wz")).rows();
    let cat = store.value(&format!("{prefix}.wz")).cols();
    let gates: Vec<NodeId> = ["wz", "wf", "wg", "wo"]
        .iter()
        .map(|g| bind(tape, store, &format!("{prefix}.{g}"), track))
        .collect();
    let flat = tape.concat(&gates);
    let w_cat = tape.reshape(flat, &[4 * hidden, cat]).expect("gate weight shapes agree");
    let biases: Vec<NodeId> = ["bz", "bf", "bg", "bo"]
        .iter()
        .map(|g| bind(tape, store, &format!("{prefix}.{g}"), track))
        .collect();
    let b_cat = tape.concat(&biases);
    LstmLeaves { w_cat, b_cat, hidden }
}

struct CellOut {
    h: NodeId,
    c: NodeId,
    forget_scaled: NodeId,
}

/// One LSTM step. `time_scale` carries (a, 1 - a) when the time-interval
/// attention applies: the forget gate is multiplied by a, the input gate
/// by 1 - a.
fn lstm_cell(
    tape: &mut Tape,
    p: &LstmLeaves,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    time_scale: Option<(NodeId, NodeId)>,
) -> Result<CellOut, ShapeError> {
    let h = p.hidden;
    let hx = tape.concat(&[h_prev, x]);
    let pre = tape.affine(p.w_cat, hx, p.b_cat)?;

    let z_pre = tape.slice(pre, 0, h)?;
    let z = tape.tanh(z_pre);
    let f_pre = tape.slice(pre, h, h)?;
    let mut f = tape.sigmoid(f_pre);
    let g_pre = tape.slice(pre, 2 * h, h)?;
    let mut g = tape.sigmoid(g_pre);
    let o_pre = tape.slice(pre, 3 * h, h)?;
    let o = tape.sigmoid(o_pre);

    if let Some((a, one_minus_a)) = time_scale {
        f = tape.scale_by(f, a)?;
        g = tape.scale_by(g, one_minus_a)?;
    }

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(g, z)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h_out = tape.mul(o, c_act)?;

    Ok(CellOut { h: h_out, c, forget_scaled: f })
}

/// Local single-point predictor: full-height convolution over the feature
/// matrix, then an LSTM across the station columns; returns the
/// concatenation of all hidden states, length N * local_hidden.
pub fn local_predictor(
    tape: &mut Tape,
    conv_w: NodeId,
    conv_b: NodeId,
    lstm: &LstmLeaves,
    config: &ModelConfig,
    x: NodeId,
) -> Result<NodeId, ShapeError> {
    let conv = tape.conv1d_full_height(conv_w, x, conv_b)?;
    let latent = tape.relu(conv);
    let mut h = tape.zeros(&[config.local_hidden]);
    let mut c = tape.zeros(&[config.local_hidden]);
    let mut hidden = Vec::with_capacity(config.num_stations);
    for n in 0..config.num_stations {
        let col = tape.col(latent, n);
        let out = lstm_cell(tape, lstm, col, h, c, None)?;
        h = out.h;
        c = out.c;
        hidden.push(out.h);
    }
    Ok(tape.concat(&hidden))
}

/// Seconds-to-attention input scaling: gaps of 1-125 s land inside tanh's
/// responsive range.
const DELTA_T_SCALE: f64 = 1.0 / 60.0;

/// Contiguous (start, end_inclusive) ranges of equal subsequence index.
fn subsequence_ranges(index: &[usize], len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let mut start = 0;
    for t in 1..len {
        debug_assert!(index[t] >= index[t - 1], "subsequence indices must be non-decreasing");
        if index[t] != index[t - 1] {
            out.push((start, t - 1));
            start = t;
        }
    }
    out.push((start, len - 1));
    out
}

/// Build the full graph for one sequence. Steps at `real_len..` are
/// structural padding: their leaves are created (so gradients are
/// queryable and provably zero) but never consumed.
pub fn forward_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    config: &ModelConfig,
    input: &SequenceInput,
    real_len: usize,
    opts: &ForwardOptions,
) -> Result<SequenceForward, ShapeError> {
    assert!(real_len >= 1 && real_len <= input.len(), "real_len out of range");
    let input_leaves: Vec<NodeId> =
        input.features.iter().map(|x| tape.input(x.clone())).collect();

    let mut gate_trace = opts.trace_gates.then(Vec::new);

    // Per-step encodings feeding the recurrent hierarchy.
    let encoded: Vec<NodeId> = match config.arch {
        ArchVariant::GlobalOnly => {
            let flat_len = config.num_features * config.num_stations;
            input_leaves[..real_len]
                .iter()
                .map(|&leaf| tape.reshape(leaf, &[flat_len]))
                .collect::<Result<_, _>>()?
        }
        _ => {
            let conv_w = bind(tape, store, "conv.w", opts.track_params);
            let conv_b = bind(tape, store, "conv.b", opts.track_params);
            let local = bind_lstm(tape, store, "local", opts.track_params);
            input_leaves[..real_len]
                .iter()
                .map(|&leaf| local_predictor(tape, conv_w, conv_b, &local, config, leaf))
                .collect::<Result<_, _>>()?
        }
    };

    let mut attention = Vec::new();
    let shared: Vec<NodeId> = match config.arch {
        ArchVariant::LocalOnly => {
            let w = bind(tape, store, "localout.w", opts.track_params);
            let b = bind(tape, store, "localout.b", opts.track_params);
            encoded
                .iter()
                .map(|&p| {
                    let pre = tape.affine(w, p, b)?;
                    Ok(tape.tanh(pre))
                })
                .collect::<Result<_, ShapeError>>()?
        }
        ArchVariant::Full | ArchVariant::GlobalOnly => {
            let bottom = bind_lstm(tape, store, "bottom", opts.track_params);
            let time_w = bind(tape, store, "bottom.time_w", opts.track_params);
            let time_b = bind(tape, store, "bottom.time_b", opts.track_params);
            let ranges = subsequence_ranges(&input.subseq_index, real_len);

            // Bottom recurrent layer with time-interval attention; hidden
            // state resets at each subsequence boundary.
            let mut h_bottom: Vec<NodeId> = Vec::with_capacity(real_len);
            for &(start, end) in &ranges {
                let mut h = tape.zeros(&[config.bottom_hidden]);
                let mut c = tape.zeros(&[config.bottom_hidden]);
                for t in start..=end {
                    let dt = tape.scalar(input.delta_t[t] * DELTA_T_SCALE);
                    let a_lin = tape.mul(time_w, dt)?;
                    let a_pre = tape.add(a_lin, time_b)?;
                    let a = tape.tanh(a_pre);
                    let one_minus_a = tape.one_minus(a);
                    let out = lstm_cell(tape, &bottom, encoded[t], h, c, Some((a, one_minus_a)))?;
                    h = out.h;
                    c = out.c;
                    if let Some(trace) = gate_trace.as_mut() {
                        trace.push(GateTrace {
                            attention: tape.value(a).item(),
                            forget_mean: tape.value(out.forget_scaled).sum()
                                / config.bottom_hidden as f64,
                        });
                    }
                    h_bottom.push(out.h);
                }
            }

            // Upper recurrent layer over per-subsequence sums.
            let upper = bind_lstm(tape, store, "upper", opts.track_params);
            let mut h_upper: Vec<NodeId> = Vec::with_capacity(ranges.len());
            let mut h = tape.zeros(&[config.upper_hidden]);
            let mut c = tape.zeros(&[config.upper_hidden]);
            for &(start, end) in &ranges {
                let stacked = tape.concat(&h_bottom[start..=end]);
                let matrix =
                    tape.reshape(stacked, &[end - start + 1, config.bottom_hidden])?;
                let p_i = tape.sum_axis(matrix, 0);
                let out = lstm_cell(tape, &upper, p_i, h, c, None)?;
                h = out.h;
                c = out.c;
                h_upper.push(out.h);
            }

            // Subsequence attention.
            let attn_w = bind(tape, store, "attn.w", opts.track_params);
            let attn_b = bind(tape, store, "attn.b", opts.track_params);
            let attn_v = bind(tape, store, "attn.v", opts.track_params);
            let mut scores = Vec::with_capacity(h_upper.len());
            for &hu in &h_upper {
                let pre = tape.affine(attn_w, hu, attn_b)?;
                let act = tape.tanh(pre);
                scores.push(tape.dot(attn_v, act)?);
            }
            let score_vec = tape.concat(&scores);
            let beta = tape.softmax_lastdim(score_vec);
            attention = tape.value(beta).data().to_vec();
            let context: Vec<NodeId> = h_upper
                .iter()
                .enumerate()
                .map(|(i, &hu)| {
                    let b_i = tape.pick(beta, i);
                    tape.scale_by(hu, b_i)
                })
                .collect::<Result<_, _>>()?;

            // Output layer merging bottom states with subsequence context.
            let w_bottom = bind(tape, store, "out.w_bottom", opts.track_params);
            let w_upper = bind(tape, store, "out.w_upper", opts.track_params);
            let out_b = bind(tape, store, "out.b", opts.track_params);
            let mut shared = Vec::with_capacity(real_len);
            for (i, &(start, end)) in ranges.iter().enumerate() {
                // The context contribution is constant per subsequence.
                let from_upper = tape.affine(w_upper, context[i], out_b)?;
                for t in start..=end {
                    let from_bottom = tape.matmul(w_bottom, h_bottom[t])?;
                    let pre = tape.add(from_bottom, from_upper)?;
                    shared.push(tape.tanh(pre));
                }
            }
            shared
        }
    };

    // Task heads on the shared features.
    let pos_w = bind(tape, store, "pos.w", opts.track_params);
    let pos_b = bind(tape, store, "pos.b", opts.track_params);
    let mode_layers: Vec<(NodeId, NodeId)> = (1..=config.mode_layers)
        .map(|l| {
            (
                bind(tape, store, &format!("mode.w{l}"), opts.track_params),
                bind(tape, store, &format!("mode.b{l}"), opts.track_params),
            )
        })
        .collect();

    let mut steps = Vec::with_capacity(shared.len());
    for &v in &shared {
        let pos_pre = tape.affine(pos_w, v, pos_b)?;
        let position = tape.sigmoid(pos_pre);

        let mut hidden = v;
        for (l, &(w, b)) in mode_layers.iter().enumerate() {
            let pre = tape.affine(w, hidden, b)?;
            hidden = if l + 1 < config.mode_layers { tape.sigmoid(pre) } else { pre };
        }
        let mode_probs = tape.softmax_lastdim(hidden);

        steps.push(StepOutput { position, mode_probs, features: v });
    }

    Ok(SequenceForward { input_leaves, steps, attention, gate_trace })
}

/// Extract values for all `total_len` steps; structurally padded steps get
/// the box center, a uniform mode distribution, and zero features.
pub fn materialize_outputs(
    tape: &Tape,
    fwd: &SequenceForward,
    config: &ModelConfig,
    total_len: usize,
) -> SequenceOutput {
    let mut positions = Vec::with_capacity(total_len);
    let mut mode_probs = Vec::with_capacity(total_len);
    let mut features = Vec::with_capacity(total_len);
    for t in 0..total_len {
        if let Some(step) = fwd.steps.get(t) {
            let p = tape.value(step.position);
            positions.push([p.data()[0], p.data()[1]]);
            mode_probs.push(tape.value(step.mode_probs).data().to_vec());
            features.push(tape.value(step.features).data().to_vec());
        } else {
            positions.push([0.5, 0.5]);
            mode_probs.push(vec![1.0 / config.num_modes as f64; config.num_modes]);
            features.push(vec![0.0; config.feature_dim]);
        }
    }
    SequenceOutput { positions, mode_probs, features }
}
