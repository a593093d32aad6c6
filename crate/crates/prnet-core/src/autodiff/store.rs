//! Named parameter tensors with gradient accumulators, Adam state, and a
//! checksummed binary checkpoint format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::tape::Tape;
use super::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PRNCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub trainable: bool,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            trainable: true,
        }
    }
}

/// What a partial checkpoint load did per parameter group.
#[derive(Debug, Default, Clone)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Present in the template but absent from the file; fresh values kept.
    pub missing: Vec<String>,
    /// Present in the file but not in the template; ignored.
    pub ignored: Vec<String>,
    /// Name matched but shapes differ; template values kept.
    pub shape_mismatch: Vec<String>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.ignored.is_empty() && self.shape_mismatch.is_empty()
    }
}

/// Named parameter map. Iteration order is the name order, which keeps
/// clipping, updates, and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.entries.insert(name.to_string(), ParamEntry::new(value));
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    /// Insert a fully-populated entry (values plus optimizer state).
    pub fn insert_entry(&mut self, name: &str, entry: ParamEntry) {
        let prev = self.entries.insert(name.to_string(), entry);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .trainable = trainable;
    }

    /// Insert this parameter as a bound leaf on a tape.
    pub fn leaf(&self, tape: &mut Tape, name: &str) -> crate::autodiff::NodeId {
        tape.param(name, self.value(name).clone())
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) {
        let entry =
            self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        entry.grad.axpy(1.0, grad);
    }

    /// Fold a finished tape's parameter gradients into the accumulators.
    pub fn absorb(&mut self, tape: &Tape) {
        for (name, grad) in tape.param_grads() {
            self.accumulate_grad(name, grad);
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.fill(0.0);
        }
    }

    /// Global L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all trainable gradients so the global norm is at most `max_norm`.
    pub fn clip_grads(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for entry in self.entries.values_mut().filter(|e| e.trainable) {
                for g in entry.grad.data_mut() {
                    *g *= s;
                }
            }
        }
    }

    /// One Adam update with bias correction over all trainable parameters;
    /// gradient accumulators are zeroed afterwards.
    pub fn adam_step(&mut self, hyper: &AdamHyper) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for entry in self.entries.values_mut() {
            if !entry.trainable {
                entry.grad.fill(0.0);
                continue;
            }
            for i in 0..entry.value.len() {
                let g = entry.grad.data()[i];
                let m = hyper.beta1 * entry.adam_m.data()[i] + (1.0 - hyper.beta1) * g;
                let v = hyper.beta2 * entry.adam_v.data()[i] + (1.0 - hyper.beta2) * g * g;
                entry.adam_m.data_mut()[i] = m;
                entry.adam_v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                entry.value.data_mut()[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            }
            entry.grad.fill(0.0);
        }
    }

    // ---- checkpoint io ---------------------------------------------------

    /// Serialize values plus Adam state, with a trailing SHA-256 checksum.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            write_record(&mut buf, name, &entry.value);
        }
        // Adam state uses the same record framing under reserved names.
        let extras = 1 + 2 * self.entries.len() as u32;
        buf.extend_from_slice(&extras.to_le_bytes());
        write_record(&mut buf, "adam.step", &Tensor::scalar(self.step as f64));
        for (name, entry) in &self.entries {
            write_record(&mut buf, &format!("adam.m.{name}"), &entry.adam_m);
            write_record(&mut buf, &format!("adam.v.{name}"), &entry.adam_v);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Load a checkpoint exactly as stored.
    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let raw = read_verified(path)?;
        let mut cur = Cursor { buf: &raw, pos: MAGIC.len() + 4 };
        let count = cur.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let (name, tensor) = cur.record()?;
            store.insert(&name, tensor);
        }
        let extras = cur.u32()? as usize;
        for _ in 0..extras {
            let (name, tensor) = cur.record()?;
            if name == "adam.step" {
                store.step = tensor.item() as u64;
            } else if let Some(p) = name.strip_prefix("adam.m.") {
                let entry = store
                    .entries
                    .get_mut(p)
                    .ok_or_else(|| CheckpointError::CorruptFile(format!("orphan record {name}")))?;
                entry.adam_m = tensor;
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                let entry = store
                    .entries
                    .get_mut(p)
                    .ok_or_else(|| CheckpointError::CorruptFile(format!("orphan record {name}")))?;
                entry.adam_v = tensor;
            } else {
                return Err(CheckpointError::CorruptFile(format!("unknown record {name}")));
            }
        }
        Ok(store)
    }

    /// Load into an already-initialized template: names found in the file
    /// replace template values; everything else keeps its fresh
    /// initialization and is listed in the report.
    pub fn load_into(path: &Path, mut template: ParamStore) -> Result<(ParamStore, LoadReport), CheckpointError> {
        let file = Self::load(path)?;
        let mut report = LoadReport::default();
        for (name, entry) in file.entries {
            match template.entries.get_mut(&name) {
                Some(slot) if slot.value.shape() == entry.value.shape() => {
                    *slot = entry;
                    report.loaded.push(name);
                }
                Some(_) => report.shape_mismatch.push(name),
                None => report.ignored.push(name),
            }
        }
        for name in template.entries.keys() {
            if !report.loaded.contains(name) && !report.shape_mismatch.contains(name) {
                report.missing.push(name.clone());
            }
        }
        if report.loaded.len() == template.entries.len() && report.is_clean() {
            template.step = file.step;
        }
        Ok((template, report))
    }
}

fn write_record(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_verified(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < MAGIC.len() + 4 + 32 {
        return Err(CheckpointError::CorruptFile("file too short".into()));
    }
    if &raw[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body_len = raw.len() - 32;
    let digest = Sha256::digest(&raw[..body_len]);
    if digest.as_slice() != &raw[body_len..] {
        return Err(CheckpointError::CorruptFile("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(raw[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    raw.truncate(body_len);
    Ok(raw)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::CorruptFile("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let name_len = self.u32()? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::CorruptFile("implausible name length".into()));
        }
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::CorruptFile("non-utf8 name".into()))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::CorruptFile("implausible rank".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, Tensor::new(shape, data)))
    }
}
