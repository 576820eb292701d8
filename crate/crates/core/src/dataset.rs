use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channelsim::{ChannelSpec, WaveformSpec};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, stream};

/// Where a dataset came from: enough to regenerate it bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub waveform: Option<WaveformSpec>,
    pub channel: Option<ChannelSpec>,
}

/// Paired transmitted (input) and received (target) sequences of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    seq_len: usize,
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<Matrix>,
    targets: Vec<Matrix>,
    meta: DatasetMeta,
}

impl SequenceDataset {
    pub fn new(
        seq_len: usize,
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<Matrix>,
        targets: Vec<Matrix>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(
                "SequenceDataset::new",
                format!("{} input sequences", inputs.len()),
                format!("{} target sequences", targets.len()),
            ));
        }
        for (i, (u, y)) in inputs.iter().zip(&targets).enumerate() {
            if u.shape() != (input_dim, seq_len) || y.shape() != (output_dim, seq_len) {
                return Err(Error::shape(
                    "SequenceDataset::new",
                    format!("sequence {i}: inputs {} targets {}", u.shape_str(), y.shape_str()),
                    format!("inputs {input_dim}x{seq_len} targets {output_dim}x{seq_len}"),
                ));
            }
            if u.as_slice().iter().chain(y.as_slice()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("SequenceDataset::new"));
            }
        }
        Ok(SequenceDataset {
            seq_len,
            input_dim,
            output_dim,
            inputs,
            targets,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[Matrix] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Matrix] {
        &self.targets
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.meta.name = name.into();
        self
    }

    pub fn sequence(&self, i: usize) -> (&Matrix, &Matrix) {
        (&self.inputs[i], &self.targets[i])
    }

    pub fn subset(&self, indices: &[usize]) -> SequenceDataset {
        SequenceDataset {
            seq_len: self.seq_len,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Seeded split by sequence. Both halves keep the original ordering and,
    /// when there are at least two sequences, neither half is empty.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(SequenceDataset, SequenceDataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream(seed, rng::stream::SPLIT));
        let mut n_train = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        }
        let (tr, te) = idx.split_at(n_train.min(n));
        let (mut tr, mut te) = (tr.to_vec(), te.to_vec());
        tr.sort_unstable();
        te.sort_unstable();
        Ok((self.subset(&tr), self.subset(&te)))
    }

    /// Interleaved per-sequence payload: for each sequence, for each time
    /// step, the K input values followed by the L target values.
    pub fn payload(&self) -> impl Iterator<Item = f64> + '_ {
        self.inputs.iter().zip(&self.targets).flat_map(move |(u, y)| {
            (0..self.seq_len).flat_map(move |t| {
                (0..u.rows())
                    .map(move |k| u.get(k, t))
                    .chain((0..y.rows()).map(move |l| y.get(l, t)))
            })
        })
    }

    /// SHA-256 over the dimensions and the little-endian payload.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for d in [self.len(), self.seq_len, self.input_dim, self.output_dim] {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.payload() {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint().iter().map(|b| format!("{b:02x}")).collect()
    }
}
