//! Prediction logs and the small value types that index into them.
//!
//! A [`PredictionLog`] records, for every network of an ensemble and every
//! checkpoint at which the ensemble was evaluated, the class each network
//! predicted on every test example. Probabilities are optional.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the per-slice probability sum.
pub const PROB_SUM_TOL: f64 = 1e-5;

/// A point in training time, stored as an exact rational number of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub num: u32,
    pub den: u32,
}

impl Checkpoint {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::input("checkpoint denominator must be positive"));
        }
        Ok(Self { num, den })
    }

    pub fn epoch(epoch: u32) -> Self {
        Self { num: epoch, den: 1 }
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl Ord for Checkpoint {
    fn cmp(&self, other: &Self) -> Ordering {
        (u64::from(self.num) * u64::from(other.den)).cmp(&(u64::from(other.num) * u64::from(self.den)))
    }
}

impl PartialOrd for Checkpoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Hard predictions packed at the narrowest unsigned width that holds `C - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassBuffer {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
}

impl ClassBuffer {
    /// Byte width needed for class indices below `num_classes`.
    pub fn width_for(num_classes: usize) -> u8 {
        match num_classes.saturating_sub(1) {
            m if m <= u8::MAX as usize => 1,
            m if m <= u16::MAX as usize => 2,
            _ => 4,
        }
    }

    pub fn pack(values: &[u32], num_classes: usize) -> Self {
        match Self::width_for(num_classes) {
            1 => ClassBuffer::U8(values.iter().map(|&v| v as u8).collect()),
            2 => ClassBuffer::U16(values.iter().map(|&v| v as u16).collect()),
            _ => ClassBuffer::U32(values.to_vec()),
        }
    }

    pub fn width(&self) -> u8 {
        match self {
            ClassBuffer::U8(_) => 1,
            ClassBuffer::U16(_) => 2,
            ClassBuffer::U32(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ClassBuffer::U8(v) => v.len(),
            ClassBuffer::U16(v) => v.len(),
            ClassBuffer::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> u32 {
        match self {
            ClassBuffer::U8(v) => u32::from(v[idx]),
            ClassBuffer::U16(v) => u32::from(v[idx]),
            ClassBuffer::U32(v) => v[idx],
        }
    }

    pub fn to_vec(&self) -> Vec<u32> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Dense record of per-network, per-checkpoint test predictions.
///
/// Layout is network-major: entry `(i, e, x)` lives at
/// `(i * num_checkpoints + e) * num_examples + x`, and probability slices
/// extend that index by `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    num_networks: usize,
    checkpoints: Vec<Checkpoint>,
    num_examples: usize,
    num_classes: usize,
    hard: ClassBuffer,
    soft: Option<Vec<f32>>,
}

impl PredictionLog {
    pub fn new(
        num_networks: usize,
        checkpoints: Vec<Checkpoint>,
        num_examples: usize,
        num_classes: usize,
        hard: Vec<u32>,
        soft: Option<Vec<f32>>,
    ) -> Result<Self> {
        if num_networks == 0 || num_examples == 0 || num_classes == 0 {
            return Err(Error::input("networks, examples and classes must all be positive"));
        }
        if checkpoints.is_empty() {
            return Err(Error::input("a log needs at least one checkpoint"));
        }
        if checkpoints.iter().any(|c| c.den == 0) {
            return Err(Error::input("checkpoint denominator must be positive"));
        }
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("checkpoints must be strictly increasing"));
        }
        let cells = num_networks * checkpoints.len() * num_examples;
        if hard.len() != cells {
            return Err(Error::input(format!(
                "hard predictions hold {} entries, expected {cells}",
                hard.len()
            )));
        }
        if let Some(bad) = hard.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::input(format!("class index {bad} out of range for {num_classes} classes")));
        }
        if let Some(soft) = &soft {
            if soft.len() != cells * num_classes {
                return Err(Error::input(format!(
                    "soft predictions hold {} entries, expected {}",
                    soft.len(),
                    cells * num_classes
                )));
            }
            for (cell, slice) in soft.chunks_exact(num_classes).enumerate() {
                if slice.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::input(format!("negative or non-finite probability in slice {cell}")));
                }
                let sum: f64 = slice.iter().map(|&p| f64::from(p)).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::input(format!("probability slice {cell} sums to {sum}")));
                }
                if argmax_lowest(slice) as u32 != hard[cell] {
                    return Err(Error::input(format!(
                        "hard prediction {} disagrees with probability argmax in slice {cell}",
                        hard[cell]
                    )));
                }
            }
        }
        Ok(Self {
            num_networks,
            checkpoints,
            num_examples,
            num_classes,
            hard: ClassBuffer::pack(&hard, num_classes),
            soft,
        })
    }

    pub fn num_networks(&self) -> usize {
        self.num_networks
    }

    pub fn num_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_soft(&self) -> bool {
        self.soft.is_some()
    }

    pub fn final_checkpoint(&self) -> usize {
        self.checkpoints.len() - 1
    }

    pub fn hard_buffer(&self) -> &ClassBuffer {
        &self.hard
    }

    pub fn soft_buffer(&self) -> Option<&[f32]> {
        self.soft.as_deref()
    }

    #[inline]
    fn cell(&self, network: usize, checkpoint: usize, example: usize) -> usize {
        (network * self.checkpoints.len() + checkpoint) * self.num_examples + example
    }

    /// Predicted class of `network` on `example` at checkpoint position `checkpoint`.
    #[inline]
    pub fn pred(&self, network: usize, checkpoint: usize, example: usize) -> u32 {
        self.hard.get(self.cell(network, checkpoint, example))
    }

    pub fn probs(&self, network: usize, checkpoint: usize, example: usize) -> Option<&[f32]> {
        let c = self.num_classes;
        let start = self.cell(network, checkpoint, example) * c;
        self.soft.as_ref().map(|s| &s[start..start + c])
    }

    pub(crate) fn check_checkpoint(&self, checkpoint: usize) -> Result<()> {
        if checkpoint >= self.checkpoints.len() {
            return Err(Error::input(format!(
                "checkpoint position {checkpoint} out of range (log has {})",
                self.checkpoints.len()
            )));
        }
        Ok(())
    }

    /// The same log restricted to its first `n` networks.
    pub fn first_networks(&self, n: usize) -> Result<PredictionLog> {
        if n == 0 || n > self.num_networks {
            return Err(Error::input(format!(
                "cannot keep {n} of {} networks",
                self.num_networks
            )));
        }
        let cells = n * self.checkpoints.len() * self.num_examples;
        let hard = (0..cells).map(|i| self.hard.get(i)).collect::<Vec<_>>();
        Ok(PredictionLog {
            num_networks: n,
            checkpoints: self.checkpoints.clone(),
            num_examples: self.num_examples,
            num_classes: self.num_classes,
            hard: ClassBuffer::pack(&hard, self.num_classes),
            soft: self.soft.as_ref().map(|s| s[..cells * self.num_classes].to_vec()),
        })
    }
}

/// Ground-truth (or corrupted) labels over `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    num_classes: usize,
    labels: Vec<u32>,
}

impl LabelSet {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::input("a label set needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::input(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { num_classes, labels })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A nonempty, strictly increasing set of checkpoint positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSubset {
    indices: Vec<usize>,
}

impl EpochSubset {
    pub fn new(indices: Vec<usize>, num_checkpoints: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("epoch subset must be nonempty"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("epoch subset must be strictly increasing"));
        }
        if let Some(&last) = indices.last() {
            if last >= num_checkpoints {
                return Err(Error::input(format!(
                    "epoch subset index {last} out of range for {num_checkpoints} checkpoints"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn all(num_checkpoints: usize) -> Result<Self> {
        Self::new((0..num_checkpoints).collect(), num_checkpoints)
    }

    pub fn last(num_checkpoints: usize) -> Result<Self> {
        Self::new(vec![num_checkpoints.saturating_sub(1)], num_checkpoints)
    }

    /// Checkpoints `0..=upto`.
    pub fn prefix(upto: usize, num_checkpoints: usize) -> Result<Self> {
        Self::new((0..=upto).collect(), num_checkpoints)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub(crate) fn check_against(&self, log: &PredictionLog) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last < log.num_checkpoints() => Ok(()),
            Some(&last) => Err(Error::input(format!(
                "epoch subset index {last} out of range for {} checkpoints",
                log.num_checkpoints()
            ))),
            None => Err(Error::input("epoch subset must be nonempty")),
        }
    }
}
