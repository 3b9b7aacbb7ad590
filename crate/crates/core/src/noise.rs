//! Synthetic label noise.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`: positions are
//! drawn with `rand::seq::index::sample`, replacements with `gen_range`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub fraction: f64,
    /// Class mapping for asymmetric noise; the cyclic shift `c -> c + 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<u32>>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(fraction: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            fraction,
            permutation: None,
            seed,
        }
    }

    pub fn apply(&self, labels: &LabelSet) -> Result<(LabelSet, Vec<bool>)> {
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric(labels, self.fraction, self.seed),
            NoiseKind::Asymmetric => {
                let perm = match &self.permutation {
                    Some(p) => p.clone(),
                    None => cyclic_permutation(labels.num_classes()),
                };
                inject_asymmetric(labels, self.fraction, &perm, self.seed)
            }
        }
    }
}

pub fn cyclic_permutation(num_classes: usize) -> Vec<u32> {
    (0..num_classes).map(|c| ((c + 1) % num_classes) as u32).collect()
}

fn corrupted_count(fraction: f64, len: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::input(format!("noise fraction {fraction} outside [0, 1]")));
    }
    Ok((fraction * len as f64).round() as usize)
}

fn select(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; len];
    for i in sample(rng, len, count) {
        mask[i] = true;
    }
    mask
}

/// Replace `round(p * T)` uniformly chosen labels by a uniform draw from the
/// other `C - 1` classes.
pub fn inject_symmetric(labels: &LabelSet, p: f64, seed: u64) -> Result<(LabelSet, Vec<bool>)> {
    let c = labels.num_classes();
    if c < 2 {
        return Err(Error::input("symmetric noise needs at least two classes"));
    }
    let count = corrupted_count(p, labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = select(labels.len(), count, &mut rng);
    let mut out = labels.labels().to_vec();
    for (y, _) in out.iter_mut().zip(&mask).filter(|(_, &m)| m) {
        let r = rng.gen_range(0..c as u32 - 1);
        *y = if r >= *y { r + 1 } else { r };
    }
    Ok((LabelSet::new(out, c)?, mask))
}

/// Replace `round(p * T)` uniformly chosen labels `y` by `permutation[y]`.
pub fn inject_asymmetric(
    labels: &LabelSet,
    p: f64,
    permutation: &[u32],
    seed: u64,
) -> Result<(LabelSet, Vec<bool>)> {
    let c = labels.num_classes();
    validate_permutation(permutation, c)?;
    let count = corrupted_count(p, labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = select(labels.len(), count, &mut rng);
    let out = labels
        .labels()
        .iter()
        .zip(&mask)
        .map(|(&y, &m)| if m { permutation[y as usize] } else { y })
        .collect();
    Ok((LabelSet::new(out, c)?, mask))
}

fn validate_permutation(permutation: &[u32], num_classes: usize) -> Result<()> {
    if permutation.len() != num_classes {
        return Err(Error::input(format!(
            "permutation has {} entries for {num_classes} classes",
            permutation.len()
        )));
    }
    let mut seen = vec![false; num_classes];
    for (c, &target) in permutation.iter().enumerate() {
        let t = target as usize;
        if t >= num_classes || seen[t] {
            return Err(Error::input("noise permutation is not a bijection"));
        }
        if t == c {
            return Err(Error::input(format!("noise permutation fixes class {c}")));
        }
        seen[t] = true;
    }
    Ok(())
}
