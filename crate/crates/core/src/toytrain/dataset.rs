use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::LabelSet;
use crate::noise::NoiseSpec;

/// Isotropic Gaussian mixture, one component per class, uniform class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub means: Vec<Vec<f64>>,
    /// Per-class standard deviation.
    pub stds: Vec<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Class means evenly spaced on a circle of radius `radius` in the first
    /// two coordinates; remaining coordinates are pure noise.
    pub fn ring(num_classes: usize, dim: usize, radius: f64, std: f64, train_size: usize, test_size: usize, seed: u64) -> Self {
        let means = (0..num_classes)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                let mut m = vec![0.0; dim];
                if dim >= 1 {
                    m[0] = radius * angle.cos();
                }
                if dim >= 2 {
                    m[1] = radius * angle.sin();
                }
                m
            })
            .collect();
        Self {
            means,
            stds: vec![std; num_classes],
            train_size,
            test_size,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let d = self.dim();
        if c < 2 {
            return Err(Error::input("a dataset needs at least two classes"));
        }
        if d < 2 {
            return Err(Error::input("a dataset needs at least two input dimensions"));
        }
        if self.means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::input("class means must be finite and share one dimension"));
        }
        if self.stds.len() != c {
            return Err(Error::input(format!("{} standard deviations for {c} classes", self.stds.len())));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::input("degenerate covariance: every class std must be positive and finite"));
        }
        if self.train_size < c || self.test_size == 0 {
            return Err(Error::input("train split needs one example per class and test split at least one"));
        }
        Ok(())
    }

    fn sample(&self, count: usize, stream: u64) -> (Vec<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let c = self.num_classes();
        let mut labels: Vec<u32> = (0..count).map(|m| (m % c) as u32).collect();
        labels.shuffle(&mut rng);
        let mut inputs = Vec::with_capacity(count * self.dim());
        for &y in &labels {
            let (mean, std) = (&self.means[y as usize], self.stds[y as usize]);
            for &mu in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(mu + std * z);
            }
        }
        (inputs, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    /// Row-major `[train_size x dim]`.
    pub train_inputs: Vec<f64>,
    /// Labels the networks train on (after any injected noise).
    pub train_labels: LabelSet,
    pub clean_train_labels: LabelSet,
    pub corrupted: Vec<bool>,
    /// Row-major `[test_size x dim]`.
    pub test_inputs: Vec<f64>,
    /// Always clean.
    pub test_labels: LabelSet,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Corrupt the training labels; test labels are left untouched.
    pub fn with_noise(mut self, noise: &NoiseSpec) -> Result<Self> {
        let (noisy, mask) = noise.apply(&self.clean_train_labels)?;
        self.train_labels = noisy;
        self.corrupted = mask;
        Ok(self)
    }
}

/// Draw train and test splits from disjoint ChaCha streams of `spec.seed`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let c = spec.num_classes();
    let (train_inputs, train) = spec.sample(spec.train_size, 0);
    let (test_inputs, test) = spec.sample(spec.test_size, 1);
    let clean = LabelSet::new(train, c)?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        train_inputs,
        train_labels: clean.clone(),
        corrupted: vec![false; clean.len()],
        clean_train_labels: clean,
        test_inputs,
        test_labels: LabelSet::new(test, c)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = DatasetSpec::ring(3, 4, 2.0, 1.0, 30, 12, 5);
        let a = make_dataset(&spec).unwrap();
        let b = make_dataset(&spec).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            assert_eq!(a.train_labels.labels().iter().filter(|&&y| y == c).count(), 10);
            assert_eq!(a.test_labels.labels().iter().filter(|&&y| y == c).count(), 4);
        }
        assert_ne!(a.train_inputs[..12], a.test_inputs[..12]);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut spec = DatasetSpec::ring(3, 2, 2.0, 1.0, 30, 12, 5);
        spec.stds[1] = 0.0;
        assert!(make_dataset(&spec).is_err());
        assert!(make_dataset(&DatasetSpec::ring(1, 2, 2.0, 1.0, 30, 12, 5)).is_err());
        assert!(make_dataset(&DatasetSpec::ring(3, 1, 2.0, 1.0, 30, 12, 5)).is_err());
    }

    #[test]
    fn noise_only_touches_train() {
        let spec = DatasetSpec::ring(4, 2, 2.0, 1.0, 100, 40, 1);
        let clean = make_dataset(&spec).unwrap();
        let noisy = clean.clone().with_noise(&NoiseSpec::symmetric(0.4, 3)).unwrap();
        assert_eq!(noisy.test_labels, clean.test_labels);
        assert_eq!(noisy.clean_train_labels, clean.train_labels);
        assert_eq!(noisy.corrupted.iter().filter(|&&m| m).count(), 40);
    }
}
