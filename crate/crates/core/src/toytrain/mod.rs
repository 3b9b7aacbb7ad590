//! Desk-scale ensemble training that produces realistic prediction logs.
//!
//! Each network is trained alone by mini-batch SGD (momentum, coupled weight
//! decay) on cross-entropy, and evaluated on the clean test split at every
//! checkpoint. Networks differ only through their init and shuffle seeds.

mod dataset;
mod model;

pub use dataset::{make_dataset, DatasetSpec, SyntheticDataset};
pub use model::{ModelSpec, Network};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{argmax_lowest, Checkpoint, PredictionLog};
use crate::noise::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSeeds {
    pub init: u64,
    pub shuffle: u64,
}

impl NetworkSeeds {
    /// `n` distinct seed pairs derived from one base seed.
    pub fn derive(base: u64, n: usize) -> Vec<NetworkSeeds> {
        (0..n as u64)
            .map(|i| NetworkSeeds {
                init: base.wrapping_add(2 * i),
                shuffle: base.wrapping_add(2 * i + 1),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRunConfig {
    pub model: ModelSpec,
    pub num_networks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs between logged checkpoints.
    pub checkpoint_every: usize,
    /// One entry per network.
    pub seeds: Vec<NetworkSeeds>,
    pub noise: NoiseSpec,
    /// Std of Gaussian jitter added to every training input each time it is
    /// drawn (the toy stand-in for data augmentation). Zero disables it.
    #[serde(default)]
    pub input_jitter: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Per-epoch cosine annealing from the base rate toward zero.
    Cosine,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let progress = (epoch - 1) as f64 / epochs as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl ToyRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_networks == 0 {
            return Err(Error::input("an ensemble needs at least one network"));
        }
        if self.seeds.len() != self.num_networks {
            return Err(Error::input(format!(
                "{} seed pairs for {} networks",
                self.seeds.len(),
                self.num_networks
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be positive"));
        }
        if self.checkpoint_every == 0 || self.epochs / self.checkpoint_every < 2 {
            return Err(Error::input("checkpoint cadence must yield at least two checkpoints"));
        }
        if let ModelSpec::Mlp { hidden } = &self.model {
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(Error::input("MLP hidden layers must be nonempty and positive"));
            }
        }
        let finite = [self.learning_rate, self.momentum, self.weight_decay, self.input_jitter];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.learning_rate == 0.0 {
            return Err(Error::input("learning rate must be positive; momentum, weight decay and jitter nonnegative"));
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<Checkpoint> {
        (1..=self.epochs / self.checkpoint_every)
            .map(|k| Checkpoint::epoch((k * self.checkpoint_every) as u32))
            .collect()
    }
}

/// Everything one network produced over its run.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRun {
    /// `[checkpoint x example]`.
    pub hard: Vec<u32>,
    /// `[checkpoint x example x class]`.
    pub soft: Vec<f32>,
    /// Accuracy on the (noisy) training labels at each checkpoint.
    pub train_accuracy: Vec<f64>,
    pub final_network: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub log: PredictionLog,
    /// `[network][checkpoint]` accuracy on the labels the networks trained on.
    pub train_accuracy: Vec<Vec<f64>>,
}

/// Train `cfg.num_networks` networks, one thread each, and assemble their
/// test predictions into a log.
pub fn train_ensemble(data: &SyntheticDataset, cfg: &ToyRunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let runs: Vec<Result<NetworkRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|seeds| scope.spawn(move || train_network(data, cfg, *seeds)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    let mut train_accuracy = Vec::new();
    for run in runs {
        let run = run?;
        hard.extend(run.hard);
        soft.extend(run.soft);
        train_accuracy.push(run.train_accuracy);
    }
    let log = PredictionLog::new(
        cfg.num_networks,
        cfg.checkpoints(),
        data.test_labels.len(),
        data.num_classes(),
        hard,
        Some(soft),
    )?;
    Ok(TrainOutput { log, train_accuracy })
}

pub fn train_network(data: &SyntheticDataset, cfg: &ToyRunConfig, seeds: NetworkSeeds) -> Result<NetworkRun> {
    let d = data.dim();
    let c = data.num_classes();
    let m = data.train_labels.len();
    let mut net = Network::init(&cfg.model, d, c, &mut ChaCha8Rng::seed_from_u64(seeds.init));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut velocity = vec![0.0; net.params().len()];
    let mut order: Vec<usize> = (0..m).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * d);
    let mut yb = Vec::with_capacity(cfg.batch_size);

    let checkpoints = cfg.epochs / cfg.checkpoint_every;
    let t = data.test_labels.len();
    let mut run = NetworkRun {
        hard: Vec::with_capacity(checkpoints * t),
        soft: Vec::with_capacity(checkpoints * t * c),
        train_accuracy: Vec::with_capacity(checkpoints),
        final_network: net.clone(),
    };

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&data.train_inputs[i * d..(i + 1) * d]);
                yb.push(data.train_labels.labels()[i]);
            }
            if cfg.input_jitter > 0.0 {
                for v in xb.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut shuffle_rng);
                    *v += cfg.input_jitter * z;
                }
            }
            let (loss, grad) = net.loss_and_grad(&xb, &yb);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss {loss} (learning rate {})", cfg.learning_rate),
                });
            }
            for ((p, v), g) in net.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                *p -= lr * *v;
            }
        }
        if epoch % cfg.checkpoint_every == 0 {
            let probs = net.predict_proba(&data.test_inputs);
            for row in probs.chunks_exact(c) {
                let row32: Vec<f32> = row.iter().map(|&p| p as f32).collect();
                run.hard.push(argmax_lowest(&row32) as u32);
                run.soft.extend(row32);
            }
            let train_probs = net.predict_proba(&data.train_inputs);
            let hits = train_probs
                .chunks_exact(c)
                .zip(data.train_labels.labels())
                .filter(|(row, &y)| argmax_lowest(row) as u32 == y)
                .count();
            run.train_accuracy.push(hits as f64 / m as f64);
        }
    }
    run.final_network = net;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::agreement;
    use crate::log::EpochSubset;
    use crate::metrics::{accuracy_curve, AggregationRule};

    fn small_cfg(n: usize, epochs: usize) -> ToyRunConfig {
        ToyRunConfig {
            model: ModelSpec::SoftmaxRegression,
            num_networks: n,
            epochs,
            batch_size: 16,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            checkpoint_every: 1,
            seeds: NetworkSeeds::derive(11, n),
            noise: NoiseSpec::symmetric(0.0, 0),
            input_jitter: 0.0,
            lr_schedule: LrSchedule::Constant,
        }
    }

    fn separated() -> SyntheticDataset {
        let spec = DatasetSpec {
            means: vec![vec![-4.0, 0.0], vec![4.0, 0.0]],
            stds: vec![1.0, 1.0],
            train_size: 200,
            test_size: 400,
            seed: 3,
        };
        make_dataset(&spec).unwrap()
    }

    #[test]
    fn separated_blobs_are_learned() {
        // Means 8 std apart: Bayes error is Phi(-4) ~ 3e-5.
        let out = train_ensemble(&separated(), &small_cfg(1, 5)).unwrap();
        let acc = accuracy_curve(&out.log, &separated().test_labels, AggregationRule::Single(0)).unwrap();
        assert!(*acc.last().unwrap() > 0.99, "{acc:?}");
    }

    #[test]
    fn identical_means_give_chance_accuracy() {
        let spec = DatasetSpec {
            means: vec![vec![0.0, 0.0]; 4],
            stds: vec![1.0; 4],
            train_size: 400,
            test_size: 2000,
            seed: 8,
        };
        let data = make_dataset(&spec).unwrap();
        let out = train_ensemble(&data, &small_cfg(1, 5)).unwrap();
        let acc = accuracy_curve(&out.log, &data.test_labels, AggregationRule::Single(0)).unwrap();
        let last = *acc.last().unwrap();
        assert!((last - 0.25).abs() < 0.05, "{last}");
    }

    #[test]
    fn shape_and_determinism() {
        let data = separated();
        let cfg = small_cfg(3, 4);
        let a = train_ensemble(&data, &cfg).unwrap();
        let b = train_ensemble(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.num_checkpoints(), 4);
        assert_eq!(a.log.num_networks(), 3);
        assert_eq!(a.train_accuracy.len(), 3);
    }

    #[test]
    fn network_log_independent_of_ensemble() {
        let data = separated();
        let cfg = small_cfg(3, 3);
        let full = train_ensemble(&data, &cfg).unwrap();
        let mut alone = small_cfg(1, 3);
        alone.seeds = vec![cfg.seeds[2]];
        let solo = train_ensemble(&data, &alone).unwrap();
        for e in 0..3 {
            for x in 0..data.test_labels.len() {
                assert_eq!(full.log.pred(2, e, x), solo.log.pred(0, e, x));
            }
        }
    }

    #[test]
    fn single_network_agreement_is_epoch_frequency() {
        let data = separated();
        let out = train_ensemble(&data, &small_cfg(1, 4)).unwrap();
        let table = agreement(&out.log, &EpochSubset::all(4).unwrap()).unwrap();
        for x in 0..data.test_labels.len() {
            for c in 0..2 {
                let freq = (0..4).filter(|&e| out.log.pred(0, e, x) == c).count() as f64 / 4.0;
                assert_eq!(table.score(x, c as usize), freq);
            }
        }
    }

    #[test]
    fn huge_learning_rate_diverges() {
        // lr * wd = 1e6 makes every step blow the weights up until they overflow.
        let mut cfg = small_cfg(1, 10);
        cfg.learning_rate = 1000.0;
        cfg.weight_decay = 1000.0;
        match train_ensemble(&separated(), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!((1..10).contains(&epoch), "{epoch}"),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training should have diverged"),
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(0.1, 1, 100), 0.1);
        assert!((s.rate(0.1, 51, 100) - 0.05).abs() < 1e-15);
        assert!(s.rate(0.1, 100, 100) < 1e-4);
        assert_eq!(LrSchedule::Constant.rate(0.1, 100, 100), 0.1);
    }

    #[test]
    fn jitter_is_seeded() {
        let data = separated();
        let mut cfg = small_cfg(2, 3);
        cfg.input_jitter = 0.5;
        assert_eq!(train_ensemble(&data, &cfg).unwrap(), train_ensemble(&data, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(2, 3);
        cfg.checkpoint_every = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(2, 3);
        cfg.seeds.pop();
        assert!(cfg.validate().is_err());
    }
}
