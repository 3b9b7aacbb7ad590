//! Combination rules over an ensemble's prediction history.
//!
//! Every argmax here breaks ties toward the lowest class index. Agreement is
//! accumulated as integer vote counts (checkpoint outer, network inner) and
//! divided once, so scores are exact up to a single rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{argmax_lowest, EpochSubset, LabelSet, PredictionLog};
use crate::metrics::accuracy;

/// Majority vote of all networks at one checkpoint.
pub fn epoch_vote(log: &PredictionLog, checkpoint: usize) -> Result<Vec<u32>> {
    log.check_checkpoint(checkpoint)?;
    let mut counts = vec![0u32; log.num_classes()];
    let out = (0..log.num_examples())
        .map(|x| {
            counts.iter_mut().for_each(|c| *c = 0);
            for i in 0..log.num_networks() {
                counts[log.pred(i, checkpoint, x) as usize] += 1;
            }
            argmax_lowest(&counts) as u32
        })
        .collect();
    Ok(out)
}

/// Argmax of the network-averaged class probabilities at one checkpoint.
pub fn prob_average_vote(log: &PredictionLog, checkpoint: usize) -> Result<Vec<u32>> {
    if !log.has_soft() {
        return Err(Error::Capability(
            "probability averaging needs per-class probabilities in the log".into(),
        ));
    }
    log.check_checkpoint(checkpoint)?;
    let c = log.num_classes();
    let n = log.num_networks() as f64;
    let mut mean = vec![0f64; c];
    let out = (0..log.num_examples())
        .map(|x| {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for i in 0..log.num_networks() {
                let p = log.probs(i, checkpoint, x).expect("soft predictions present");
                for (m, &v) in mean.iter_mut().zip(p) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            argmax_lowest(&mean) as u32
        })
        .collect();
    Ok(out)
}

/// Per-(example, class) agreement over a set of checkpoints.
///
/// `counts[x * C + c]` is the number of (checkpoint, network) pairs that
/// predicted `c` on `x`; the score is that count over `N * |subset|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementTable {
    num_classes: usize,
    denom: u32,
    counts: Vec<u32>,
    subset: EpochSubset,
}

impl AgreementTable {
    pub fn num_examples(&self) -> usize {
        self.counts.len() / self.num_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `N * |subset|`, the denominator shared by every score.
    pub fn denominator(&self) -> u32 {
        self.denom
    }

    pub fn subset(&self) -> &EpochSubset {
        &self.subset
    }

    pub fn count_row(&self, example: usize) -> &[u32] {
        let c = self.num_classes;
        &self.counts[example * c..(example + 1) * c]
    }

    pub fn score(&self, example: usize, class: usize) -> f64 {
        f64::from(self.counts[example * self.num_classes + class]) / f64::from(self.denom)
    }

    pub fn score_row(&self, example: usize) -> Vec<f64> {
        self.count_row(example)
            .iter()
            .map(|&k| f64::from(k) / f64::from(self.denom))
            .collect()
    }

    /// All scores, row-major `[T x C]`.
    pub fn scores(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&k| f64::from(k) / f64::from(self.denom))
            .collect()
    }

    /// Highest-agreement class per example.
    pub fn argmax(&self) -> Vec<u32> {
        self.counts
            .chunks_exact(self.num_classes)
            .map(|row| argmax_lowest(row) as u32)
            .collect()
    }
}

pub fn agreement(log: &PredictionLog, subset: &EpochSubset) -> Result<AgreementTable> {
    subset.check_against(log)?;
    let c = log.num_classes();
    let mut counts = vec![0u32; log.num_examples() * c];
    for x in 0..log.num_examples() {
        let row = &mut counts[x * c..(x + 1) * c];
        for &e in subset.indices() {
            for i in 0..log.num_networks() {
                row[log.pred(i, e, x) as usize] += 1;
            }
        }
    }
    let denom = u32::try_from(log.num_networks() * subset.len())
        .map_err(|_| Error::input("ensemble too large for 32-bit vote counts"))?;
    Ok(AgreementTable {
        num_classes: c,
        denom,
        counts,
        subset: subset.clone(),
    })
}

/// Max-agreement prediction: the class most often predicted across networks
/// and the chosen checkpoints.
pub fn map_predict(log: &PredictionLog, subset: &EpochSubset) -> Result<Vec<u32>> {
    Ok(agreement(log, subset)?.argmax())
}

/// Agreement margins of the final-checkpoint majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// `Agr(x, y) - max_{c != y} Agr(x, c)`, `y` the final-checkpoint vote.
    pub margins: Vec<f64>,
    pub final_vote: Vec<u32>,
    /// Whether `final_vote` matches the true label.
    pub correct_mask: Vec<bool>,
}

impl MarginReport {
    pub fn correct_margins(&self) -> Vec<f64> {
        self.split(true)
    }

    pub fn incorrect_margins(&self) -> Vec<f64> {
        self.split(false)
    }

    fn split(&self, correct: bool) -> Vec<f64> {
        self.margins
            .iter()
            .zip(&self.correct_mask)
            .filter(|(_, &ok)| ok == correct)
            .map(|(&m, _)| m)
            .collect()
    }
}

pub fn agr_margin(log: &PredictionLog, subset: &EpochSubset, labels: &LabelSet) -> Result<MarginReport> {
    if log.num_classes() < 2 {
        return Err(Error::input("agreement margin needs at least two classes"));
    }
    check_labels(log, labels)?;
    let table = agreement(log, subset)?;
    let final_vote = epoch_vote(log, log.final_checkpoint())?;
    let denom = f64::from(table.denominator());
    let margins = final_vote
        .iter()
        .enumerate()
        .map(|(x, &y)| {
            let row = table.count_row(x);
            let best_other = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != y as usize)
                .map(|(_, &k)| k)
                .max()
                .unwrap_or(0);
            (f64::from(row[y as usize]) - f64::from(best_other)) / denom
        })
        .collect();
    let correct_mask = final_vote
        .iter()
        .zip(labels.labels())
        .map(|(p, l)| p == l)
        .collect();
    Ok(MarginReport {
        margins,
        final_vote,
        correct_mask,
    })
}

/// Error consensus histogram at one checkpoint.
///
/// Counts (example, wrong class) pairs: an erroneous example where two
/// distinct wrong classes were predicted contributes one entry for each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcsHistogram {
    /// `counts[k - 1]` = number of pairs where exactly `k` networks agreed.
    pub counts: Vec<u64>,
    pub total_errors: u64,
}

impl EcsHistogram {
    /// Count for consensus size `k` in `1..=N`.
    pub fn count(&self, k: usize) -> u64 {
        self.counts[k - 1]
    }
}

pub fn ecs_histogram(log: &PredictionLog, labels: &LabelSet, checkpoint: usize) -> Result<EcsHistogram> {
    check_labels(log, labels)?;
    let votes = epoch_vote(log, checkpoint)?;
    let mut hist = EcsHistogram {
        counts: vec![0; log.num_networks()],
        total_errors: 0,
    };
    let mut per_class = vec![0usize; log.num_classes()];
    for (x, (&vote, &truth)) in votes.iter().zip(labels.labels()).enumerate() {
        if vote == truth {
            continue;
        }
        per_class.iter_mut().for_each(|k| *k = 0);
        for i in 0..log.num_networks() {
            per_class[log.pred(i, checkpoint, x) as usize] += 1;
        }
        for (class, &k) in per_class.iter().enumerate() {
            if class as u32 != truth && k > 0 {
                hist.counts[k - 1] += 1;
                hist.total_errors += 1;
            }
        }
    }
    Ok(hist)
}

/// `k` checkpoint positions spread evenly over `0..total`, always ending at
/// the final one. Position `i` is `round(i * (total - 1) / (k - 1))`, halves
/// rounded up.
pub fn subsample_epochs(total: usize, k: usize) -> Result<EpochSubset> {
    if k == 0 || k > total {
        return Err(Error::input(format!("cannot pick {k} of {total} checkpoints")));
    }
    if k == 1 {
        return EpochSubset::last(total);
    }
    let span = total - 1;
    let steps = k - 1;
    let indices = (0..k).map(|i| (2 * i * span + steps) / (2 * steps)).collect();
    EpochSubset::new(indices, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepRule {
    /// Majority vote at the final checkpoint.
    Majority,
    /// Max agreement over the given subset.
    Map,
}

/// Accuracy using only the first `n` networks, for `n = 1..=N`.
pub fn ensemble_size_sweep(
    log: &PredictionLog,
    labels: &LabelSet,
    subset: &EpochSubset,
    rule: SweepRule,
) -> Result<Vec<f64>> {
    check_labels(log, labels)?;
    subset.check_against(log)?;
    (1..=log.num_networks())
        .map(|n| {
            let sub = log.first_networks(n)?;
            let preds = match rule {
                SweepRule::Majority => epoch_vote(&sub, sub.final_checkpoint())?,
                SweepRule::Map => map_predict(&sub, subset)?,
            };
            accuracy(&preds, labels)
        })
        .collect()
}

/// MAP accuracy with `k` evenly spaced checkpoints, for `k = 1..=|checkpoints|`.
pub fn checkpoint_count_sweep(log: &PredictionLog, labels: &LabelSet) -> Result<Vec<f64>> {
    check_labels(log, labels)?;
    (1..=log.num_checkpoints())
        .map(|k| {
            let subset = subsample_epochs(log.num_checkpoints(), k)?;
            accuracy(&map_predict(log, &subset)?, labels)
        })
        .collect()
}

pub(crate) fn check_labels(log: &PredictionLog, labels: &LabelSet) -> Result<()> {
    if labels.len() != log.num_examples() {
        return Err(Error::input(format!(
            "label count {} does not match the log's {} examples",
            labels.len(),
            log.num_examples()
        )));
    }
    if labels.num_classes() != log.num_classes() {
        return Err(Error::input(format!(
            "labels declare {} classes, log declares {}",
            labels.num_classes(),
            log.num_classes()
        )));
    }
    Ok(())
}
