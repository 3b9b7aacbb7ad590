use serde::{Deserialize, Serialize};

use crate::aggregate::{check_labels, epoch_vote, prob_average_vote};
use crate::error::{Error, Result};
use crate::log::{argmax_lowest, LabelSet, PredictionLog};

/// Fraction of positions where `preds` matches `labels`.
pub fn accuracy(preds: &[u32], labels: &LabelSet) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::input("accuracy of an empty prediction vector"));
    }
    let hits = preds.iter().zip(labels.labels()).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// How an ensemble's predictions at (or up to) a checkpoint become one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// One network's own prediction.
    Single(usize),
    Majority,
    ProbAverage,
    /// Max agreement over every checkpoint up to and including the current one.
    MapPrefix,
}

/// Accuracy at every checkpoint under `rule`.
pub fn accuracy_curve(log: &PredictionLog, labels: &LabelSet, rule: AggregationRule) -> Result<Vec<f64>> {
    check_labels(log, labels)?;
    let k = log.num_checkpoints();
    match rule {
        AggregationRule::Single(i) => {
            if i >= log.num_networks() {
                return Err(Error::input(format!("network {i} not in a {}-network log", log.num_networks())));
            }
            (0..k)
                .map(|e| {
                    let preds: Vec<u32> = (0..log.num_examples()).map(|x| log.pred(i, e, x)).collect();
                    accuracy(&preds, labels)
                })
                .collect()
        }
        AggregationRule::Majority => (0..k).map(|e| accuracy(&epoch_vote(log, e)?, labels)).collect(),
        AggregationRule::ProbAverage => (0..k)
            .map(|e| accuracy(&prob_average_vote(log, e)?, labels))
            .collect(),
        AggregationRule::MapPrefix => map_prefix_curve(log, labels),
    }
}

// Running vote counts: checkpoint e adds its votes on top of 0..e.
fn map_prefix_curve(log: &PredictionLog, labels: &LabelSet) -> Result<Vec<f64>> {
    let c = log.num_classes();
    let t = log.num_examples();
    let mut counts = vec![0u32; t * c];
    let mut curve = Vec::with_capacity(log.num_checkpoints());
    for e in 0..log.num_checkpoints() {
        for x in 0..t {
            for i in 0..log.num_networks() {
                counts[x * c + log.pred(i, e, x) as usize] += 1;
            }
        }
        let preds: Vec<u32> = counts.chunks_exact(c).map(|row| argmax_lowest(row) as u32).collect();
        curve.push(accuracy(&preds, labels)?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::map_predict;
    use crate::log::{Checkpoint, EpochSubset};

    fn labels(v: &[u32], c: usize) -> LabelSet {
        LabelSet::new(v.to_vec(), c).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &labels(&[0, 1, 2], 3)).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 0], &labels(&[1, 1, 1], 3)).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1], &labels(&[0, 1, 2], 3)).unwrap(), 2.0 / 3.0);
        assert!(accuracy(&[0, 1], &labels(&[0, 1, 2], 3)).is_err());
    }

    // 3 networks, 2 checkpoints, 2 examples.
    fn tiny_log() -> PredictionLog {
        // network-major: [net][ckpt][example]
        let hard = vec![
            0, 1, /* n0 e1 */ 1, 1, /* n0 e2 */
            1, 0, /* n1 e1 */ 1, 2, /* n1 e2 */
            1, 1, /* n2 e1 */ 2, 2, /* n2 e2 */
        ];
        PredictionLog::new(3, vec![Checkpoint::epoch(1), Checkpoint::epoch(2)], 2, 3, hard, None).unwrap()
    }

    #[test]
    fn tiny_log_curves_match_hand_enumeration() {
        let log = tiny_log();
        let y = labels(&[1, 1], 3);
        // e1 votes: x0 {0,1,1} -> 1, x1 {1,0,1} -> 1. e2: x0 {1,1,2} -> 1, x1 {1,2,2} -> 2.
        assert_eq!(accuracy_curve(&log, &y, AggregationRule::Majority).unwrap(), vec![1.0, 0.5]);
        // Prefix MAP at e2: x0 counts {0:1,1:4,2:1} -> 1, x1 {0:1,1:3,2:2} -> 1.
        assert_eq!(accuracy_curve(&log, &y, AggregationRule::MapPrefix).unwrap(), vec![1.0, 1.0]);
        assert_eq!(accuracy_curve(&log, &y, AggregationRule::Single(0)).unwrap(), vec![0.5, 1.0]);
        assert_eq!(accuracy_curve(&log, &y, AggregationRule::Single(2)).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            accuracy_curve(&log, &y, AggregationRule::ProbAverage),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn prefix_curve_matches_direct_map() {
        let log = tiny_log();
        let y = labels(&[0, 2], 3);
        let curve = accuracy_curve(&log, &y, AggregationRule::MapPrefix).unwrap();
        for (e, &acc) in curve.iter().enumerate() {
            let preds = map_predict(&log, &EpochSubset::prefix(e, 2).unwrap()).unwrap();
            assert_eq!(acc, accuracy(&preds, &y).unwrap());
        }
    }

    #[test]
    fn single_rule_on_always_right_network() {
        let hard = vec![0, 1, 0, 1, 1, 1, 0, 0];
        let log = PredictionLog::new(2, vec![Checkpoint::epoch(1), Checkpoint::epoch(2)], 2, 2, hard, None).unwrap();
        let y = labels(&[0, 1], 2);
        assert_eq!(accuracy_curve(&log, &y, AggregationRule::Single(0)).unwrap(), vec![1.0, 1.0]);
    }
}
