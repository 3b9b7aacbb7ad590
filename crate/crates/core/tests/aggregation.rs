mod common;

use agreekit::aggregate::{agr_margin, agreement, ecs_histogram, epoch_vote, map_predict, subsample_epochs};
use agreekit::metrics::accuracy;
use agreekit::{Checkpoint, EpochSubset, LabelSet, PredictionLog};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{degeneracy_check, oracle_check, random_case};

#[test]
fn matches_brute_force_on_random_logs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..1500 {
        let case = random_case(&mut rng);
        if let Err(msg) = oracle_check(&case) {
            panic!("log {n}: {msg}");
        }
    }
}

#[test]
fn degenerate_subsets_and_ensembles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in 0..500 {
        let case = random_case(&mut rng);
        if let Err(msg) = degeneracy_check(&case) {
            panic!("log {n}: {msg}");
        }
    }
}

// Three networks, two checkpoints, four examples over three classes.
fn hand_log() -> (PredictionLog, LabelSet) {
    #[rustfmt::skip]
    let hard = vec![
        0, 1, 2, 2,   0, 1, 1, 2,
        0, 2, 2, 1,   1, 1, 1, 0,
        1, 2, 0, 1,   1, 2, 0, 0,
    ];
    let log = PredictionLog::new(3, vec![Checkpoint::epoch(1), Checkpoint::epoch(2)], 4, 3, hard, None).unwrap();
    (log, LabelSet::new(vec![0, 1, 2, 1], 3).unwrap())
}

#[test]
fn hand_log_values() {
    let (log, labels) = hand_log();
    assert_eq!(epoch_vote(&log, 1).unwrap(), vec![1, 1, 1, 0]);
    let all = EpochSubset::all(2).unwrap();
    assert_eq!(agreement(&log, &all).unwrap().count_row(0), &[3, 3, 0]);
    // Three-way and two-way ties resolve to the lowest class.
    assert_eq!(map_predict(&log, &all).unwrap(), vec![0, 1, 0, 0]);
    let m = agr_margin(&log, &all, &labels).unwrap();
    assert_eq!(m.margins, vec![0.0, 0.0, 0.0, 0.0]);
    assert_eq!(m.correct_mask, vec![false, true, false, false]);
    // Wrong pairs at the final checkpoint: (0,1)x2, (2,0)x1, (2,1)x2, (3,0)x2, (3,2)x1.
    let ecs = ecs_histogram(&log, &labels, 1).unwrap();
    assert_eq!(ecs.counts, vec![2, 3, 0]);
    assert_eq!(ecs.total_errors, 5);
}

#[test]
fn subsample_positions() {
    assert_eq!(subsample_epochs(200, 10).unwrap().indices(), &[0, 22, 44, 66, 88, 111, 133, 155, 177, 199]);
    assert_eq!(subsample_epochs(5, 5).unwrap().indices(), &[0, 1, 2, 3, 4]);
    assert_eq!(subsample_epochs(7, 1).unwrap().indices(), &[6]);
    assert!(subsample_epochs(3, 4).is_err());
    assert!(subsample_epochs(3, 0).is_err());
}

prop_compose! {
    fn arb_log()(n in 1usize..5, k in 1usize..4, t in 1usize..12, c in 2usize..5)
        (hard in proptest::collection::vec(0..c as u32, n * k * t),
         labels in proptest::collection::vec(0..c as u32, t),
         perm in Just((0..t).collect::<Vec<_>>()).prop_shuffle(),
         nperm in Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
         n in Just(n), k in Just(k), t in Just(t), c in Just(c))
        -> (PredictionLog, LabelSet, Vec<usize>, Vec<usize>)
    {
        let ck = (1..=k as u32).map(Checkpoint::epoch).collect();
        (
            PredictionLog::new(n, ck, t, c, hard, None).unwrap(),
            LabelSet::new(labels, c).unwrap(),
            perm,
            nperm,
        )
    }
}

fn permute_examples(log: &PredictionLog, labels: &LabelSet, perm: &[usize]) -> (PredictionLog, LabelSet) {
    let (n, k, t) = (log.num_networks(), log.num_checkpoints(), log.num_examples());
    let mut hard = Vec::with_capacity(n * k * t);
    for i in 0..n {
        for e in 0..k {
            hard.extend(perm.iter().map(|&x| log.pred(i, e, x)));
        }
    }
    let y = perm.iter().map(|&x| labels.labels()[x]).collect();
    (
        PredictionLog::new(n, log.checkpoints().to_vec(), t, log.num_classes(), hard, None).unwrap(),
        LabelSet::new(y, labels.num_classes()).unwrap(),
    )
}

fn permute_networks(log: &PredictionLog, perm: &[usize]) -> PredictionLog {
    let (k, t) = (log.num_checkpoints(), log.num_examples());
    let mut hard = Vec::new();
    for &i in perm {
        for e in 0..k {
            hard.extend((0..t).map(|x| log.pred(i, e, x)));
        }
    }
    PredictionLog::new(perm.len(), log.checkpoints().to_vec(), t, log.num_classes(), hard, None).unwrap()
}

proptest! {
    #[test]
    fn rows_partition_unit_mass((log, _, _, _) in arb_log()) {
        let table = agreement(&log, &EpochSubset::all(log.num_checkpoints()).unwrap()).unwrap();
        for x in 0..log.num_examples() {
            prop_assert_eq!(table.count_row(x).iter().sum::<u32>(), table.denominator());
            let s: f64 = table.score_row(x).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(table.score_row(x).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn example_permutation_equivariance((log, labels, perm, _) in arb_log()) {
        let (plog, plabels) = permute_examples(&log, &labels, &perm);
        let all = EpochSubset::all(log.num_checkpoints()).unwrap();
        let map = map_predict(&log, &all).unwrap();
        let pmap = map_predict(&plog, &all).unwrap();
        prop_assert_eq!(perm.iter().map(|&x| map[x]).collect::<Vec<_>>(), pmap.clone());
        let m = agr_margin(&log, &all, &labels).unwrap();
        let pm = agr_margin(&plog, &all, &plabels).unwrap();
        prop_assert_eq!(perm.iter().map(|&x| m.margins[x]).collect::<Vec<_>>(), pm.margins);
        prop_assert_eq!(accuracy(&map, &labels).unwrap(), accuracy(&pmap, &plabels).unwrap());
        let e = log.final_checkpoint();
        prop_assert_eq!(ecs_histogram(&log, &labels, e).unwrap(), ecs_histogram(&plog, &plabels, e).unwrap());
    }

    #[test]
    fn network_order_is_irrelevant((log, labels, _, nperm) in arb_log()) {
        let plog = permute_networks(&log, &nperm);
        let all = EpochSubset::all(log.num_checkpoints()).unwrap();
        prop_assert_eq!(agreement(&log, &all).unwrap(), agreement(&plog, &all).unwrap());
        let e = log.final_checkpoint();
        prop_assert_eq!(ecs_histogram(&log, &labels, e).unwrap(), ecs_histogram(&plog, &labels, e).unwrap());
    }

    #[test]
    fn ecs_and_margin_bounds((log, labels, _, _) in arb_log()) {
        let e = log.final_checkpoint();
        let h = ecs_histogram(&log, &labels, e).unwrap();
        prop_assert_eq!(h.counts.len(), log.num_networks());
        prop_assert_eq!(h.counts.iter().sum::<u64>(), h.total_errors);
        let m = agr_margin(&log, &EpochSubset::all(log.num_checkpoints()).unwrap(), &labels).unwrap();
        prop_assert!(m.margins.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn accuracy_joint_shuffle(pairs in proptest::collection::vec((0u32..5, 0u32..5), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (p, y): (Vec<u32>, Vec<u32>) = pairs.iter().cloned().unzip();
        let a = accuracy(&p, &LabelSet::new(y, 5).unwrap()).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p2, y2): (Vec<u32>, Vec<u32>) = shuffled.into_iter().unzip();
        prop_assert_eq!(a, accuracy(&p2, &LabelSet::new(y2, 5).unwrap()).unwrap());
    }

    #[test]
    fn subsample_is_valid_and_ends_last(total in 1usize..300, k in 1usize..300) {
        prop_assume!(k <= total);
        let s = subsample_epochs(total, k).unwrap();
        prop_assert_eq!(s.len(), k);
        prop_assert_eq!(*s.indices().last().unwrap(), total - 1);
        if k > 1 {
            prop_assert_eq!(s.indices()[0], 0);
        }
    }
}
