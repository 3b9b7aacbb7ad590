mod common;

use agreekit::noise::{cyclic_permutation, inject_asymmetric, inject_symmetric, NoiseKind, NoiseSpec};
use agreekit::LabelSet;
use proptest::prelude::*;

#[test]
fn symmetric_replacements_are_uniform() {
    let s = common::noise_stats(100_000, 10, 0.4, 31);
    assert!(s.counts_exact);
    assert!(s.reproducible);
    assert!(s.chi2_p_value > 0.01, "chi-square p = {}", s.chi2_p_value);
}

#[test]
fn thousand_labels_forty_percent() {
    let s = common::noise_stats(1000, 10, 0.4, 5);
    assert!(s.counts_exact && s.reproducible);
    assert!(s.chi2_p_value > 0.01, "chi-square p = {}", s.chi2_p_value);
}

#[test]
fn spec_defaults_to_cyclic_shift() {
    let y = LabelSet::new((0..40).map(|i| i % 4).collect(), 4).unwrap();
    let spec = NoiseSpec {
        kind: NoiseKind::Asymmetric,
        fraction: 0.5,
        permutation: None,
        seed: 3,
    };
    let via_spec = spec.apply(&y).unwrap();
    assert_eq!(via_spec, inject_asymmetric(&y, 0.5, &cyclic_permutation(4), 3).unwrap());
    assert!(inject_asymmetric(&y, 0.5, &[0, 2, 3, 1], 3).is_err());
    assert!(inject_asymmetric(&y, 0.5, &[1, 1, 3, 0], 3).is_err());
}

proptest! {
    #[test]
    fn counts_are_rounded_fraction(t in 1usize..400, c in 2usize..8, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let y = LabelSet::new((0..t).map(|i| (i % c) as u32).collect(), c).unwrap();
        let want = (p * t as f64).round() as usize;
        let (sym, mask) = inject_symmetric(&y, p, seed).unwrap();
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), want);
        for ((a, b), &m) in sym.labels().iter().zip(y.labels()).zip(&mask) {
            prop_assert_eq!(a != b, m);
        }
        let (asym, mask) = inject_asymmetric(&y, p, &cyclic_permutation(c), seed).unwrap();
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), want);
        for ((a, b), &m) in asym.labels().iter().zip(y.labels()).zip(&mask) {
            prop_assert_eq!(*a, if m { (*b + 1) % c as u32 } else { *b });
        }
    }
}
