#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::PathBuf;

use agreekit::aggregate::{agr_margin, agreement, ecs_histogram, epoch_vote, map_predict};
use agreekit::error::{Error, FormatError};
use agreekit::io::{decode_log, encode_log};
use agreekit::noise::inject_symmetric;
use agreekit::toytrain::{ModelSpec, Network};
use agreekit::{Checkpoint, EpochSubset, LabelSet, PredictionLog};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

/// Exact fraction with a positive denominator, always reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0);
        let g = gcd(num, den).max(1) * den.signum();
        Ratio { num: num / g, den: den / g }
    }

    pub fn zero() -> Self {
        Ratio { num: 0, den: 1 }
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn sub(self, o: Ratio) -> Ratio {
        self.add(Ratio { num: -o.num, den: o.den })
    }

    pub fn div_int(self, k: i64) -> Ratio {
        Ratio::new(self.num, self.den * k)
    }

    /// Nearest f64; exact when the reduced fraction is representable.
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Ratio {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

fn argmax_first<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub struct Case {
    pub log: PredictionLog,
    pub labels: LabelSet,
    pub subset: EpochSubset,
}

/// Random small log: N ≤ 4, at most 3 checkpoints, T ≤ 10, C ≤ 4.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=3);
    let t = rng.gen_range(1..=10);
    let c = rng.gen_range(1..=4);
    let hard: Vec<u32> = (0..n * k * t).map(|_| rng.gen_range(0..c as u32)).collect();
    let checkpoints = (1..=k as u32).map(Checkpoint::epoch).collect();
    let log = PredictionLog::new(n, checkpoints, t, c, hard, None).unwrap();
    let labels = LabelSet::new((0..t).map(|_| rng.gen_range(0..c as u32)).collect(), c).unwrap();
    let size = rng.gen_range(1..=k);
    let mut idx = sample(rng, k, size).into_vec();
    idx.sort_unstable();
    let subset = EpochSubset::new(idx, k).unwrap();
    Case { log, labels, subset }
}

/// Agr(x, c) from its defining double average, in exact arithmetic.
pub fn brute_agreement(log: &PredictionLog, subset: &[usize]) -> Vec<Vec<Ratio>> {
    let n = log.num_networks() as i64;
    (0..log.num_examples())
        .map(|x| {
            (0..log.num_classes())
                .map(|c| {
                    let mut outer = Ratio::zero();
                    for &e in subset {
                        let mut inner = Ratio::zero();
                        for i in 0..log.num_networks() {
                            if log.pred(i, e, x) as usize == c {
                                inner = inner.add(Ratio::new(1, n));
                            }
                        }
                        outer = outer.add(inner);
                    }
                    outer.div_int(subset.len() as i64)
                })
                .collect()
        })
        .collect()
}

pub fn brute_vote(log: &PredictionLog, e: usize) -> Vec<u32> {
    brute_agreement(log, &[e]).iter().map(|row| argmax_first(row) as u32).collect()
}

/// Checks every aggregation operation against enumeration; returns the
/// first disagreement.
pub fn oracle_check(case: &Case) -> Result<(), String> {
    let Case { log, labels, subset } = case;
    let brute = brute_agreement(log, subset.indices());
    let table = agreement(log, subset).map_err(|e| e.to_string())?;
    for (x, row) in brute.iter().enumerate() {
        for (c, r) in row.iter().enumerate() {
            let got = Ratio::new(i64::from(table.count_row(x)[c]), i64::from(table.denominator()));
            if got != *r || table.score(x, c) != r.to_f64() {
                return Err(format!("agreement ({x},{c}): {got:?} vs {r:?}"));
            }
        }
    }
    let map = map_predict(log, subset).map_err(|e| e.to_string())?;
    let want: Vec<u32> = brute.iter().map(|row| argmax_first(row) as u32).collect();
    if map != want {
        return Err(format!("map_predict {map:?} vs {want:?}"));
    }
    for e in 0..log.num_checkpoints() {
        let got = epoch_vote(log, e).map_err(|e| e.to_string())?;
        if got != brute_vote(log, e) {
            return Err(format!("epoch_vote at {e}"));
        }
    }

    let last = log.final_checkpoint();
    let vote = brute_vote(log, last);
    if log.num_classes() >= 2 {
        let report = agr_margin(log, subset, labels).map_err(|e| e.to_string())?;
        for (x, row) in brute.iter().enumerate() {
            let y = vote[x] as usize;
            let best_other = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != y)
                .map(|(_, r)| *r)
                .max()
                .unwrap();
            let m = row[y].sub(best_other);
            if report.margins[x] != m.to_f64() || report.margins[x] > 1.0 {
                return Err(format!("margin at {x}: {} vs {m:?}", report.margins[x]));
            }
            if report.correct_mask[x] != (vote[x] == labels.labels()[x]) {
                return Err(format!("correct flag at {x}"));
            }
        }
    } else if agr_margin(log, subset, labels).is_ok() {
        return Err("agr_margin accepted a one-class log".into());
    }

    let hist = ecs_histogram(log, labels, last).map_err(|e| e.to_string())?;
    let mut counts = vec![0u64; log.num_networks()];
    for x in 0..log.num_examples() {
        let truth = labels.labels()[x];
        if vote[x] == truth {
            continue;
        }
        for c in 0..log.num_classes() as u32 {
            if c == truth {
                continue;
            }
            let k = (0..log.num_networks()).filter(|&i| log.pred(i, last, x) == c).count();
            if k > 0 {
                counts[k - 1] += 1;
            }
        }
    }
    if hist.counts != counts || hist.total_errors != counts.iter().sum::<u64>() {
        return Err(format!("ecs {:?} vs {counts:?}", hist.counts));
    }
    Ok(())
}

/// The three degenerate identities; returns the first that fails.
pub fn degeneracy_check(case: &Case) -> Result<(), String> {
    let log = &case.log;
    let k = log.num_checkpoints();
    let last = EpochSubset::last(k).unwrap();
    if map_predict(log, &last).unwrap() != epoch_vote(log, log.final_checkpoint()).unwrap() {
        return Err("MAP over the final checkpoint differs from its vote".into());
    }
    for e in 0..k {
        let single = EpochSubset::new(vec![e], k).unwrap();
        let table = agreement(log, &single).unwrap();
        for x in 0..log.num_examples() {
            for c in 0..log.num_classes() {
                let votes = (0..log.num_networks()).filter(|&i| log.pred(i, e, x) as usize == c).count();
                if table.score(x, c) != votes as f64 / log.num_networks() as f64 {
                    return Err(format!("single-checkpoint row ({e},{x},{c})"));
                }
            }
        }
    }
    let one = log.first_networks(1).unwrap();
    let map = map_predict(&one, &case.subset).unwrap();
    for (x, &m) in map.iter().enumerate() {
        let mut freq = vec![0usize; log.num_classes()];
        for &e in case.subset.indices() {
            freq[one.pred(0, e, x) as usize] += 1;
        }
        if m as usize != argmax_first(&freq) {
            return Err(format!("one-network MAP at {x}"));
        }
    }
    Ok(())
}

pub struct NoiseStats {
    pub counts_exact: bool,
    pub chi2_p_value: f64,
    pub reproducible: bool,
}

/// Corruption count, replacement uniformity and reproducibility of the
/// symmetric injector on uniformly drawn labels.
pub fn noise_stats(t: usize, c: usize, p: f64, seed: u64) -> NoiseStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let clean = LabelSet::new((0..t).map(|_| rng.gen_range(0..c as u32)).collect(), c).unwrap();
    let (noisy, mask) = inject_symmetric(&clean, p, seed).unwrap();
    let (again, mask2) = inject_symmetric(&clean, p, seed).unwrap();
    let marked = mask.iter().filter(|&&m| m).count();
    let changed = clean.labels().iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
    let expected = (p * t as f64).round() as usize;

    // Rank of the replacement among the C - 1 classes other than the original.
    let mut freq = vec![0f64; c - 1];
    for ((&y, &z), &m) in clean.labels().iter().zip(noisy.labels()).zip(&mask) {
        if m {
            let r = if z > y { z - 1 } else { z };
            freq[r as usize] += 1.0;
        }
    }
    let e = marked as f64 / (c - 1) as f64;
    let stat: f64 = freq.iter().map(|o| (o - e) * (o - e) / e).sum();
    let chi = ChiSquared::new((c - 2) as f64).unwrap();
    NoiseStats {
        counts_exact: marked == expected && changed == expected,
        chi2_p_value: 1.0 - chi.cdf(stat),
        reproducible: noisy == again && mask == mask2,
    }
}

/// Worst relative error between the analytic gradient and central
/// differences over `probes` random (weights, batch) draws.
pub fn gradient_probe(spec: &ModelSpec, probes: usize, seed: u64) -> f64 {
    let (dim, classes, batch) = (5, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    for _ in 0..probes {
        let mut net = Network::init(spec, dim, classes, &mut rng);
        // Spread the weights beyond the init range so the softmax is not flat.
        for p in net.params_mut() {
            *p *= rng.gen_range(0.5..3.0);
        }
        let inputs: Vec<f64> = (0..batch * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<u32> = (0..batch).map(|_| rng.gen_range(0..classes as u32)).collect();
        let (_, grad) = net.loss_and_grad(&inputs, &labels);
        let h = 1e-5;
        let mut fd = vec![0.0; grad.len()];
        for j in 0..grad.len() {
            let orig = net.params()[j];
            net.params_mut()[j] = orig + h;
            let up = net.loss(&inputs, &labels);
            net.params_mut()[j] = orig - h;
            let down = net.loss(&inputs, &labels);
            net.params_mut()[j] = orig;
            fd[j] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Random log with probabilities; the hard predictions are their argmax.
pub fn random_soft_log(rng: &mut ChaCha8Rng, n: usize, k: usize, t: usize, c: usize) -> PredictionLog {
    let cells = n * k * t;
    let mut soft = Vec::with_capacity(cells * c);
    let mut hard = Vec::with_capacity(cells);
    for _ in 0..cells {
        let raw: Vec<f32> = (0..c).map(|_| rng.gen_range(0.01f32..1.0)).collect();
        let sum: f32 = raw.iter().sum();
        let p: Vec<f32> = raw.iter().map(|v| v / sum).collect();
        hard.push(argmax_first(&p) as u32);
        soft.extend(p);
    }
    let checkpoints = (0..k as u32).map(|e| Checkpoint::new(e + 1, 2).unwrap()).collect();
    PredictionLog::new(n, checkpoints, t, c, hard, Some(soft)).unwrap()
}

/// Encode/decode round trip is lossless and re-encoding is byte-identical.
pub fn round_trip_check(log: &PredictionLog) -> Result<(), String> {
    let bytes = encode_log(log);
    let back = decode_log(&bytes).map_err(|e| e.to_string())?;
    if &back != log {
        return Err("decoded log differs".into());
    }
    if encode_log(&back) != bytes {
        return Err("re-encoded bytes differ".into());
    }
    Ok(())
}

fn format_kind(r: agreekit::Result<PredictionLog>) -> &'static str {
    match r {
        Err(Error::Format(FormatError::BadMagic(_))) => "magic",
        Err(Error::Format(FormatError::UnsupportedVersion(_))) => "version",
        Err(Error::Format(FormatError::CrcMismatch { .. })) => "crc",
        Err(Error::Format(FormatError::DimMismatch { .. })) => "dims",
        Err(Error::Format(FormatError::Malformed(_))) => "malformed",
        Err(_) => "other",
        Ok(_) => "ok",
    }
}

/// Each corruption maps to its own error variant.
pub fn corruption_check(log: &PredictionLog) -> Result<(), String> {
    let good = encode_log(log);
    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut b = good.clone();
    b[0] ^= 0xff;
    cases.push(("magic", b));
    let mut b = good.clone();
    b[4] = 9;
    cases.push(("version", b));
    let mut b = good.clone();
    let mid = good.len() - 6;
    b[mid] ^= 0x01;
    cases.push(("crc", b));
    let mut b = good.clone();
    let last = b.len() - 1;
    b[last] ^= 0x80;
    cases.push(("crc", b));
    cases.push(("dims", good[..good.len() - 3].to_vec()));
    let mut b = good.clone();
    b.push(0);
    cases.push(("dims", b));
    let mut b = good.clone();
    b[6] = b[6].wrapping_add(1);
    cases.push(("dims", b));
    let mut b = good.clone();
    b[22] = 0x82;
    cases.push(("malformed", b));
    for (want, bytes) in cases {
        let got = format_kind(decode_log(&bytes));
        if got != want {
            return Err(format!("expected a {want} error, got {got}"));
        }
    }
    Ok(())
}

pub fn theory_config() -> agreekit::theory::TheoryConfig {
    let m = agreekit::io::RunManifest::read(&asset("theory_manifest.json")).unwrap();
    match m.run {
        agreekit::io::RunSpec::Theory { theory } => theory,
        _ => panic!("theory manifest holds a toy run"),
    }
}

pub fn gaussian_problem(d: usize, m: usize, nt: usize, seed: u64) -> agreekit::theory::RegressionProblem {
    use nalgebra::{DMatrix, DVector};
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = |r, c| DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let x = g(d, m);
    let xt = g(d, nt);
    let y: DVector<f64> = g(m, 1).column(0).into();
    let yt: DVector<f64> = g(nt, 1).column(0).into();
    agreekit::theory::RegressionProblem::new(x, y, xt, yt, 0.0).unwrap()
}

pub struct Lemma1Summary {
    pub states: usize,
    pub sign_failures: usize,
    pub slope_min: f64,
    pub slope_max: f64,
}

/// Sign equivalence below each state's reported threshold and the order of
/// the residual, over `states` random problems and ensembles.
pub fn lemma1_suite(states: usize, seed: u64) -> Lemma1Summary {
    use agreekit::theory::{lemma1_check, log_space, RegressionEnsembleState};
    let mut out = Lemma1Summary {
        states,
        sign_failures: 0,
        slope_min: f64::INFINITY,
        slope_max: f64::NEG_INFINITY,
    };
    for k in 0..states as u64 {
        let problem = gaussian_problem(6, 10, 30, seed.wrapping_add(k));
        let state = RegressionEnsembleState::random(&problem, 3, 1.0, seed ^ (k << 8)).unwrap();
        let cap = problem.max_stable_mu();
        let probe = lemma1_check(&state, &problem, 0, &[cap]).unwrap();
        let mu_star = probe.threshold.map_or(cap, |t| t.min(cap));
        let report = lemma1_check(&state, &problem, 0, &log_space(mu_star * 1e-3, mu_star * 0.999, 9)).unwrap();
        if report.points.iter().any(|p| !p.signs_agree) {
            out.sign_failures += 1;
        }
        let slope = report.residual_exponent.unwrap_or(f64::NAN);
        out.slope_min = out.slope_min.min(slope);
        out.slope_max = out.slope_max.max(slope);
    }
    out
}

/// Steps needed for `ρ^(s−1) < 1e-9` and the zero-init mean deviation there.
pub fn lemma2_zero_init(problem: &agreekit::theory::RegressionProblem) -> (usize, f64) {
    let rho = problem.contraction_norm();
    let s = 1 + (1e-9f64.ln() / rho.ln()).floor() as usize + 1;
    assert!(rho.powi(s as i32 - 1) < 1e-9);
    let r = agreekit::theory::lemma2_check(problem, 4, s, 0.0, 0).unwrap();
    (s, r.deviation)
}
