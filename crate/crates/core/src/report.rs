//! Tables and run drivers behind the command-line tool.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::aggregate::{
    agr_margin, checkpoint_count_sweep, ecs_histogram, ensemble_size_sweep, map_predict, subsample_epochs,
    MarginReport, SweepRule,
};
use crate::error::{Error, Result};
use crate::io::{cell, labels_to_json, sha256_hex, write_atomic, write_log, Provenance, RunManifest, RunSpec, Table};
use crate::log::{EpochSubset, LabelSet, PredictionLog};
use crate::metrics::{accuracy, accuracy_curve, AggregationRule};
use crate::theory::{run_theory, TheoryRunReport};
use crate::toytrain::{make_dataset, train_ensemble, TrainOutput};

pub const LOG_FILE: &str = "log.eplg";
pub const LABELS_FILE: &str = "labels.json";
pub const TRAIN_ACCURACY_FILE: &str = "train_accuracy.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const THEOREM_JSON: &str = "theorem.json";
pub const THEOREM_CSV: &str = "theorem.csv";

/// Where a table's inputs came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Source {
    pub manifest_sha256: Option<String>,
    pub input_sha256: Option<String>,
}

impl Source {
    fn provenance(&self, schema: &str) -> Provenance {
        Provenance::new(schema, self.manifest_sha256.clone(), self.input_sha256.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochChoice {
    All,
    Last,
    /// `k` evenly spaced checkpoints ending at the final one.
    Count(usize),
}

impl EpochChoice {
    pub fn subset(&self, num_checkpoints: usize) -> Result<EpochSubset> {
        match *self {
            EpochChoice::All => EpochSubset::all(num_checkpoints),
            EpochChoice::Last => EpochSubset::last(num_checkpoints),
            EpochChoice::Count(k) => subsample_epochs(num_checkpoints, k),
        }
    }
}

impl FromStr for EpochChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(EpochChoice::All),
            "last" => Ok(EpochChoice::Last),
            _ => s
                .parse::<usize>()
                .map(EpochChoice::Count)
                .map_err(|_| format!("expected all, last or a checkpoint count, got {s:?}")),
        }
    }
}

impl std::fmt::Display for EpochChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpochChoice::All => f.write_str("all"),
            EpochChoice::Last => f.write_str("last"),
            EpochChoice::Count(k) => write!(f, "{k}"),
        }
    }
}

fn restrict(log: &PredictionLog, networks: Option<usize>) -> Result<PredictionLog> {
    match networks {
        Some(n) => log.first_networks(n),
        None => Ok(log.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapResult {
    pub schema: String,
    pub toolkit_version: String,
    pub manifest_sha256: Option<String>,
    pub input_sha256: Option<String>,
    pub epochs: String,
    pub networks: usize,
    pub accuracy: f64,
    pub predictions: Vec<u32>,
}

impl MapResult {
    pub fn to_table(&self, labels: &LabelSet) -> Table {
        let prov = Provenance::new(&self.schema, self.manifest_sha256.clone(), self.input_sha256.clone());
        let mut t = Table::new(prov, &["example", "prediction", "label", "correct"]);
        t.note("epochs", &self.epochs);
        t.note("networks", self.networks);
        t.note("accuracy", self.accuracy);
        for (x, (&p, &y)) in self.predictions.iter().zip(labels.labels()).enumerate() {
            t.push(vec![cell(x), cell(p), cell(y), cell(u8::from(p == y))]);
        }
        t
    }
}

pub fn map_result(
    log: &PredictionLog,
    labels: &LabelSet,
    epochs: EpochChoice,
    networks: Option<usize>,
    src: &Source,
) -> Result<MapResult> {
    let log = restrict(log, networks)?;
    let subset = epochs.subset(log.num_checkpoints())?;
    let predictions = map_predict(&log, &subset)?;
    let prov = src.provenance("map/1");
    Ok(MapResult {
        schema: prov.schema,
        toolkit_version: prov.toolkit_version,
        manifest_sha256: prov.manifest_sha256,
        input_sha256: prov.input_sha256,
        epochs: epochs.to_string(),
        networks: log.num_networks(),
        accuracy: accuracy(&predictions, labels)?,
        predictions,
    })
}

/// Per-checkpoint accuracies of single networks, majority vote, probability
/// averaging (empty without probabilities) and prefix max agreement.
pub fn baselines_table(log: &PredictionLog, labels: &LabelSet, src: &Source) -> Result<Table> {
    let singles = (0..log.num_networks())
        .map(|i| accuracy_curve(log, labels, AggregationRule::Single(i)))
        .collect::<Result<Vec<_>>>()?;
    let majority = accuracy_curve(log, labels, AggregationRule::Majority)?;
    let prob = match accuracy_curve(log, labels, AggregationRule::ProbAverage) {
        Ok(v) => Some(v),
        Err(Error::Capability(_)) => None,
        Err(e) => return Err(e),
    };
    let map = accuracy_curve(log, labels, AggregationRule::MapPrefix)?;
    let mut t = Table::new(
        src.provenance("baselines/1"),
        &["epoch", "checkpoint", "single_mean", "single_min", "single_max", "majority", "prob_average", "map_prefix"],
    );
    for (e, cp) in log.checkpoints().iter().enumerate() {
        let vals: Vec<f64> = singles.iter().map(|s| s[e]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        t.push(vec![
            cell(cp.as_f64()),
            cell(cp),
            cell(mean),
            cell(min),
            cell(max),
            cell(majority[e]),
            prob.as_ref().map(|p| p[e].to_string()),
            cell(map[e]),
        ]);
    }
    Ok(t)
}

pub fn ecs_table(log: &PredictionLog, labels: &LabelSet, checkpoint: Option<usize>, src: &Source) -> Result<Table> {
    let e = checkpoint.unwrap_or(log.final_checkpoint());
    let hist = ecs_histogram(log, labels, e)?;
    let mut t = Table::new(src.provenance("ecs/1"), &["k", "count"]);
    t.note("checkpoint", log.checkpoints()[e]);
    t.note("total_errors", hist.total_errors);
    for (k, c) in hist.counts.iter().enumerate() {
        t.push(vec![cell(k + 1), cell(c)]);
    }
    Ok(t)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginSummary {
    pub incorrect_median: Option<f64>,
    pub correct_p10: Option<f64>,
    pub correct_positive_fraction: Option<f64>,
}

pub fn margin_summary(report: &MarginReport) -> MarginSummary {
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        v
    };
    let inc = sorted(report.incorrect_margins());
    let cor = sorted(report.correct_margins());
    MarginSummary {
        incorrect_median: quantile(&inc, 0.5),
        correct_p10: quantile(&cor, 0.1),
        correct_positive_fraction: (!cor.is_empty())
            .then(|| cor.iter().filter(|&&m| m > 0.0).count() as f64 / cor.len() as f64),
    }
}

pub fn margin_table(log: &PredictionLog, labels: &LabelSet, src: &Source) -> Result<Table> {
    let report = agr_margin(log, &EpochSubset::all(log.num_checkpoints())?, labels)?;
    let summary = margin_summary(&report);
    let mut t = Table::new(
        src.provenance("margin/1"),
        &["example", "margin", "final_vote", "label", "correct"],
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
    t.note("incorrect_median", opt(summary.incorrect_median));
    t.note("correct_p10", opt(summary.correct_p10));
    t.note("correct_positive_fraction", opt(summary.correct_positive_fraction));
    for (x, ((m, v), ok)) in report
        .margins
        .iter()
        .zip(&report.final_vote)
        .zip(&report.correct_mask)
        .enumerate()
    {
        t.push(vec![cell(x), cell(m), cell(v), cell(labels.labels()[x]), cell(u8::from(*ok))]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Networks,
    Epochs,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "networks" => Ok(SweepAxis::Networks),
            "epochs" => Ok(SweepAxis::Epochs),
            _ => Err(format!("expected networks or epochs, got {s:?}")),
        }
    }
}

pub fn sweep_table(log: &PredictionLog, labels: &LabelSet, axis: SweepAxis, src: &Source) -> Result<Table> {
    match axis {
        SweepAxis::Networks => {
            let all = EpochSubset::all(log.num_checkpoints())?;
            let maj = ensemble_size_sweep(log, labels, &all, SweepRule::Majority)?;
            let map = ensemble_size_sweep(log, labels, &all, SweepRule::Map)?;
            let mut t = Table::new(src.provenance("sweep_networks/1"), &["networks", "majority", "map"]);
            for (n, (a, b)) in maj.iter().zip(&map).enumerate() {
                t.push(vec![cell(n + 1), cell(a), cell(b)]);
            }
            Ok(t)
        }
        SweepAxis::Epochs => {
            let map = checkpoint_count_sweep(log, labels)?;
            let mut t = Table::new(src.provenance("sweep_epochs/1"), &["checkpoints", "map"]);
            for (k, a) in map.iter().enumerate() {
                t.push(vec![cell(k + 1), cell(a)]);
            }
            Ok(t)
        }
    }
}

pub fn train_accuracy_table(out: &TrainOutput, src: &Source) -> Table {
    let n = out.train_accuracy.len();
    let mut columns = vec!["epoch".to_string()];
    columns.extend((0..n).map(|i| format!("network_{i}")));
    let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut t = Table::new(src.provenance("train_accuracy/1"), &refs);
    for (e, cp) in out.log.checkpoints().iter().enumerate() {
        let mut row = vec![cell(cp.as_f64())];
        row.extend(out.train_accuracy.iter().map(|a| cell(a[e])));
        t.push(row);
    }
    t
}

pub fn theorem_table(report: &TheoryRunReport, src: &Source) -> Table {
    let mut t = Table::new(
        src.provenance("theorem/1"),
        &[
            "step",
            "disagreement",
            "delta_disagreement",
            "c_prime",
            "c_double_prime",
            "approx_error",
            "overfit_fraction",
            "all_overfit",
            "mean_test_error",
        ],
    );
    t.note("mu", report.theorem.mu);
    t.note("certified_steps", report.theorem.certified_steps.len());
    t.note("violations", report.theorem.violations.len());
    for r in &report.theorem.steps {
        t.push(vec![
            cell(r.step),
            cell(r.disagreement),
            cell(r.delta_disagreement),
            cell(r.c_prime),
            cell(r.c_double_prime),
            cell(r.approx_error),
            cell(r.overfit_fraction),
            cell(u8::from(r.all_overfit)),
            cell(r.mean_test_error),
        ]);
    }
    t
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Generate the dataset, train the ensemble and write the log, the test
/// labels, train accuracies and the completed manifest into `dir`.
pub fn synth_gen(manifest: &RunManifest, dir: &Path) -> Result<(RunManifest, TrainOutput)> {
    let RunSpec::Toy { dataset, training } = &manifest.run else {
        return Err(Error::input("synth gen needs a toy run manifest"));
    };
    let data = make_dataset(dataset)?.with_noise(&training.noise)?;
    let out = train_ensemble(&data, training)?;
    fs::create_dir_all(dir)?;
    let mut done = RunManifest::new(manifest.run.clone());
    let src = Source {
        manifest_sha256: Some(done.digest()),
        input_sha256: None,
    };
    write_log(&dir.join(LOG_FILE), &out.log)?;
    let log_bytes = fs::read(dir.join(LOG_FILE))?;
    done.outputs.insert(LOG_FILE.to_string(), sha256_hex(&log_bytes));
    write_output(dir, LABELS_FILE, labels_to_json(&data.test_labels).as_bytes(), &mut done)?;
    write_output(dir, TRAIN_ACCURACY_FILE, train_accuracy_table(&out, &src).to_csv().as_bytes(), &mut done)?;
    write_atomic(&dir.join(MANIFEST_FILE), done.to_json().as_bytes())?;
    Ok((done, out))
}

/// Run the theorem check and `|C′|` sweep and write the reports into `dir`.
pub fn theory_run(manifest: &RunManifest, dir: &Path) -> Result<(RunManifest, TheoryRunReport)> {
    let RunSpec::Theory { theory } = &manifest.run else {
        return Err(Error::input("theory run needs a theory manifest"));
    };
    let report = run_theory(theory)?;
    fs::create_dir_all(dir)?;
    let mut done = RunManifest::new(manifest.run.clone());
    let src = Source {
        manifest_sha256: Some(done.digest()),
        input_sha256: None,
    };
    #[derive(Serialize)]
    struct Doc<'a> {
        manifest_sha256: String,
        #[serde(flatten)]
        report: &'a TheoryRunReport,
    }
    let json = serde_json::to_string_pretty(&Doc {
        manifest_sha256: done.digest(),
        report: &report,
    })
    .expect("report serializes")
        + "\n";
    write_output(dir, THEOREM_JSON, json.as_bytes(), &mut done)?;
    write_output(dir, THEOREM_CSV, theorem_table(&report, &src).to_csv().as_bytes(), &mut done)?;
    write_atomic(&dir.join(MANIFEST_FILE), done.to_json().as_bytes())?;
    Ok((done, report))
}
