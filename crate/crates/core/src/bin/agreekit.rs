use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use agreekit::io::{
    log_from_json, log_to_json, read_labels, read_log, sha256_hex, write_atomic, write_log, RunManifest, RunSpec, Table,
};
use agreekit::plot::render_table;
use agreekit::report::{
    baselines_table, ecs_table, map_result, margin_table, sweep_table, synth_gen, theory_run, EpochChoice, Source,
    SweepAxis, MANIFEST_FILE,
};
use agreekit::theory::{run_lemma1, run_lemma2, TheoryConfig};
use agreekit::{Error, LabelSet, PredictionLog, Result};

#[derive(Parser)]
#[command(name = "agreekit", version, about = "Epoch-wise ensemble agreement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic data and toy ensemble training.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Aggregate and diagnose a prediction log.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Linear-regression disagreement simulator.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Render a CSV table as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert and inspect log files.
    Log {
        #[command(subcommand)]
        command: LogCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Generate the dataset, train the ensemble, write log and manifest.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct LogArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Manifest the log came from; defaults to manifest.json beside the log.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Max-agreement predictions and accuracy.
    Map {
        #[command(flatten)]
        args: LogArgs,
        /// all, last, or a count of evenly spaced checkpoints.
        #[arg(long, default_value = "all")]
        epochs: EpochChoice,
        /// Use only the first n networks.
        #[arg(long)]
        networks: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Single, majority, probability-average and prefix-MAP accuracy per checkpoint.
    Baselines {
        #[command(flatten)]
        args: LogArgs,
    },
    /// Error consensus histogram at one checkpoint.
    Ecs {
        #[command(flatten)]
        args: LogArgs,
        /// last, or a checkpoint position (0-based).
        #[arg(long, default_value = "last")]
        checkpoint: String,
    },
    /// Agreement margins split by final-vote correctness.
    Margin {
        #[command(flatten)]
        args: LogArgs,
    },
    /// Accuracy against ensemble size or checkpoint count.
    Sweep {
        #[command(flatten)]
        args: LogArgs,
        #[arg(long)]
        axis: SweepAxis,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Theorem check and |C′| sweep; writes reports into a directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step-sign versus cross-gradient check for every model.
    Lemma1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble-mean convergence to the closed form.
    Lemma2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LogCommand {
    /// Convert a plain-JSON log into the binary format.
    Import {
        #[arg(long)]
        json: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a binary log into plain JSON.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the dimensions of a binary log.
    Info {
        #[arg(long)]
        log: PathBuf,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

struct Loaded {
    log: PredictionLog,
    labels: LabelSet,
    source: Source,
}

fn load(args: &LogArgs) -> Result<Loaded> {
    let bytes = fs::read(&args.log)?;
    let log = agreekit::io::decode_log(&bytes)?;
    let labels = read_labels(&args.labels)?;
    let manifest_path = args.manifest.clone().or_else(|| {
        let sibling = args.log.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
        sibling.exists().then_some(sibling)
    });
    let manifest_sha256 = match manifest_path {
        Some(p) => Some(RunManifest::read(&p)?.digest()),
        None => None,
    };
    Ok(Loaded {
        log,
        labels,
        source: Source {
            manifest_sha256,
            input_sha256: Some(sha256_hex(&bytes)),
        },
    })
}

fn read_theory_config(path: &Path) -> Result<(RunManifest, TheoryConfig)> {
    let text = fs::read_to_string(path)?;
    if let Ok(m) = RunManifest::from_json(&text) {
        if let RunSpec::Theory { theory } = &m.run {
            let cfg = theory.clone();
            return Ok((m, cfg));
        }
        return Err(Error::Input("manifest is not a theory run".into()));
    }
    let cfg: TheoryConfig = serde_json::from_str(&text)?;
    Ok((RunManifest::new(RunSpec::Theory { theory: cfg.clone() }), cfg))
}

fn json_with_digest<T: serde::Serialize>(manifest: &RunManifest, schema: &str, reports: &T) -> String {
    let doc = serde_json::json!({
        "schema": schema,
        "toolkit_version": agreekit::io::TOOLKIT_VERSION,
        "manifest_sha256": manifest.digest(),
        "reports": reports,
    });
    serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            command: SynthCommand::Gen { config, out },
        } => {
            let manifest = RunManifest::read(&config)?;
            let (done, _) = synth_gen(&manifest, &out)?;
            eprintln!("wrote {} (manifest {})", out.display(), done.digest());
        }
        Command::Analyze { command } => match command {
            AnalyzeCommand::Map {
                args,
                epochs,
                networks,
                format,
            } => {
                let l = load(&args)?;
                let result = map_result(&l.log, &l.labels, epochs, networks, &l.source)?;
                let text = match format {
                    Format::Csv => result.to_table(&l.labels).to_csv(),
                    Format::Json => serde_json::to_string_pretty(&result).expect("result serializes") + "\n",
                };
                emit(args.out.as_deref(), &text)?;
            }
            AnalyzeCommand::Baselines { args } => {
                let l = load(&args)?;
                emit(args.out.as_deref(), &baselines_table(&l.log, &l.labels, &l.source)?.to_csv())?;
            }
            AnalyzeCommand::Ecs { args, checkpoint } => {
                let l = load(&args)?;
                let e = match checkpoint.as_str() {
                    "last" => None,
                    s => Some(
                        s.parse::<usize>()
                            .map_err(|_| Error::Input(format!("checkpoint must be last or a position, got {s:?}")))?,
                    ),
                };
                if let Some(e) = e {
                    if e >= l.log.num_checkpoints() {
                        return Err(Error::Input(format!(
                            "checkpoint position {e} out of range (log has {})",
                            l.log.num_checkpoints()
                        )));
                    }
                }
                emit(args.out.as_deref(), &ecs_table(&l.log, &l.labels, e, &l.source)?.to_csv())?;
            }
            AnalyzeCommand::Margin { args } => {
                let l = load(&args)?;
                emit(args.out.as_deref(), &margin_table(&l.log, &l.labels, &l.source)?.to_csv())?;
            }
            AnalyzeCommand::Sweep { args, axis } => {
                let l = load(&args)?;
                emit(args.out.as_deref(), &sweep_table(&l.log, &l.labels, axis, &l.source)?.to_csv())?;
            }
        },
        Command::Theory { command } => match command {
            TheoryCommand::Run { config, out } => {
                let (manifest, _) = read_theory_config(&config)?;
                let (done, report) = theory_run(&manifest, &out)?;
                eprintln!(
                    "wrote {} (manifest {}): {} certified overfit steps, {} with non-increasing disagreement",
                    out.display(),
                    done.digest(),
                    report.theorem.certified_steps.len(),
                    report.theorem.violations.len()
                );
            }
            TheoryCommand::Lemma1 { config, out } => {
                let (manifest, cfg) = read_theory_config(&config)?;
                let reports = run_lemma1(&cfg)?;
                emit(out.as_deref(), &json_with_digest(&manifest, "lemma1/1", &reports))?;
            }
            TheoryCommand::Lemma2 { config, out } => {
                let (manifest, cfg) = read_theory_config(&config)?;
                let reports = run_lemma2(&cfg)?;
                emit(out.as_deref(), &json_with_digest(&manifest, "lemma2/1", &reports))?;
            }
        },
        Command::Plot { input, out } => {
            let table = Table::from_csv(&fs::read_to_string(&input)?)?;
            write_atomic(&out, render_table(&table)?.as_bytes())?;
        }
        Command::Log { command } => match command {
            LogCommand::Import { json, out } => {
                let log = log_from_json(&fs::read_to_string(&json)?)?;
                write_log(&out, &log)?;
            }
            LogCommand::Export { log, out } => {
                emit(out.as_deref(), &log_to_json(&read_log(&log)?))?;
            }
            LogCommand::Info { log } => {
                let log = read_log(&log)?;
                println!(
                    "networks={} checkpoints={} examples={} classes={} probabilities={}",
                    log.num_networks(),
                    log.num_checkpoints(),
                    log.num_examples(),
                    log.num_classes(),
                    log.has_soft()
                );
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
