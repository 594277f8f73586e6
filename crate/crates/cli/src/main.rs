//! `decaylab` command line front end.
//!
//! Every subcommand that takes `--config` reads one JSON file and then
//! applies flag overrides; flags win. Exit codes: 0 success, 1 configuration
//! error, 2 data error, 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use decaylab::decaygate::GateClassifier;
use decaylab::eval::{evaluate, AbsenceMode, TrackResult};
use decaylab::harness::{
    run_benchmark, run_dynamics, run_gate_training, run_tracker, BenchmarkConfig, CorpusSpec,
    DynamicsRun, GateTrainingRun, Preset, TrackerKind, TrackerSettings,
};
use decaylab::synthvid::{extend_long, generate_sequence, read_sequence, write_sequence, SequenceConfig};
use decaylab::trackers::{read_predictions, write_predictions};
use decaylab::{Error, ErrorKind};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "decaylab", version, about = "Model-decay laboratory for long-term tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence directory.
    Gen {
        /// JSON sequence config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use a named preset instead of a config file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Member index within the preset family.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        length: Option<usize>,
        /// Long-extend with this many repetitions.
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long-extend an existing sequence directory.
    Extend {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        repetitions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one tracker on one sequence directory.
    Track {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        tracker: String,
        /// JSON tracker settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Prediction CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write an evaluation report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the decay gate on frozen-tracker output.
    TrainGate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Number of preset training videos.
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Run a tracker roster over a corpus and write reports and tables.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated roster.
        #[arg(long, value_delimiter = ',')]
        trackers: Option<Vec<String>>,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Corpus from a preset: name.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, requires = "preset")]
        count: Option<usize>,
        #[arg(long, requires = "preset")]
        repetitions: Option<usize>,
    },
    /// Label-noise sweep of the online-learning decay experiment.
    Dynamics {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repeatable; replaces the configured sigma list.
        #[arg(long = "sigma")]
        sigmas: Vec<f64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Score a prediction CSV against a sequence directory.
    Eval {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// `credit` or `exclude`.
        #[arg(long, default_value = "credit")]
        absence_mode: String,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Success curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses a kebab/snake-case enum name through its serde representation.
fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} {s:?}")))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            config,
            preset,
            index,
            seed,
            length,
            repetitions,
            out,
        } => {
            let mut cfg: SequenceConfig = match (&config, &preset) {
                (Some(p), _) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                (None, Some(name)) => parse_name::<Preset>("preset", name)?.sequence(index, seed.unwrap_or(0)),
                (None, None) => return Err(Error::Config("gen needs --config or --preset".into())),
            };
            if let (Some(s), None) = (seed, &preset) {
                cfg.seed = s;
            }
            if let Some(n) = length {
                cfg.length = n;
            }
            let mut s = generate_sequence(&cfg)?;
            if let Some(r) = repetitions {
                s = extend_long(&s, r)?;
            }
            write_sequence(&s, &out)?;
            println!("wrote {} frames to {}", s.len(), out.display());
        }
        Command::Extend {
            input,
            repetitions,
            out,
        } => {
            let s = extend_long(&read_sequence(&input)?, repetitions)?;
            write_sequence(&s, &out)?;
            println!("wrote {} frames to {}", s.len(), out.display());
        }
        Command::Track {
            sequence,
            tracker,
            config,
            gate,
            out,
            report,
        } => {
            let kind: TrackerKind = tracker.parse()?;
            let settings: TrackerSettings = load_config(config.as_deref())?;
            settings.validate()?;
            let gate = match (kind, gate) {
                (TrackerKind::HybridGated, Some(p)) => Some(Arc::new(GateClassifier::load(&p)?)),
                (TrackerKind::HybridGated, None) => {
                    return Err(Error::Config("hybrid-gated needs --gate".into()))
                }
                _ => None,
            };
            let seq = read_sequence(&sequence)?;
            let o = run_tracker(kind, &settings, gate.as_ref(), &seq)?;
            write_predictions(&out, &o.predictions)?;
            let r = evaluate(&o.track_result(&seq)?, AbsenceMode::Credit)?;
            if let Some(p) = report {
                r.save_json(&p)?;
            }
            println!("{kind}: {} frames, auc {:.4}, {} updates", seq.len(), r.auc, o.updates);
        }
        Command::TrainGate {
            config,
            out,
            seed,
            steps,
            sequences,
        } => {
            let mut cfg: GateTrainingRun = load_config(config.as_deref())?;
            if let Some(p) = out {
                cfg.output = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            if let Some(n) = sequences {
                match &mut cfg.corpus {
                    CorpusSpec::Preset { count, .. } => *count = n,
                    _ => return Err(Error::Config("--sequences needs a preset corpus".into())),
                }
            }
            let o = run_gate_training(&cfg)?;
            let tail = &o.losses[o.losses.len().saturating_sub(10)..];
            let recent = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!(
                "trained on {} positive / {} negative windows, {} steps, recent loss {recent:.4}; wrote {}",
                o.positives,
                o.negatives,
                o.losses.len(),
                cfg.output.display()
            );
        }
        Command::Bench {
            config,
            out,
            seed,
            trackers,
            gate,
            preset,
            count,
            repetitions,
        } => {
            let mut cfg: BenchmarkConfig = load_config(config.as_deref())?;
            if let Some(p) = out {
                cfg.output = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(list) = trackers {
                cfg.trackers = list.iter().map(|t| t.parse()).collect::<Result<_>>()?;
            }
            if gate.is_some() {
                cfg.gate_checkpoint = gate;
            }
            if let Some(name) = preset {
                cfg.corpus = CorpusSpec::Preset {
                    preset: parse_name("preset", &name)?,
                    count: count.unwrap_or(6),
                    repetitions: repetitions.unwrap_or(1),
                };
            }
            let s = run_benchmark(&cfg)?;
            for &k in &cfg.trackers {
                println!("{k}: mean auc {:.4}", s.mean_auc(k).unwrap_or(f64::NAN));
            }
            println!("wrote {}", cfg.output.display());
        }
        Command::Dynamics {
            config,
            out,
            sigmas,
            runs,
            eta,
            seed,
            length,
        } => {
            let mut cfg: DynamicsRun = load_config(config.as_deref())?;
            if let Some(p) = out {
                cfg.output = p;
            }
            if !sigmas.is_empty() {
                cfg.sigmas = sigmas;
            }
            if let Some(n) = runs {
                cfg.runs = n;
            }
            if let Some(e) = eta {
                cfg.eta = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = length {
                cfg.sequence.length = n;
            }
            let rows = run_dynamics(&cfg)?;
            for &s in &cfg.sigmas {
                let v: Vec<f64> = rows.iter().filter(|r| r.sigma == s).map(|r| r.terminal_cum_bias).collect();
                println!("sigma {s}: mean terminal cumulative bias {:.6}", v.iter().sum::<f64>() / v.len() as f64);
            }
            println!("wrote {}", cfg.output.display());
        }
        Command::Eval {
            sequence,
            predictions,
            absence_mode,
            out,
            curve,
        } => {
            let mode: AbsenceMode = parse_name("absence mode", &absence_mode)?;
            let seq = read_sequence(&sequence)?;
            let preds = read_predictions(&predictions)?;
            if preds.len() != seq.len() {
                return Err(Error::Data(format!(
                    "{} predictions for a {}-frame sequence",
                    preds.len(),
                    seq.len()
                )));
            }
            let mut r = TrackResult::new(preds.iter().map(|p| p.bbox).collect(), seq.truth.clone())?;
            r.scores = preds.iter().map(|p| p.score).collect();
            r.tags = seq.tags.clone();
            r.repetition_boundaries = seq.repetition_boundaries.clone();
            let report = evaluate(&r, mode)?;
            if let Some(p) = curve {
                report.save_curve_csv(&p)?;
            }
            match out {
                Some(p) => {
                    report.save_json(&p)?;
                    println!("auc {:.4}; wrote {}", report.auc, p.display());
                }
                None => {
                    // A closed pipe (e.g. `| head`) is not an error.
                    let text = serde_json::to_string_pretty(&report).expect("report serializes");
                    let _ = writeln!(std::io::stdout(), "{text}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
