//! Benchmark runs over a corpus and a tracker roster, and gate training on
//! tracker output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::corpus::{CorpusSpec, NamedSequence, Preset};
use super::roster::{run_tracker, TrackerKind, TrackerSettings};
use crate::decaygate::{build_training_set, train_gate, GateClassifier, GateTrainConfig, Track};
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate, AbsenceMode, EvalReport};
use crate::synthvid::ChallengeTag;
use crate::trackers::write_predictions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub corpus: CorpusSpec,
    pub trackers: Vec<TrackerKind>,
    /// Required when the roster contains `hybrid-gated`.
    pub gate_checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
    pub settings: TrackerSettings,
    pub absence_mode: AbsenceMode,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            trackers: TrackerKind::ALL
                .into_iter()
                .filter(|&k| k != TrackerKind::HybridGated)
                .collect(),
            gate_checkpoint: None,
            seed: 0,
            output: PathBuf::from("bench-out"),
            settings: TrackerSettings::default(),
            absence_mode: AbsenceMode::Credit,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.settings.validate()?;
        ensure!(!self.trackers.is_empty(), Config, "the tracker roster is empty");
        for (i, k) in self.trackers.iter().enumerate() {
            ensure!(
                !self.trackers[..i].contains(k),
                Config,
                "tracker {k} listed twice"
            );
        }
        ensure!(
            !self.trackers.contains(&TrackerKind::HybridGated) || self.gate_checkpoint.is_some(),
            Config,
            "hybrid-gated needs gate_checkpoint"
        );
        Ok(())
    }
}

/// One tracker on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScore {
    pub tracker: TrackerKind,
    pub sequence: String,
    pub report: EvalReport,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkSummary {
    pub runs: Vec<RunScore>,
}

impl BenchmarkSummary {
    fn of(&self, k: TrackerKind) -> impl Iterator<Item = &RunScore> {
        self.runs.iter().filter(move |r| r.tracker == k)
    }

    /// Mean sequence AUC of one tracker.
    pub fn mean_auc(&self, k: TrackerKind) -> Option<f64> {
        mean(self.of(k).map(|r| r.report.auc))
    }

    /// Mean TPR over the sequences where it is defined.
    pub fn mean_tpr(&self, k: TrackerKind) -> Option<f64> {
        mean(self.of(k).filter_map(|r| r.report.tpr))
    }

    /// Mean per-repetition AUC over the extended sequences.
    pub fn mean_repetition_auc(&self, k: TrackerKind) -> Vec<f64> {
        let reps: Vec<&Vec<f64>> = self
            .of(k)
            .map(|r| &r.report.per_repetition)
            .filter(|v| !v.is_empty())
            .collect();
        let n = reps.iter().map(|v| v.len()).min().unwrap_or(0);
        (0..n)
            .map(|i| reps.iter().map(|v| v[i]).sum::<f64>() / reps.len() as f64)
            .collect()
    }

    /// Mean AUC per challenge tag over the sequences carrying it.
    pub fn challenge_auc(&self, k: TrackerKind) -> BTreeMap<ChallengeTag, (usize, f64)> {
        let mut acc: BTreeMap<ChallengeTag, (usize, f64)> = BTreeMap::new();
        for r in self.of(k) {
            for (&tag, &a) in &r.report.per_challenge {
                let e = acc.entry(tag).or_default();
                e.0 += 1;
                e.1 += a;
            }
        }
        acc.into_iter().map(|(t, (n, s))| (t, (n, s / n as f64))).collect()
    }

    fn trackers(&self) -> Vec<TrackerKind> {
        let mut out: Vec<TrackerKind> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.tracker) {
                out.push(r.tracker);
            }
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = it.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

/// Runs every roster entry on every sequence, writing
/// `<output>/<tracker>/<sequence>/{predictions.csv,report.json}` and the
/// aggregate tables under `<output>/tables/`.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    cfg.validate()?;
    let gate = match (&cfg.gate_checkpoint, cfg.trackers.contains(&TrackerKind::HybridGated)) {
        (Some(p), true) => Some(Arc::new(GateClassifier::load(p)?)),
        _ => None,
    };
    let corpus = cfg.corpus.materialize(cfg.seed)?;
    create_dir(&cfg.output)?;
    let mut summary = BenchmarkSummary::default();
    for &kind in &cfg.trackers {
        for NamedSequence { name, sequence } in &corpus {
            let out = run_tracker(kind, &cfg.settings, gate.as_ref(), sequence)?;
            let report = evaluate(&out.track_result(sequence)?, cfg.absence_mode)?;
            let dir = cfg.output.join(kind.name()).join(name);
            create_dir(&dir)?;
            write_predictions(&dir.join("predictions.csv"), &out.predictions)?;
            report.save_json(&dir.join("report.json"))?;
            summary.runs.push(RunScore {
                tracker: kind,
                sequence: name.clone(),
                report,
                updates: out.updates,
            });
        }
    }
    write_tables(&summary, &cfg.output.join("tables"))?;
    Ok(summary)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `ablation.csv`, `search.csv`, `challenge.csv` and `repetition.csv`.
pub fn write_tables(s: &BenchmarkSummary, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let trackers = s.trackers();

    let ablation = trackers
        .iter()
        .map(|&k| {
            let runs: Vec<&RunScore> = s.of(k).collect();
            let m = |f: fn(&EvalReport) -> f64| opt(mean(runs.iter().map(|r| f(&r.report))));
            vec![
                k.name().to_string(),
                runs.len().to_string(),
                runs.iter().map(|r| r.report.frames).sum::<usize>().to_string(),
                m(|r| r.auc),
                opt(s.mean_tpr(k)),
                m(|r| r.precision),
                m(|r| r.recall),
                m(|r| r.f),
                runs.iter().map(|r| r.updates).sum::<usize>().to_string(),
            ]
        })
        .collect();
    write_table(
        &dir.join("ablation.csv"),
        &["tracker", "sequences", "frames", "auc", "tpr", "precision", "recall", "f", "updates"],
        ablation,
    )?;

    let search = [
        (TrackerKind::SiameseLocalOnly, "local"),
        (TrackerKind::SiameseGlobalOnly, "global"),
        (TrackerKind::SiameseNoUpdate, "hybrid"),
    ]
    .into_iter()
    .filter(|(k, _)| trackers.contains(k))
    .map(|(k, label)| vec![k.name().to_string(), label.to_string(), opt(s.mean_auc(k)), opt(s.mean_tpr(k))])
    .collect();
    write_table(&dir.join("search.csv"), &["tracker", "search", "auc", "tpr"], search)?;

    let challenge = trackers
        .iter()
        .flat_map(|&k| {
            s.challenge_auc(k)
                .into_iter()
                .map(move |(t, (n, a))| vec![k.name().to_string(), t.to_string(), n.to_string(), a.to_string()])
        })
        .collect();
    write_table(&dir.join("challenge.csv"), &["tracker", "tag", "sequences", "auc"], challenge)?;

    let repetition = trackers
        .iter()
        .flat_map(|&k| {
            s.mean_repetition_auc(k)
                .into_iter()
                .enumerate()
                .map(move |(i, a)| vec![k.name().to_string(), (i + 1).to_string(), a.to_string()])
        })
        .collect();
    write_table(&dir.join("repetition.csv"), &["tracker", "repetition", "auc"], repetition)
}

/// Gate training: run the frozen hybrid tracker over a held-out corpus,
/// label its similarity-map windows, fit the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateTrainingRun {
    pub corpus: CorpusSpec,
    pub seed: u64,
    pub settings: TrackerSettings,
    pub train: GateTrainConfig,
    /// Checkpoint path.
    pub output: PathBuf,
}

impl Default for GateTrainingRun {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::Preset {
                preset: Preset::GateTrain,
                count: 8,
                repetitions: 1,
            },
            seed: 1000,
            settings: TrackerSettings::default(),
            train: GateTrainConfig::default(),
            output: PathBuf::from("gate.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GateTrainingOutcome {
    pub classifier: GateClassifier,
    pub losses: Vec<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Frozen-template hybrid runs aligned with truth, ready for labeling.
pub fn collect_gate_tracks(corpus: &[NamedSequence], settings: &TrackerSettings) -> Result<Vec<Track>> {
    corpus
        .iter()
        .map(|s| {
            let out = run_tracker(TrackerKind::SiameseNoUpdate, settings, None, &s.sequence)?;
            Ok(Track {
                predictions: out.predictions,
                truth: s.sequence.truth.clone(),
            })
        })
        .collect()
}

pub fn run_gate_training(cfg: &GateTrainingRun) -> Result<GateTrainingOutcome> {
    cfg.settings.validate()?;
    let corpus = cfg.corpus.materialize(cfg.seed)?;
    let tracks = collect_gate_tracks(&corpus, &cfg.settings)?;
    let windows = build_training_set(&tracks, cfg.train.window)?;
    let positives = windows.iter().filter(|w| w.label == Some(true)).count();
    let negatives = windows.len() - positives;
    let (classifier, losses) = train_gate(&windows, &cfg.train)?;
    if let Some(parent) = cfg.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    classifier.save(&cfg.output)?;
    Ok(GateTrainingOutcome {
        classifier,
        losses,
        positives,
        negatives,
    })
}
