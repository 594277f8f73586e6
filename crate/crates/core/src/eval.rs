//! Long-term tracking metrics: absence-aware success curves and AUC, TPR,
//! a threshold-based precision/recall/F surrogate, and per-challenge and
//! per-repetition aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geom::{iou, BBox};
use crate::synthvid::{repetition_spans, ChallengeTag};

/// How frames where both prediction and truth are absent are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsenceMode {
    /// Correct absence scores IoU 1.
    #[default]
    Credit,
    /// Correct-absence frames are left out of the denominators.
    Exclude,
}

/// Per-frame overlap with the long-term conventions: a box predicted while
/// the target is absent, or a missing box while it is visible, scores 0; a
/// correct absence scores 1.
pub fn frame_iou(pred: &BBox, truth: &BBox) -> f64 {
    match (pred.present, truth.present) {
        (true, true) => iou(pred, truth).unwrap_or(0.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

fn scored(pred: &BBox, truth: &BBox, mode: AbsenceMode) -> Option<f64> {
    if mode == AbsenceMode::Exclude && !pred.present && !truth.present {
        None
    } else {
        Some(frame_iou(pred, truth))
    }
}

/// Whether an overlap counts as a success at threshold `tau`. A perfect
/// overlap succeeds at every threshold, including `tau = 1`.
pub fn succeeds(v: f64, tau: f64) -> bool {
    v > tau || v == 1.0
}

/// One tracker run on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub predictions: Vec<BBox>,
    pub scores: Vec<f64>,
    pub truth: Vec<BBox>,
    pub tags: BTreeSet<ChallengeTag>,
    pub repetition_boundaries: Vec<usize>,
}

impl TrackResult {
    pub fn new(predictions: Vec<BBox>, truth: Vec<BBox>) -> Result<Self> {
        ensure!(
            predictions.len() == truth.len(),
            InvalidArgument,
            "{} predictions for {} truth frames",
            predictions.len(),
            truth.len()
        );
        Ok(Self {
            scores: vec![0.0; predictions.len()],
            predictions,
            truth,
            tags: BTreeSet::new(),
            repetition_boundaries: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn overlaps(&self, range: std::ops::Range<usize>, mode: AbsenceMode) -> Vec<f64> {
        range
            .filter_map(|i| scored(&self.predictions[i], &self.truth[i], mode))
            .collect()
    }

    fn check(&self) -> Result<()> {
        ensure!(
            self.predictions.len() == self.truth.len(),
            InvalidArgument,
            "{} predictions for {} truth frames",
            self.predictions.len(),
            self.truth.len()
        );
        Ok(())
    }
}

/// `0.00, 0.05, ..., 1.00`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

fn curve_of(overlaps: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    ensure!(!overlaps.is_empty(), InvalidArgument, "no frames to evaluate");
    ensure!(!thresholds.is_empty(), InvalidArgument, "empty threshold grid");
    let n = overlaps.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| (tau, overlaps.iter().filter(|&&v| succeeds(v, tau)).count() as f64 / n))
        .collect())
}

fn mean_of_curve(c: &[(f64, f64)]) -> f64 {
    c.iter().map(|(_, s)| s).sum::<f64>() / c.len() as f64
}

pub fn success_curve(r: &TrackResult, thresholds: &[f64], mode: AbsenceMode) -> Result<Vec<(f64, f64)>> {
    r.check()?;
    curve_of(&r.overlaps(0..r.len(), mode), thresholds)
}

/// Mean success over the default threshold grid.
pub fn auc(r: &TrackResult, mode: AbsenceMode) -> Result<f64> {
    Ok(mean_of_curve(&success_curve(r, &default_thresholds(), mode)?))
}

/// Fraction of truth-visible frames localized with IoU above `tau`.
pub fn tpr(r: &TrackResult, tau: f64) -> Result<f64> {
    r.check()?;
    let present: Vec<usize> = (0..r.len()).filter(|&i| r.truth[i].present).collect();
    ensure!(!present.is_empty(), InvalidArgument, "no frames with a visible target");
    let hits = present
        .iter()
        .filter(|&&i| r.predictions[i].present && frame_iou(&r.predictions[i], &r.truth[i]) > tau)
        .count();
    Ok(hits as f64 / present.len() as f64)
}

/// Precision, recall and F from IoU-thresholded hits; empty denominators give 0.
pub fn pr_f(r: &TrackResult, tau: f64) -> Result<(f64, f64, f64)> {
    r.check()?;
    let hit = |i: usize| {
        r.predictions[i].present && r.truth[i].present && frame_iou(&r.predictions[i], &r.truth[i]) > tau
    };
    let ratio = |idx: Vec<usize>| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len() as f64
        }
    };
    let p = ratio((0..r.len()).filter(|&i| r.predictions[i].present).collect());
    let rc = ratio((0..r.len()).filter(|&i| r.truth[i].present).collect());
    let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
    Ok((p, rc, f))
}

/// Mean AUC per challenge tag over the sequences carrying it.
pub fn per_challenge_report(results: &[TrackResult], mode: AbsenceMode) -> Result<BTreeMap<ChallengeTag, f64>> {
    let mut acc: BTreeMap<ChallengeTag, (f64, usize)> = BTreeMap::new();
    for r in results {
        let a = auc(r, mode)?;
        for &t in &r.tags {
            let e = acc.entry(t).or_default();
            e.0 += a;
            e.1 += 1;
        }
    }
    Ok(acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect())
}

/// AUC of each repetition span of a Long-extended run.
pub fn per_repetition_curve(r: &TrackResult, mode: AbsenceMode) -> Result<Vec<f64>> {
    r.check()?;
    let spans = repetition_spans(&r.repetition_boundaries, r.len())?;
    let grid = default_thresholds();
    spans
        .into_iter()
        .map(|s| Ok(mean_of_curve(&curve_of(&r.overlaps(s, mode), &grid)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub absence_mode: AbsenceMode,
    pub frames: usize,
    pub auc: f64,
    /// `None` when the target is never visible.
    pub tpr: Option<f64>,
    /// Threshold surrogate at IoU 0.5, not the confidence-sweep definition.
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub success_curve: Vec<(f64, f64)>,
    pub per_challenge: BTreeMap<ChallengeTag, f64>,
    pub per_repetition: Vec<f64>,
}

pub fn evaluate(r: &TrackResult, mode: AbsenceMode) -> Result<EvalReport> {
    let curve = success_curve(r, &default_thresholds(), mode)?;
    let a = mean_of_curve(&curve);
    let (precision, recall, f) = pr_f(r, 0.5)?;
    let tpr = if r.truth.iter().any(|b| b.present) {
        Some(tpr(r, 0.5)?)
    } else {
        None
    };
    let per_repetition = if r.repetition_boundaries.is_empty() {
        Vec::new()
    } else {
        per_repetition_curve(r, mode)?
    };
    Ok(EvalReport {
        absence_mode: mode,
        frames: r.len(),
        auc: a,
        tpr,
        precision,
        recall,
        f,
        success_curve: curve,
        per_challenge: r.tags.iter().map(|&t| (t, a)).collect(),
        per_repetition,
    })
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Curve as `tau,success`.
    pub fn save_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["tau", "success"]).map_err(|e| Error::csv(path, e))?;
        for (t, s) in &self.success_curve {
            w.write_record([t.to_string(), s.to_string()]).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
