//! The named tracker configurations compared by the benchmark.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decaygate::{prepare_map, should_update, GateClassifier, DEFAULT_THRESHOLD, FEATURES};
use crate::error::{ensure, Error, Result};
use crate::eval::TrackResult;
use crate::synthvid::Sequence;
use crate::trackers::{
    hybrid_step, mosse_init, mosse_step, siamese_init, template_update, MosseConfig, Prediction,
    SearchKind, SiameseConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackerKind {
    /// Hybrid search, frozen exemplar.
    SiameseNoUpdate,
    SiameseLocalOnly,
    SiameseGlobalOnly,
    /// Hybrid search, exemplar blended on every frame.
    HybridBlindUpdate,
    /// Hybrid search, update when the similarity peak clears a threshold.
    HybridSimThresholdUpdate,
    /// Hybrid search, update when the decay gate approves.
    HybridGated,
    Mosse,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 7] = [
        TrackerKind::SiameseNoUpdate,
        TrackerKind::SiameseLocalOnly,
        TrackerKind::SiameseGlobalOnly,
        TrackerKind::HybridBlindUpdate,
        TrackerKind::HybridSimThresholdUpdate,
        TrackerKind::HybridGated,
        TrackerKind::Mosse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackerKind::SiameseNoUpdate => "siamese-no-update",
            TrackerKind::SiameseLocalOnly => "siamese-local-only",
            TrackerKind::SiameseGlobalOnly => "siamese-global-only",
            TrackerKind::HybridBlindUpdate => "hybrid-blind-update",
            TrackerKind::HybridSimThresholdUpdate => "hybrid-sim-threshold-update",
            TrackerKind::HybridGated => "hybrid-gated",
            TrackerKind::Mosse => "mosse",
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrackerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tracker {s:?}")))
    }
}

/// Shared knobs for every roster entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSettings {
    pub siamese: SiameseConfig,
    pub mosse: MosseConfig,
    /// Template blend weight for updating variants.
    pub blend: f64,
    pub similarity_threshold: f64,
    pub gate_threshold: f64,
    /// Restrict similarity-threshold updates to global-search frames.
    pub similarity_global_only: bool,
    /// Restrict gated updates to global-search frames.
    pub gate_global_only: bool,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        Self {
            siamese: SiameseConfig::default(),
            mosse: MosseConfig::default(),
            blend: 0.1,
            similarity_threshold: 0.5,
            gate_threshold: DEFAULT_THRESHOLD,
            similarity_global_only: true,
            gate_global_only: true,
        }
    }
}

impl TrackerSettings {
    pub fn validate(&self) -> Result<()> {
        self.siamese.validate()?;
        self.mosse.validate()?;
        ensure!((0.0..=1.0).contains(&self.blend), Config, "blend must lie in [0, 1]");
        ensure!(
            self.gate_threshold > 0.0 && self.gate_threshold <= 1.0,
            Config,
            "gate_threshold must lie in (0, 1]"
        );
        ensure!(
            self.similarity_threshold.is_finite(),
            Config,
            "similarity_threshold must be finite"
        );
        Ok(())
    }

    /// Search configuration of a siamese roster entry.
    pub fn siamese_for(&self, kind: TrackerKind) -> SiameseConfig {
        let mut c = self.siamese.clone();
        match kind {
            TrackerKind::SiameseLocalOnly => c.global_interval = None,
            TrackerKind::SiameseGlobalOnly => c.global_interval = Some(1),
            _ => {}
        }
        c
    }
}

/// Output of one tracker on one sequence; frame 1 is the given box.
#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub predictions: Vec<Prediction>,
    /// Template updates applied.
    pub updates: usize,
    /// Gate score per frame, for gated runs.
    pub gate_scores: Vec<Option<f64>>,
}

impl TrackOutput {
    pub fn track_result(&self, seq: &Sequence) -> Result<TrackResult> {
        let mut r = TrackResult::new(self.predictions.iter().map(|p| p.bbox).collect(), seq.truth.clone())?;
        r.scores = self.predictions.iter().map(|p| p.score).collect();
        r.tags = seq.tags.clone();
        r.repetition_boundaries = seq.repetition_boundaries.clone();
        Ok(r)
    }
}

enum Policy<'a> {
    Never,
    Always,
    Similarity { threshold: f64, global_only: bool },
    Gate { gate: &'a GateClassifier, threshold: f64, global_only: bool },
}

pub fn run_tracker(
    kind: TrackerKind,
    settings: &TrackerSettings,
    gate: Option<&Arc<GateClassifier>>,
    seq: &Sequence,
) -> Result<TrackOutput> {
    ensure!(!seq.is_empty(), Data, "empty sequence");
    let init = seq.truth[0];
    ensure!(init.present, Data, "the target must be visible in the first frame");
    let first = Prediction {
        bbox: init,
        candidate: init,
        score: 1.0,
        kind: SearchKind::Local,
        map: None,
    };
    if kind == TrackerKind::Mosse {
        let mut s = mosse_init(&seq.frames[0], &init, settings.mosse.clone())?;
        let mut predictions = vec![first];
        for f in &seq.frames[1..] {
            predictions.push(mosse_step(&mut s, f)?);
        }
        let n = predictions.len();
        return Ok(TrackOutput {
            updates: n - 1,
            predictions,
            gate_scores: vec![None; n],
        });
    }

    let policy = match kind {
        TrackerKind::HybridBlindUpdate => Policy::Always,
        TrackerKind::HybridSimThresholdUpdate => Policy::Similarity {
            threshold: settings.similarity_threshold,
            global_only: settings.similarity_global_only,
        },
        TrackerKind::HybridGated => Policy::Gate {
            gate: gate.ok_or_else(|| Error::Config("hybrid-gated needs a gate checkpoint".into()))?,
            threshold: settings.gate_threshold,
            global_only: settings.gate_global_only,
        },
        _ => Policy::Never,
    };
    let mut s = siamese_init(&seq.frames[0], &init, settings.siamese_for(kind))?;
    let mut ring: VecDeque<Vec<f64>> = match &policy {
        Policy::Gate { gate, .. } => std::iter::repeat(vec![0.0; FEATURES]).take(gate.window).collect(),
        _ => VecDeque::new(),
    };
    let mut predictions = vec![first];
    let mut gate_scores = vec![None];
    let mut updates = 0;
    if let Policy::Gate { .. } = policy {
        // Frame 1 has no similarity map: it enters the history as zeros.
        ring.pop_front();
        ring.push_back(vec![0.0; FEATURES]);
    }
    for f in &seq.frames[1..] {
        let p = hybrid_step(&mut s, f)?;
        let global = p.kind == SearchKind::Global;
        let mut gate_score = None;
        let permitted = p.bbox.present
            && match &policy {
                Policy::Never => false,
                Policy::Always => true,
                Policy::Similarity { threshold, global_only } => {
                    p.score > *threshold && (global || !global_only)
                }
                Policy::Gate {
                    gate,
                    threshold,
                    global_only,
                } => {
                    let feats = p
                        .map
                        .as_ref()
                        .map_or_else(|| vec![0.0; FEATURES], |m| gate.encode(&prepare_map(m)));
                    ring.pop_front();
                    ring.push_back(feats);
                    let refs: Vec<&[f64]> = ring.iter().map(|v| v.as_slice()).collect();
                    let score = gate.score_features(&refs)?;
                    gate_score = Some(score);
                    should_update(score, *threshold) && (global || !global_only)
                }
            };
        if permitted {
            match template_update(&mut s, f, &p, settings.blend, true) {
                Ok(()) => updates += 1,
                // A featureless patch cannot be normalized; skip the update.
                Err(Error::InvalidArgument(_)) => {}
                Err(e) => return Err(e),
            }
        }
        predictions.push(p);
        gate_scores.push(gate_score);
    }
    Ok(TrackOutput {
        predictions,
        updates,
        gate_scores,
    })
}
