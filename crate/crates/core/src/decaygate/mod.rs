//! Decay recognition gate: a small recurrent classifier over the last `K`
//! similarity maps that decides whether a template update is safe.
//!
//! The gate sees similarity maps only, never tracker state. Network
//! equations are documented in [`net`].

pub mod net;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::frame_iou;
use crate::geom::{BBox, Grid};
use crate::rng::{streams, SeededRng};
use crate::trackers::{Prediction, SimilarityMap};

pub use net::{FEATURES, HIDDEN, LAYERS, MAP_SIZE, PARAM_COUNT};

/// Default history length `K`.
pub const DEFAULT_WINDOW: usize = 8;
/// Default decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

const CHECKPOINT_FORMAT: &str = "decaylab-gate";
const CHECKPOINT_VERSION: u32 = 1;

/// Classifier parameters `theta` plus the window length it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct GateClassifier {
    pub window: usize,
    pub params: Vec<f64>,
}

impl GateClassifier {
    pub fn zeros(window: usize) -> Result<Self> {
        ensure!(window > 0, InvalidArgument, "window length must be positive");
        Ok(Self {
            window,
            params: vec![0.0; PARAM_COUNT],
        })
    }

    /// Uniform initialization: recurrent blocks in `+-1/sqrt(H)`, convolutions
    /// He-uniform, dense layers `+-1/sqrt(fan_in)`.
    pub fn random(window: usize, seed: u64) -> Result<Self> {
        let mut c = Self::zeros(window)?;
        let mut rng = SeededRng::stream(seed, streams::GATE_INIT);
        let mut off = 0;
        for (name, shape) in LAYERS {
            let n: usize = shape.iter().product();
            let fan_in: usize = if shape.len() > 1 { shape[1..].iter().product() } else { 1 };
            let bound = if name.starts_with("gru") {
                1.0 / (HIDDEN as f64).sqrt()
            } else if name.starts_with("conv") {
                (6.0 / fan_in as f64).sqrt()
            } else if name == "fc1.bias" {
                1.0 / (HIDDEN as f64).sqrt()
            } else if name == "fc2.bias" {
                1.0 / 16f64.sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            for v in &mut c.params[off..off + n] {
                *v = rng.range(-bound, bound);
            }
            off += n;
        }
        Ok(c)
    }

    /// Encoder features of one prepared (`MAP_SIZE x MAP_SIZE`) map.
    pub fn encode(&self, map: &Grid) -> Vec<f64> {
        net::encode(&self.params, map).features
    }

    /// Score from already-encoded per-frame features, oldest first.
    pub fn score_features(&self, feats: &[&[f64]]) -> Result<f64> {
        ensure!(
            feats.len() == self.window,
            InvalidArgument,
            "gate expects {} frames, got {}",
            self.window,
            feats.len()
        );
        ensure!(
            feats.iter().all(|f| f.len() == FEATURES),
            InvalidArgument,
            "feature vectors must have {FEATURES} entries"
        );
        Ok(net::score_features(&self.params, feats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            window: self.window,
            map_size: MAP_SIZE,
            layers: manifest(),
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&ck).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, validating the layer manifest exactly.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: malformed checkpoint: {e}", path.display())))?;
        let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        if ck.map_size != MAP_SIZE || ck.window == 0 {
            return Err(bad(format!("map size {} / window {} not supported", ck.map_size, ck.window)));
        }
        if ck.layers != manifest() {
            return Err(bad("layer manifest does not match this network".into()));
        }
        if ck.params.len() != PARAM_COUNT || !ck.params.iter().all(|v| v.is_finite()) {
            return Err(bad(format!(
                "expected {PARAM_COUNT} finite parameters, got {}",
                ck.params.len()
            )));
        }
        Ok(Self {
            window: ck.window,
            params: ck.params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    window: usize,
    map_size: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

fn manifest() -> Vec<LayerShape> {
    LAYERS
        .iter()
        .map(|(n, s)| LayerShape {
            name: n.to_string(),
            shape: s.to_vec(),
        })
        .collect()
}

/// Resamples a similarity map onto the fixed gate input grid.
pub fn prepare_map(m: &SimilarityMap) -> Grid {
    m.values.resampled(MAP_SIZE, MAP_SIZE)
}

/// Encoder features of a similarity map.
pub fn map_features(c: &GateClassifier, m: &SimilarityMap) -> Vec<f64> {
    c.encode(&prepare_map(m))
}

/// `K` prepared maps, oldest first, with an optional training label.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWindow {
    pub maps: Vec<Arc<Grid>>,
    pub label: Option<bool>,
}

impl GateWindow {
    pub fn new(maps: Vec<Arc<Grid>>, label: Option<bool>) -> Result<Self> {
        ensure!(!maps.is_empty(), InvalidArgument, "a window needs at least one map");
        ensure!(
            maps.iter().all(|m| m.width >= 5 && m.height >= 5),
            InvalidArgument,
            "gate maps must be at least 5x5"
        );
        Ok(Self { maps, label })
    }
}

/// Shared all-zero map used to pad windows before the first frame.
pub fn zero_map() -> Arc<Grid> {
    Arc::new(Grid::zeros(MAP_SIZE, MAP_SIZE))
}

pub fn gate_forward(c: &GateClassifier, w: &GateWindow) -> Result<f64> {
    ensure!(
        w.maps.len() == c.window,
        InvalidArgument,
        "gate expects {} maps, window has {}",
        c.window,
        w.maps.len()
    );
    let enc: Vec<Vec<f64>> = w.maps.iter().map(|m| c.encode(m)).collect();
    let refs: Vec<&[f64]> = enc.iter().map(|v| v.as_slice()).collect();
    Ok(net::score_features(&c.params, &refs))
}

/// Mean BCE of labeled windows and its gradient.
pub fn loss_and_gradient(c: &GateClassifier, batch: &[GateWindow]) -> Result<(f64, Vec<f64>)> {
    ensure!(!batch.is_empty(), InvalidArgument, "empty batch");
    let mut items = Vec::with_capacity(batch.len());
    for w in batch {
        ensure!(
            w.maps.len() == c.window,
            InvalidArgument,
            "gate expects {} maps, window has {}",
            c.window,
            w.maps.len()
        );
        let y = w
            .label
            .ok_or_else(|| Error::InvalidArgument("training window has no label".into()))?;
        items.push((w.maps.as_slice(), if y { 1.0 } else { 0.0 }));
    }
    Ok(net::loss_and_gradient(&c.params, &items))
}

/// Classifier plus its momentum buffer.
#[derive(Debug, Clone)]
pub struct GateTrainer {
    pub classifier: GateClassifier,
    velocity: Vec<f64>,
}

impl GateTrainer {
    pub fn new(classifier: GateClassifier) -> Self {
        Self {
            velocity: vec![0.0; classifier.params.len()],
            classifier,
        }
    }
}

/// One SGD-with-momentum step (`v = mu v + g`, `theta -= lr v`) on the mean
/// BCE of `batch`. Returns the loss before the step; a non-finite loss or
/// gradient leaves the trainer untouched.
pub fn gate_train_step(t: &mut GateTrainer, batch: &[GateWindow], lr: f64, momentum: f64) -> Result<f64> {
    ensure!(lr >= 0.0 && lr.is_finite(), InvalidArgument, "learning rate must be non-negative");
    ensure!((0.0..1.0).contains(&momentum), InvalidArgument, "momentum must lie in [0, 1)");
    let (loss, g) = loss_and_gradient(&t.classifier, batch)?;
    if !loss.is_finite() || !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gate loss ({loss})")));
    }
    for ((p, v), gi) in t.classifier.params.iter_mut().zip(&mut t.velocity).zip(&g) {
        *v = momentum * *v + gi;
        *p -= lr * *v;
    }
    Ok(loss)
}

/// `omega = score > threshold`.
pub fn should_update(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// A tracker run aligned with ground truth, frame by frame.
#[derive(Debug, Clone)]
pub struct Track {
    pub predictions: Vec<Prediction>,
    pub truth: Vec<BBox>,
}

/// Labeled windows ending at every frame: positive iff IoU > 0.5, negative
/// iff IoU < 0.5, dropped at exactly 0.5. Frames without a map contribute
/// a zero map.
pub fn build_training_set(tracks: &[Track], window: usize) -> Result<Vec<GateWindow>> {
    ensure!(window > 0, InvalidArgument, "window length must be positive");
    let mut out = Vec::new();
    let zero = zero_map();
    for (i, tr) in tracks.iter().enumerate() {
        ensure!(
            !tr.truth.is_empty() && tr.truth.len() == tr.predictions.len(),
            InvalidArgument,
            "track {i}: {} predictions but {} truth boxes",
            tr.predictions.len(),
            tr.truth.len()
        );
        let maps: Vec<Arc<Grid>> = tr
            .predictions
            .iter()
            .map(|p| p.map.as_ref().map_or_else(|| zero.clone(), |m| Arc::new(prepare_map(m))))
            .collect();
        for t in 0..maps.len() {
            let v = frame_iou(&tr.predictions[t].bbox, &tr.truth[t]);
            if v == 0.5 {
                continue;
            }
            let mut w = Vec::with_capacity(window);
            for k in (0..window).rev() {
                w.push(if t >= k { maps[t - k].clone() } else { zero.clone() });
            }
            out.push(GateWindow {
                maps: w,
                label: Some(v > 0.5),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateTrainConfig {
    pub window: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Draw half of each batch from each class.
    pub balanced: bool,
    /// Stop once the mean loss over the last `patience` steps is below this.
    pub target_loss: Option<f64>,
    pub patience: usize,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 16,
            steps: 300,
            seed: 0,
            balanced: true,
            target_loss: None,
            patience: 10,
        }
    }
}

/// Trains a fresh classifier; returns it with the per-step batch losses.
pub fn train_gate(windows: &[GateWindow], cfg: &GateTrainConfig) -> Result<(GateClassifier, Vec<f64>)> {
    ensure!(cfg.batch_size > 0, Config, "batch_size must be positive");
    ensure!(cfg.patience > 0, Config, "patience must be positive");
    let pos: Vec<&GateWindow> = windows.iter().filter(|w| w.label == Some(true)).collect();
    let neg: Vec<&GateWindow> = windows.iter().filter(|w| w.label == Some(false)).collect();
    ensure!(
        !pos.is_empty() || !neg.is_empty(),
        InvalidArgument,
        "no labeled windows to train on"
    );
    let mut trainer = GateTrainer::new(GateClassifier::random(cfg.window, cfg.seed)?);
    let mut rng = SeededRng::stream(cfg.seed, streams::GATE_BATCHES);
    let all: Vec<&GateWindow> = pos.iter().chain(&neg).copied().collect();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch: Vec<GateWindow> = (0..cfg.batch_size)
            .map(|i| {
                let pool = match (cfg.balanced, pos.is_empty(), neg.is_empty()) {
                    (true, false, false) => {
                        if i % 2 == 0 {
                            &pos
                        } else {
                            &neg
                        }
                    }
                    _ => &all,
                };
                pool[rng.index(pool.len())].clone()
            })
            .collect();
        losses.push(gate_train_step(&mut trainer, &batch, cfg.lr, cfg.momentum)?);
        if let Some(target) = cfg.target_loss {
            if losses.len() >= cfg.patience {
                let recent = &losses[losses.len() - cfg.patience..];
                if recent.iter().sum::<f64>() / (cfg.patience as f64) < target {
                    break;
                }
            }
        }
    }
    Ok((trainer.classifier, losses))
}
