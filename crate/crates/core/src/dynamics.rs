//! Online gradient descent on a linear tracker with noisy self-labels.
//!
//! The model predicts the four box coordinates as `f(x) = phi^T g(x)` over a
//! fixed featurizer `g`, so `grad_phi f = g(x)` and every parameter update
//! splits exactly into a perfect-update part (driven by the true boxes) and a
//! bias part (driven by the label noise):
//!
//! ```text
//! phi' - phi = -2 eta E[(f_i - y*_i) g_i^T]  +  2 eta E[delta_i g_i^T]
//!              \______ perfect ________/      \_____ bias _____/
//! ```
//!
//! Because `f` is linear in `phi`, the induced change of any prediction,
//! `(phi' - phi)^T g(x)`, is exact rather than a first-order estimate.

use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::geom::{extract_patch, BBox, Frame};
use crate::rng::{streams, SeededRng};
use crate::synthvid::Sequence;

/// Number of regressed box coordinates `(x, y, w, h)`.
pub const COORDS: usize = 4;

/// A `dim x 4` real matrix, row-major: row `k` holds the weights of feature `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl ParamMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * COORDS],
        }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == dim * COORDS,
            InvalidArgument,
            "a {dim}x{COORDS} matrix needs {} values, got {}",
            dim * COORDS,
            values.len()
        );
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, feature: usize, coord: usize) -> f64 {
        self.values[feature * COORDS + coord]
    }

    pub fn set(&mut self, feature: usize, coord: usize, v: f64) {
        self.values[feature * COORDS + coord] = v;
    }

    /// `M^T g`, a 4-vector.
    pub fn apply(&self, g: &[f64]) -> [f64; COORDS] {
        debug_assert_eq!(g.len(), self.dim);
        let mut out = [0.0; COORDS];
        for (row, gk) in self.values.chunks_exact(COORDS).zip(g) {
            for c in 0..COORDS {
                out[c] += row[c] * gk;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Accumulates `scale * g v^T`.
    fn add_outer(&mut self, g: &[f64], v: &[f64; COORDS], scale: f64) {
        for (row, gk) in self.values.chunks_exact_mut(COORDS).zip(g) {
            let s = scale * gk;
            for c in 0..COORDS {
                row[c] += s * v[c];
            }
        }
    }
}

/// Flattened, mean-subtracted `patch x patch` crop around a context box, plus
/// a trailing constant-1 bias feature. Independent of the model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMap {
    pub patch: usize,
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self { patch: 16 }
    }
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.patch * self.patch + 1
    }

    pub fn featurize(&self, frame: &Frame, context: &BBox) -> Result<Vec<f64>> {
        let p = extract_patch(frame, context, self.patch, self.patch)?;
        let n = (self.patch * self.patch) as f64;
        let mean = p.pixels().iter().sum::<f64>() / n;
        let mut g: Vec<f64> = p.pixels().iter().map(|v| v - mean).collect();
        g.push(1.0);
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrackerModel {
    pub phi: ParamMatrix,
    pub feature_map: FeatureMap,
}

impl LinearTrackerModel {
    pub fn new(feature_map: FeatureMap) -> Self {
        Self {
            phi: ParamMatrix::zeros(feature_map.dim()),
            feature_map,
        }
    }

    /// Zero appearance weights, bias row set to `init`: predicts `init` on any frame.
    pub fn anchored(feature_map: FeatureMap, init: &BBox) -> Self {
        let mut m = Self::new(feature_map);
        let bias = m.phi.dim() - 1;
        for (c, v) in init.coords().into_iter().enumerate() {
            m.phi.set(bias, c, v);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn predict(&self, features: &[f64]) -> Result<[f64; COORDS]> {
        ensure!(
            features.len() == self.dim(),
            InvalidArgument,
            "feature dimension {} does not match model dimension {}",
            features.len(),
            self.dim()
        );
        Ok(self.phi.apply(features))
    }
}

/// One training pair. `label = truth + noise` holds by construction when the
/// oracle truth is known.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: [f64; COORDS],
    pub truth: Option<[f64; COORDS]>,
    pub noise: Option<[f64; COORDS]>,
}

impl LabeledSample {
    pub fn with_truth(features: Vec<f64>, truth: [f64; COORDS], noise: [f64; COORDS]) -> Self {
        let mut label = [0.0; COORDS];
        for c in 0..COORDS {
            label[c] = truth[c] + noise[c];
        }
        Self {
            features,
            label,
            truth: Some(truth),
            noise: Some(noise),
        }
    }

    pub fn label_only(features: Vec<f64>, label: [f64; COORDS]) -> Self {
        Self {
            features,
            label,
            truth: None,
            noise: None,
        }
    }
}

fn check_dataset(m: &LinearTrackerModel, data: &[LabeledSample]) -> Result<()> {
    ensure!(!data.is_empty(), InvalidArgument, "dataset is empty");
    for (i, s) in data.iter().enumerate() {
        ensure!(
            s.features.len() == m.dim(),
            InvalidArgument,
            "sample {i}: feature dimension {} does not match model dimension {}",
            s.features.len(),
            m.dim()
        );
    }
    Ok(())
}

/// Mean squared error over the dataset (summed over the four coordinates) and
/// its gradient `2 E[(f_i - y_i) g_i^T]`.
pub fn loss_and_gradient(m: &LinearTrackerModel, data: &[LabeledSample]) -> Result<(f64, ParamMatrix)> {
    check_dataset(m, data)?;
    let t = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = ParamMatrix::zeros(m.dim());
    for s in data {
        let f = m.phi.apply(&s.features);
        let mut r = [0.0; COORDS];
        for c in 0..COORDS {
            r[c] = f[c] - s.label[c];
            loss += r[c] * r[c];
        }
        grad.add_outer(&s.features, &r, 2.0 / t);
    }
    Ok((loss / t, grad))
}

/// `phi <- phi - eta * grad`.
pub fn sgd_step(m: &LinearTrackerModel, grad: &ParamMatrix, eta: f64) -> Result<LinearTrackerModel> {
    ensure!(
        eta.is_finite() && eta >= 0.0,
        InvalidArgument,
        "learning rate must be finite and non-negative, got {eta}"
    );
    ensure!(
        grad.dim() == m.dim(),
        InvalidArgument,
        "gradient dimension {} does not match model dimension {}",
        grad.dim(),
        m.dim()
    );
    if !grad.is_finite() {
        return Err(Error::Numeric("gradient has non-finite entries".into()));
    }
    Ok(LinearTrackerModel {
        phi: m.phi.minus(&grad.scaled(eta)),
        feature_map: m.feature_map,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDecomposition {
    /// `-eta * grad`, from the plain gradient.
    pub full_step: ParamMatrix,
    /// `-2 eta E[(f_i - y*_i) g_i^T]`.
    pub perfect_term: ParamMatrix,
    /// `+2 eta E[delta_i g_i^T]`.
    pub bias_term: ParamMatrix,
    pub eta: f64,
    /// Dataset loss before the step.
    pub loss: f64,
}

pub fn decompose_step(m: &LinearTrackerModel, data: &[LabeledSample], eta: f64) -> Result<UpdateDecomposition> {
    decompose_with_gradient(m, data, eta).map(|(d, _)| d)
}

fn decompose_with_gradient(
    m: &LinearTrackerModel,
    data: &[LabeledSample],
    eta: f64,
) -> Result<(UpdateDecomposition, ParamMatrix)> {
    let (loss, grad) = loss_and_gradient(m, data)?;
    let full_step = grad.scaled(-eta);

    let t = data.len() as f64;
    let mut perfect_term = ParamMatrix::zeros(m.dim());
    let mut bias_term = ParamMatrix::zeros(m.dim());
    for (i, s) in data.iter().enumerate() {
        let (Some(truth), Some(noise)) = (s.truth, s.noise) else {
            return Err(Error::InvalidArgument(format!(
                "sample {i} carries no ground truth; decomposition needs oracle labels"
            )));
        };
        let f = m.phi.apply(&s.features);
        let mut err = [0.0; COORDS];
        for c in 0..COORDS {
            err[c] = f[c] - truth[c];
        }
        perfect_term.add_outer(&s.features, &err, -2.0 * eta / t);
        bias_term.add_outer(&s.features, &noise, 2.0 * eta / t);
    }
    Ok((
        UpdateDecomposition {
            full_step,
            perfect_term,
            bias_term,
            eta,
            loss,
        },
        grad,
    ))
}

/// Change of the prediction on one sample caused by a decomposed update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionChange {
    pub predicted_change: [f64; COORDS],
    pub perfect_component: [f64; COORDS],
    pub decay_component: [f64; COORDS],
}

pub fn dynamics_prediction(
    m: &LinearTrackerModel,
    dec: &UpdateDecomposition,
    sample: &LabeledSample,
) -> Result<PredictionChange> {
    ensure!(
        sample.features.len() == m.dim() && dec.full_step.dim() == m.dim(),
        InvalidArgument,
        "dimension mismatch: sample {}, update {}, model {}",
        sample.features.len(),
        dec.full_step.dim(),
        m.dim()
    );
    let g = &sample.features;
    Ok(PredictionChange {
        predicted_change: dec.full_step.apply(g),
        perfect_component: dec.perfect_term.apply(g),
        decay_component: dec.bias_term.apply(g),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyLabel {
    pub truth: [f64; COORDS],
    pub noise: [f64; COORDS],
    pub label: [f64; COORDS],
}

/// Adds independent `N(0, sigma^2)` noise to each box coordinate.
pub fn corrupt_annotation(truth: &BBox, sigma: f64, rng: &mut SeededRng) -> Result<NoisyLabel> {
    ensure!(truth.present, InvalidArgument, "cannot corrupt an absent annotation");
    ensure!(
        sigma.is_finite() && sigma >= 0.0,
        InvalidArgument,
        "noise level must be finite and non-negative, got {sigma}"
    );
    let t = truth.coords();
    let mut noise = [0.0; COORDS];
    let mut label = [0.0; COORDS];
    for c in 0..COORDS {
        noise[c] = sigma * rng.normal();
        label[c] = t[c] + noise[c];
    }
    Ok(NoisyLabel {
        truth: t,
        noise,
        label,
    })
}

/// Per-frame label-noise level.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSchedule {
    Constant(f64),
    PerFrame(Vec<f64>),
}

impl SigmaSchedule {
    fn at(&self, t: usize) -> Result<f64> {
        match self {
            SigmaSchedule::Constant(s) => Ok(*s),
            SigmaSchedule::PerFrame(v) => v.get(t).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("sigma schedule has no entry for frame {}", t + 1))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub eta: f64,
    /// Average over the last `W` samples only; `None` uses the whole history.
    pub window: Option<usize>,
    pub feature_map: FeatureMap,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            window: None,
            feature_map: FeatureMap::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based frame number.
    pub t: usize,
    pub loss: f64,
    pub cum_bias: f64,
    pub cum_perfect: f64,
    /// `||f(x_t; phi_t) - y*_t||`, measured before the update on frame `t`.
    pub pred_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecayTrace {
    pub rows: Vec<TraceRow>,
}

impl DecayTrace {
    pub fn terminal_cum_bias(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_bias)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,loss,cum_bias,cum_perfect,pred_error")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.t, r.loss, r.cum_bias, r.cum_perfect, r.pred_error
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Runs the online learning loop over a sequence with synthetic label noise.
///
/// Frame 1 is the user-given box and carries no noise. On each later frame
/// the model featurizes the frame around its previous label, records its
/// error against the truth, adds the noisy label to the dataset, decomposes
/// the gradient step and applies it. Frames without a visible target are
/// skipped.
pub fn run_decay_experiment(
    seq: &Sequence,
    sigma: &SigmaSchedule,
    cfg: &DynamicsConfig,
    seed: u64,
) -> Result<DecayTrace> {
    ensure!(
        cfg.eta.is_finite() && cfg.eta >= 0.0,
        InvalidArgument,
        "learning rate must be finite and non-negative, got {}",
        cfg.eta
    );
    ensure!(cfg.window != Some(0), InvalidArgument, "window must be positive");
    ensure!(
        seq.truth.len() == seq.frames.len() && !seq.is_empty(),
        Data,
        "sequence needs one truth box per frame"
    );
    let init = seq.truth[0];
    ensure!(init.present, Data, "the first frame must show the target");

    let mut rng = SeededRng::stream(seed, streams::ANNOTATION_NOISE);
    let mut model = LinearTrackerModel::anchored(cfg.feature_map, &init);
    let mut data: Vec<LabeledSample> = Vec::new();
    let mut context = init;
    let mut trace = DecayTrace::default();
    let (mut cum_bias, mut cum_perfect) = (0.0, 0.0);

    for (t, (frame, truth)) in seq.frames.iter().zip(&seq.truth).enumerate() {
        if !truth.present {
            continue;
        }
        let g = cfg.feature_map.featurize(frame, &context)?;
        let f = model.predict(&g)?;
        let target = truth.coords();
        let pred_error = (0..COORDS)
            .map(|c| (f[c] - target[c]).powi(2))
            .sum::<f64>()
            .sqrt();

        let noisy = if t == 0 {
            corrupt_annotation(truth, 0.0, &mut rng)?
        } else {
            corrupt_annotation(truth, sigma.at(t)?, &mut rng)?
        };
        data.push(LabeledSample::with_truth(g, noisy.truth, noisy.noise));

        let start = cfg.window.map_or(0, |w| data.len().saturating_sub(w));
        let (dec, grad) = decompose_with_gradient(&model, &data[start..], cfg.eta)?;
        if !dec.loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at frame {}", t + 1)));
        }
        cum_bias += dec.bias_term.frobenius();
        cum_perfect += dec.perfect_term.frobenius();
        model = sgd_step(&model, &grad, cfg.eta)?;
        context = label_box(&noisy.label);

        trace.rows.push(TraceRow {
            t: t + 1,
            loss: dec.loss,
            cum_bias,
            cum_perfect,
            pred_error,
        });
    }
    Ok(trace)
}

/// A usable search box from a noisy label: sides are kept at least one pixel.
fn label_box(label: &[f64; COORDS]) -> BBox {
    BBox::new(label[0], label[1], label[2].max(1.0), label[3].max(1.0))
}
