//! MOSSE correlation-filter tracker, updated on every frame.
//!
//! The filter is kept as running numerator / denominator accumulators
//! `A = G . conj(F)`, `B = F . conj(F)` and applied as `H = A / (B + lambda)`;
//! the response to a patch with spectrum `F` is `real(IFFT(F . H))`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{fft2, padded};
use super::{Prediction, SearchKind, SimilarityMap};
use crate::error::{ensure, Error, Result};
use crate::geom::{resample_frame, BBox, Frame, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosseConfig {
    /// Regularizer added to the denominator.
    pub lambda: f64,
    /// Running-average update rate.
    pub rate: f64,
    /// Gaussian response width as a fraction of the box width.
    pub sigma_factor: f64,
    /// Window side as a multiple of the box side.
    pub window_factor: f64,
}

impl Default for MosseConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            rate: 0.125,
            sigma_factor: 0.1,
            window_factor: 2.0,
        }
    }
}

impl MosseConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda > 0.0 && self.lambda.is_finite(), Config, "lambda must be positive");
        ensure!((0.0..=1.0).contains(&self.rate), Config, "rate must lie in [0, 1]");
        ensure!(self.sigma_factor > 0.0, Config, "sigma_factor must be positive");
        ensure!(self.window_factor >= 1.0, Config, "window_factor must be at least 1");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosseState {
    pub num: Vec<Complex64>,
    pub den: Vec<Complex64>,
    /// Odd window dimensions, so the target center is a cell center.
    pub window: (usize, usize),
    pub config: MosseConfig,
    pub last_box: BBox,
    target: Vec<Complex64>,
    taper: Vec<f64>,
}

impl MosseState {
    /// Frequency-domain filter `A / (B + lambda)`.
    pub fn filter(&self) -> Vec<Complex64> {
        self.num
            .iter()
            .zip(&self.den)
            .map(|(a, b)| a / (b + self.config.lambda))
            .collect()
    }

    fn center_cell(&self) -> (usize, usize) {
        ((self.window.0 - 1) / 2, (self.window.1 - 1) / 2)
    }

    /// Preprocessed spectrum of the window centered on `b`; `None` when flat.
    fn spectrum(&self, f: &Frame, b: &BBox) -> Option<Vec<Complex64>> {
        let (ww, wh) = self.window;
        let (cx, cy) = b.center();
        let region = BBox::from_center(cx, cy, ww as f64, wh as f64);
        let patch = resample_frame(f, &region, ww, wh);
        let mut v: Vec<f64> = patch.values.iter().map(|p| (1.0 + 255.0 * p).ln()).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-9) {
            return None;
        }
        let vals: Vec<f64> = v.iter().zip(&self.taper).map(|(x, t)| x / norm * t).collect();
        let mut buf = padded(&vals, ww, wh, ww, wh);
        fft2(&mut buf, ww, wh, false);
        Some(buf)
    }

    fn accumulate(&mut self, spec: &[Complex64], rate: f64) {
        for i in 0..spec.len() {
            let a = self.target[i] * spec[i].conj();
            let b = spec[i] * spec[i].conj();
            self.num[i] = rate * a + (1.0 - rate) * self.num[i];
            self.den[i] = rate * b + (1.0 - rate) * self.den[i];
        }
    }
}

/// `real(IFFT(FFT(patch) . filter))`: circular correlation with the spatial
/// filter whose conjugated spectrum is `filter`.
pub fn correlate_frequency(filter: &[Complex64], patch: &Grid) -> Result<Grid> {
    let (w, h) = (patch.width, patch.height);
    ensure!(
        filter.len() == w * h,
        InvalidArgument,
        "filter has {} coefficients, patch has {} pixels",
        filter.len(),
        w * h
    );
    let mut buf = padded(&patch.values, w, h, w, h);
    fft2(&mut buf, w, h, false);
    for (a, b) in buf.iter_mut().zip(filter) {
        *a *= b;
    }
    fft2(&mut buf, w, h, true);
    Ok(Grid::from_vec(w, h, buf.iter().map(|c| c.re).collect()))
}

fn odd(v: f64) -> usize {
    2 * ((v / 2.0).round().max(1.0) as usize) + 1
}

pub fn mosse_init(f: &Frame, b: &BBox, cfg: MosseConfig) -> Result<MosseState> {
    cfg.validate()?;
    ensure!(b.present, InvalidArgument, "initial box must be present");
    b.validate()?;
    let window = (odd(cfg.window_factor * b.w), odd(cfg.window_factor * b.h));
    let (ww, wh) = window;
    let (ic, jc) = (((ww - 1) / 2) as f64, ((wh - 1) / 2) as f64);
    let sigma = cfg.sigma_factor * b.w;
    let mut gauss = Vec::with_capacity(ww * wh);
    let mut taper = Vec::with_capacity(ww * wh);
    for j in 0..wh {
        for i in 0..ww {
            let (dx, dy) = (i as f64 - ic, j as f64 - jc);
            gauss.push(Complex64::new((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(), 0.0));
            taper.push(hann(i, ww) * hann(j, wh));
        }
    }
    fft2(&mut gauss, ww, wh, false);
    let mut s = MosseState {
        num: vec![Complex64::default(); ww * wh],
        den: vec![Complex64::default(); ww * wh],
        window,
        config: cfg,
        last_box: *b,
        target: gauss,
        taper,
    };
    let spec = s
        .spectrum(f, b)
        .ok_or_else(|| Error::InvalidArgument("initial patch has zero energy".into()))?;
    s.accumulate(&spec, 1.0);
    Ok(s)
}

fn hann(i: usize, n: usize) -> f64 {
    // Offset by one so the border samples stay non-zero.
    0.5 - 0.5 * (std::f64::consts::TAU * (i + 1) as f64 / (n + 1) as f64).cos()
}

/// Detects at the response peak, then updates the accumulators at the new box.
pub fn mosse_step(s: &mut MosseState, f: &Frame) -> Result<Prediction> {
    let b = s.last_box;
    let (ic, jc) = s.center_cell();
    let Some(spec) = s.spectrum(f, &b) else {
        // Nothing to correlate against: hold position.
        return Ok(Prediction {
            bbox: b,
            candidate: b,
            score: 0.0,
            kind: SearchKind::Local,
            map: None,
        });
    };
    let filter = s.filter();
    let mut buf: Vec<Complex64> = spec.iter().zip(&filter).map(|(a, h)| a * h).collect();
    let (ww, wh) = s.window;
    fft2(&mut buf, ww, wh, true);
    let response = Grid::from_vec(ww, wh, buf.iter().map(|c| c.re).collect());
    let (pi, pj) = response
        .argmax()
        .ok_or_else(|| Error::Numeric("empty correlation response".into()))?;
    let score = response.get(pi, pj);
    if !score.is_finite() {
        return Err(Error::Numeric("non-finite correlation response".into()));
    }
    let next = BBox::new(
        b.x + pi as f64 - ic as f64,
        b.y + pj as f64 - jc as f64,
        b.w,
        b.h,
    );
    if let Some(spec) = s.spectrum(f, &next) {
        let rate = s.config.rate;
        s.accumulate(&spec, rate);
    }
    s.last_box = next;
    Ok(Prediction {
        bbox: next,
        candidate: next,
        score,
        kind: SearchKind::Local,
        map: Some(SimilarityMap {
            values: response,
            origin: (b.x - ic as f64, b.y - jc as f64),
            stride: (1.0, 1.0),
            scale: 1.0,
        }),
    })
}
