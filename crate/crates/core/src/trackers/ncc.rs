//! Normalized cross-correlation of a fixed exemplar against a search region.

use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;

use super::fft::{forward_t, good_size, inverse_t, padded};
use crate::error::{ensure, Error, Result};
use crate::geom::{resample_frame, BBox, Frame, Grid};

/// Per-pixel variance below which a window (or template) counts as flat.
const FLAT_VARIANCE: f64 = 1e-10;

type SpectrumCache = Arc<Mutex<Vec<((usize, usize), Arc<Vec<Complex64>>)>>>;

/// A zero-mean, unit-norm grayscale exemplar.
#[derive(Debug, Clone)]
pub struct Template {
    width: usize,
    height: usize,
    values: Vec<f64>,
    spectra: SpectrumCache,
}

impl PartialEq for Template {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.values == other.values
    }
}

impl Template {
    /// Normalizes raw intensities; flat input cannot be normalized.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        ensure!(
            width > 0 && height > 0 && values.len() == width * height,
            InvalidArgument,
            "template needs {width}x{height} values, got {}",
            values.len()
        );
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let ss: f64 = centered.iter().map(|v| v * v).sum();
        if !(ss > FLAT_VARIANCE * n) {
            return Err(Error::InvalidArgument(
                "template has zero variance and cannot be normalized".into(),
            ));
        }
        let norm = ss.sqrt();
        Ok(Self {
            width,
            height,
            values: centered.into_iter().map(|v| v / norm).collect(),
            spectra: Default::default(),
        })
    }

    pub fn from_frame(f: &Frame) -> Result<Self> {
        Self::from_values(f.width(), f.height(), f.pixels())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bilinear resize followed by renormalization.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let g = Grid::from_vec(self.width, self.height, self.values.clone()).resampled(width, height);
        Self::from_values(width, height, &g.values)
    }

    /// Conjugated (transposed-layout) spectrum zero-padded to `pw x ph`,
    /// memoized per size.
    fn conj_spectrum(&self, pw: usize, ph: usize) -> Arc<Vec<Complex64>> {
        let mut cache = self.spectra.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, s)) = cache.iter().find(|(k, _)| *k == (pw, ph)) {
            return s.clone();
        }
        let mut buf = forward_t(padded(&self.values, self.width, self.height, pw, ph), pw, ph);
        buf.iter_mut().for_each(|v| *v = v.conj());
        let s = Arc::new(buf);
        if cache.len() >= 16 {
            cache.remove(0);
        }
        cache.push(((pw, ph), s.clone()));
        s
    }
}

fn check_sizes(region: &Grid, t: &Template) -> Result<(usize, usize)> {
    ensure!(
        region.width >= t.width && region.height >= t.height,
        InvalidArgument,
        "search region {}x{} is smaller than the {}x{} template",
        region.width,
        region.height,
        t.width,
        t.height
    );
    Ok((region.width - t.width + 1, region.height - t.height + 1))
}

#[inline]
fn score(dot: f64, var_sum: f64, n: f64) -> f64 {
    if var_sum <= FLAT_VARIANCE * n {
        0.0
    } else {
        (dot / var_sum.sqrt()).clamp(-1.0, 1.0)
    }
}

/// NCC at every valid placement, computed window by window.
pub fn ncc_map_direct(region: &Grid, t: &Template) -> Result<Grid> {
    let (mw, mh) = check_sizes(region, t)?;
    let n = (t.width * t.height) as f64;
    let rw = region.width;
    let mut out = Grid::zeros(mw, mh);
    for v in 0..mh {
        for u in 0..mw {
            let (mut sum, mut dot) = (0.0, 0.0);
            for j in 0..t.height {
                let row = &region.values[(v + j) * rw + u..(v + j) * rw + u + t.width];
                let trow = &t.values[j * t.width..(j + 1) * t.width];
                for (a, b) in row.iter().zip(trow) {
                    sum += a;
                    dot += a * b;
                }
            }
            let mean = sum / n;
            let mut var_sum = 0.0;
            for j in 0..t.height {
                let row = &region.values[(v + j) * rw + u..(v + j) * rw + u + t.width];
                var_sum += row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
            }
            out.set(u, v, score(dot, var_sum, n));
        }
    }
    Ok(out)
}

/// NCC via FFT cross-correlation and integral images for the window energy.
pub fn ncc_map_fft(region: &Grid, t: &Template) -> Result<Grid> {
    Ok(ncc_maps_fft(region, &[t])?.remove(0))
}

/// NCC maps of several templates against one region. The region spectrum
/// and window statistics are shared, and inverse transforms are paired: two
/// real correlations come out of one complex inverse as real and imaginary
/// parts.
pub fn ncc_maps_fft(region: &Grid, templates: &[&Template]) -> Result<Vec<Grid>> {
    for t in templates {
        check_sizes(region, t)?;
    }
    let (rw, rh) = (region.width, region.height);
    let (pw, ph) = (good_size(rw), good_size(rh));
    let spec = forward_t(padded(&region.values, rw, rh, pw, ph), pw, ph);

    // Integral images with a zero border row/column.
    let iw = rw + 1;
    let mut s1 = vec![0.0; iw * (rh + 1)];
    let mut s2 = vec![0.0; iw * (rh + 1)];
    for y in 0..rh {
        let (mut r1, mut r2) = (0.0, 0.0);
        for x in 0..rw {
            let v = region.values[y * rw + x];
            r1 += v;
            r2 += v * v;
            s1[(y + 1) * iw + x + 1] = s1[y * iw + x + 1] + r1;
            s2[(y + 1) * iw + x + 1] = s2[y * iw + x + 1] + r2;
        }
    }

    let mut out = Vec::with_capacity(templates.len());
    for pair in templates.chunks(2) {
        let a = pair[0].conj_spectrum(pw, ph);
        let prod: Vec<Complex64> = match pair.get(1) {
            Some(t2) => {
                let b = t2.conj_spectrum(pw, ph);
                spec.iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(r, (x, y))| r * x + Complex64::i() * (r * y))
                    .collect()
            }
            None => spec.iter().zip(a.iter()).map(|(r, x)| r * x).collect(),
        };
        let corr = inverse_t(prod, pw, ph);
        for (k, t) in pair.iter().enumerate() {
            let (tw, th) = (t.width, t.height);
            let (mw, mh) = (rw - tw + 1, rh - th + 1);
            let n = (tw * th) as f64;
            let rect = |s: &[f64], u: usize, v: usize| {
                s[(v + th) * iw + u + tw] - s[v * iw + u + tw] - s[(v + th) * iw + u] + s[v * iw + u]
            };
            let mut g = Grid::zeros(mw, mh);
            for v in 0..mh {
                for u in 0..mw {
                    let sum = rect(&s1, u, v);
                    let var_sum = (rect(&s2, u, v) - sum * sum / n).max(0.0);
                    let c = corr[v * pw + u];
                    let dot = if k == 0 { c.re } else { c.im };
                    g.set(u, v, score(dot, var_sum, n));
                }
            }
            out.push(g);
        }
    }
    Ok(out)
}

fn direct_is_cheaper(region: &Grid, t: &Template) -> bool {
    let mw = region.width.saturating_sub(t.width) + 1;
    let mh = region.height.saturating_sub(t.height) + 1;
    let direct = (mw * mh * t.width * t.height) as f64;
    let p = (good_size(region.width) * good_size(region.height)) as f64;
    direct <= 8.0 * p * p.log2()
}

/// NCC map, choosing the cheaper evaluation path for the problem size.
pub fn ncc_map(region: &Grid, t: &Template) -> Result<Grid> {
    if direct_is_cheaper(region, t) {
        ncc_map_direct(region, t)
    } else {
        ncc_map_fft(region, t)
    }
}

/// [`ncc_map`] for several templates over the same region.
pub fn ncc_maps(region: &Grid, templates: &[&Template]) -> Result<Vec<Grid>> {
    if templates.iter().all(|t| direct_is_cheaper(region, t)) {
        templates.iter().map(|t| ncc_map_direct(region, t)).collect()
    } else {
        ncc_maps_fft(region, templates)
    }
}

/// Geometry of a resampled search: which frame rectangle was sampled and at
/// what rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sampling {
    pub origin: (f64, f64),
    pub stride: (f64, f64),
}

impl Sampling {
    /// Frame box of a template placed at grid cell `(u, v)`.
    pub fn placement(&self, u: usize, v: usize, t: &Template) -> BBox {
        BBox::new(
            self.origin.0 + u as f64 * self.stride.0,
            self.origin.1 + v as f64 * self.stride.1,
            t.width as f64 * self.stride.0,
            t.height as f64 * self.stride.1,
        )
    }
}

/// Resamples `region` of `f` at the rate that maps `reference` frame pixels
/// onto `cells` grid cells.
pub(crate) fn sample_region(
    f: &Frame,
    region: &BBox,
    reference: (f64, f64),
    cells: (usize, usize),
) -> Result<(Grid, Sampling)> {
    ensure!(region.present, InvalidArgument, "search region is absent");
    region.validate()?;
    ensure!(
        reference.0 > 0.0 && reference.1 > 0.0,
        InvalidArgument,
        "reference size must be positive"
    );
    let gw = ((region.w * cells.0 as f64 / reference.0).round() as usize).max(1);
    let gh = ((region.h * cells.1 as f64 / reference.1).round() as usize).max(1);
    let grid = resample_frame(f, region, gw, gh);
    let sampling = Sampling {
        origin: (region.x, region.y),
        stride: (region.w / gw as f64, region.h / gh as f64),
    };
    Ok((grid, sampling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_grid(w: usize, h: usize, seed: u64) -> Grid {
        let mut r = SeededRng::stream(seed, 0);
        Grid::from_vec(w, h, (0..w * h).map(|_| r.uniform()).collect())
    }

    /// Textbook per-window NCC, written independently of the engine.
    fn brute_ncc(region: &Grid, raw: &[f64], tw: usize, th: usize) -> Grid {
        let n = (tw * th) as f64;
        let tm = raw.iter().sum::<f64>() / n;
        let tdev: Vec<f64> = raw.iter().map(|v| v - tm).collect();
        let tn = tdev.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (mw, mh) = (region.width - tw + 1, region.height - th + 1);
        let mut out = Grid::zeros(mw, mh);
        for v in 0..mh {
            for u in 0..mw {
                let mut win = Vec::new();
                for j in 0..th {
                    for i in 0..tw {
                        win.push(region.get(u + i, v + j));
                    }
                }
                let wm = win.iter().sum::<f64>() / n;
                let num: f64 = win.iter().zip(&tdev).map(|(a, b)| (a - wm) * b).sum();
                let wn = win.iter().map(|a| (a - wm) * (a - wm)).sum::<f64>().sqrt();
                out.set(u, v, if wn == 0.0 { 0.0 } else { num / (wn * tn) });
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..20 {
            let frame = random_grid(8, 8, seed);
            let raw = random_grid(3, 3, 1000 + seed).values;
            let t = Template::from_values(3, 3, &raw).unwrap();
            let oracle = brute_ncc(&frame, &raw, 3, 3);
            for map in [ncc_map_direct(&frame, &t).unwrap(), ncc_map_fft(&frame, &t).unwrap()] {
                for (a, b) in map.values.iter().zip(&oracle.values) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn fft_path_matches_direct_path_on_larger_problems() {
        for seed in 0..4 {
            let frame = random_grid(61, 47, seed);
            let raw = random_grid(16, 12, 50 + seed).values;
            let t = Template::from_values(16, 12, &raw).unwrap();
            let a = ncc_map_direct(&frame, &t).unwrap();
            let b = ncc_map_fft(&frame, &t).unwrap();
            let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "max error {err}");
        }
    }

    #[test]
    fn paired_templates_match_single_maps() {
        let frame = random_grid(40, 33, 21);
        let ts: Vec<Template> = [(7, 7), (9, 8), (5, 11)]
            .iter()
            .enumerate()
            .map(|(i, &(w, h))| Template::from_values(w, h, &random_grid(w, h, 30 + i as u64).values).unwrap())
            .collect();
        let refs: Vec<&Template> = ts.iter().collect();
        let maps = ncc_maps_fft(&frame, &refs).unwrap();
        for (m, t) in maps.iter().zip(&ts) {
            let d = ncc_map_direct(&frame, t).unwrap();
            assert_eq!((m.width, m.height), (d.width, d.height));
            for (a, b) in m.values.iter().zip(&d.values) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exact_copy_scores_one_and_negation_minus_one() {
        let mut frame = random_grid(20, 20, 9);
        let raw = random_grid(5, 5, 10).values;
        for j in 0..5 {
            for i in 0..5 {
                frame.set(7 + i, 4 + j, raw[j * 5 + i]);
            }
        }
        let t = Template::from_values(5, 5, &raw).unwrap();
        let map = ncc_map(&frame, &t).unwrap();
        assert_eq!(map.argmax(), Some((7, 4)));
        assert!((map.get(7, 4) - 1.0).abs() < 1e-12);

        let neg: Vec<f64> = raw.iter().map(|v| -v).collect();
        let tn = Template::from_values(5, 5, &neg).unwrap();
        let map = ncc_map(&frame, &tn).unwrap();
        assert!((map.get(7, 4) + 1.0).abs() < 1e-12);
        assert!(map.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn flat_windows_score_zero() {
        let mut frame = Grid::from_vec(10, 10, vec![0.4; 100]);
        frame.set(9, 9, 0.9);
        let t = Template::from_values(3, 3, &random_grid(3, 3, 2).values).unwrap();
        for map in [ncc_map_direct(&frame, &t).unwrap(), ncc_map_fft(&frame, &t).unwrap()] {
            assert_eq!(map.get(0, 0), 0.0);
            assert_eq!(map.get(3, 3), 0.0);
        }
    }

    #[test]
    fn rejects_flat_template_and_small_region() {
        assert!(Template::from_values(3, 3, &[0.5; 9]).is_err());
        let t = Template::from_values(3, 3, &random_grid(3, 3, 2).values).unwrap();
        assert!(ncc_map(&random_grid(2, 5, 1), &t).is_err());
    }

    #[test]
    fn gain_does_not_change_scores() {
        let frame = random_grid(30, 30, 4);
        let scaled = Grid::from_vec(30, 30, frame.values.iter().map(|v| v * 0.37).collect());
        let t = Template::from_values(6, 6, &random_grid(6, 6, 5).values).unwrap();
        let a = ncc_map(&frame, &t).unwrap();
        let b = ncc_map(&scaled, &t).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
