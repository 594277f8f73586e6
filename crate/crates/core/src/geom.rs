//! Boxes, grayscale frames and the overlap and resampling math shared by the
//! rest of the crate.
//!
//! Boxes are in continuous corner form `(x, y, w, h)`: pixel `(i, j)` covers
//! the unit square `[i, i+1) x [j, j+1)` and its center sits at `(i+0.5, j+0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Axis-aligned box with an explicit visibility flag.
///
/// An absent box is canonically all zeros; consumers ignore its coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub present: bool,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            present: true,
        }
    }

    pub fn absent() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 0.0,
            present: false,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// `[x, y, w, h]`, the regression target of the learning-dynamics model.
    pub fn coords(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_coords(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        if self.present {
            self.w * self.h
        } else {
            0.0
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Checks the presence invariant: a present box has finite coordinates and positive size.
    pub fn validate(&self) -> Result<()> {
        if self.present {
            ensure!(
                [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()),
                InvalidArgument,
                "box has non-finite coordinates: {self:?}"
            );
            ensure!(
                self.w > 0.0 && self.h > 0.0,
                InvalidArgument,
                "present box must have positive size, got {}x{}",
                self.w,
                self.h
            );
        }
        Ok(())
    }

    /// Same center, sides multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let (cx, cy) = self.center();
        Self::from_center(cx, cy, self.w * s, self.h * s)
    }
}

/// Intersection over union of two present boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    ensure!(
        a.present && b.present,
        InvalidArgument,
        "iou is undefined for an absent box"
    );
    if a.coords() == b.coords() {
        return Ok(1.0);
    }
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return Ok(0.0);
    }
    let union = a.w * a.h + b.w * b.h - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Intersection of `b` with the `width x height` frame rectangle.
pub fn clip_box(b: &BBox, width: usize, height: usize) -> BBox {
    if !b.present {
        return BBox::absent();
    }
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(width as f64);
    let y1 = b.bottom().min(height as f64);
    if x1 <= x0 || y1 <= y0 {
        BBox::absent()
    } else {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        ensure!(
            width > 0 && height > 0,
            InvalidArgument,
            "frame must be non-empty, got {width}x{height}"
        );
        ensure!(
            pixels.len() == width * height,
            InvalidArgument,
            "frame {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        );
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds a frame from `f(x, y)`, clamping results into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Multiplies every intensity by `gain`, which must keep values in range.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Frame::new(
            self.width,
            self.height,
            self.pixels.iter().map(|v| v * gain).collect(),
        )
    }

    pub fn as_grid(&self) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            values: self.pixels.clone(),
        }
    }
}

/// Unconstrained row-major real grid (similarity maps, filter responses, features).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "grid size mismatch");
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Position of the maximum; ties go to the smallest `(row, column)`.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Bilinear resample of the whole grid to `out_w x out_h`.
    pub fn resampled(&self, out_w: usize, out_h: usize) -> Grid {
        let region = BBox::new(0.0, 0.0, self.width as f64, self.height as f64);
        Grid::from_vec(
            out_w,
            out_h,
            resample(&self.values, self.width, self.height, &region, out_w, out_h),
        )
    }
}

/// Bilinear resample of the region `b` into an `out_w x out_h` frame.
///
/// Output pixel centers are mapped into the region; sample points that fall
/// outside the frame rectangle read 0, points inside interpolate between the
/// nearest pixel centers (clamped at the border).
pub fn extract_patch(f: &Frame, b: &BBox, out_w: usize, out_h: usize) -> Result<Frame> {
    ensure!(b.present, InvalidArgument, "cannot extract a patch from an absent box");
    b.validate()?;
    ensure!(
        out_w > 0 && out_h > 0,
        InvalidArgument,
        "patch size must be positive, got {out_w}x{out_h}"
    );
    let values = resample(&f.pixels, f.width, f.height, b, out_w, out_h);
    Ok(Frame {
        width: out_w,
        height: out_h,
        pixels: values,
    })
}

/// Same sampling as [`extract_patch`] but returning a [`Grid`]; no validation.
pub(crate) fn resample_frame(f: &Frame, b: &BBox, out_w: usize, out_h: usize) -> Grid {
    Grid::from_vec(
        out_w,
        out_h,
        resample(&f.pixels, f.width, f.height, b, out_w, out_h),
    )
}

fn resample(src: &[f64], w: usize, h: usize, b: &BBox, out_w: usize, out_h: usize) -> Vec<f64> {
    let sx = b.w / out_w as f64;
    let sy = b.h / out_h as f64;
    let (wf, hf) = (w as f64, h as f64);
    // Per-column taps are shared by every output row.
    let cols: Vec<Option<(usize, usize, f64)>> = (0..out_w)
        .map(|i| axis_taps(b.x + (i as f64 + 0.5) * sx, wf, w))
        .collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let Some((y0, y1, fy)) = axis_taps(b.y + (j as f64 + 0.5) * sy, hf, h) else {
            out.extend(std::iter::repeat(0.0).take(out_w));
            continue;
        };
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for c in &cols {
            match *c {
                None => out.push(0.0),
                Some((x0, x1, fx)) => {
                    let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                    let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                    out.push((1.0 - fy) * top + fy * bot);
                }
            }
        }
    }
    out
}

#[inline]
fn axis_taps(p: f64, extent: f64, n: usize) -> Option<(usize, usize, f64)> {
    if !(p >= 0.0 && p < extent) {
        return None;
    }
    let u = (p - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    Some((i0, i1, u - i0 as f64))
}
