use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use super::{ChallengeEvent, Sequence, SequenceConfig};
use crate::error::{ensure, Error, Result};
use crate::geom::{clip_box, BBox, Frame};
use crate::rng::{streams, SeededRng};

/// Renders the configured video. Pure in `cfg`: equal configs give equal sequences.
pub fn generate_sequence(cfg: &SequenceConfig) -> Result<Sequence> {
    validate(cfg)?;
    let (w, h) = (cfg.width, cfg.height);

    let background = render_background(w, h, &mut SeededRng::stream(cfg.seed, streams::BACKGROUND));
    let target_tex = Texture::random(
        5,
        0.05,
        0.95,
        &mut SeededRng::stream(cfg.seed, streams::TARGET_TEXTURE),
    );
    let truth = trajectory(cfg);
    let props = EventProps::build(cfg, &truth);

    let mut noise_rng = SeededRng::stream(cfg.seed, streams::PIXEL_NOISE);
    let mut frames = Vec::with_capacity(cfg.length);
    for t in 1..=cfg.length {
        let mut buf = background.clone();
        for (ev, clutter) in cfg.events.iter().zip(&props.clutter) {
            if ev.active(t) {
                for (b, tex) in clutter {
                    draw_textured(&mut buf, w, h, b, |u, v| tex.sample(u, v));
                }
            }
        }
        let b = truth[t - 1];
        if b.present {
            let warp = TargetWarp::at(cfg, t);
            draw_textured(&mut buf, w, h, &b, |u, v| {
                let (u, v) = warp.apply(u, v);
                target_tex.sample(u, v)
            });
        }
        for (ev, occ) in cfg.events.iter().zip(&props.occluders) {
            if let (true, Some((ob, tex))) = (ev.active(t), occ) {
                draw_textured(&mut buf, w, h, ob, |u, v| tex.sample(u, v));
            }
        }
        apply_frame_effects(cfg, t, &mut buf);
        if cfg.pixel_noise_sd > 0.0 {
            for p in buf.iter_mut() {
                *p += cfg.pixel_noise_sd * noise_rng.normal();
            }
        }
        let pixels = buf.into_iter().map(quantize).collect();
        frames.push(Arc::new(Frame::new(w, h, pixels)?));
    }

    Ok(Sequence {
        frames,
        truth,
        tags: cfg.events.iter().map(ChallengeEvent::tag).collect::<BTreeSet<_>>(),
        seed: cfg.seed,
        repetition_boundaries: Vec::new(),
    })
}

/// Rounds to the nearest 8-bit level; the exact value the PGM reader reproduces.
pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f64 / 255.0
}

fn validate(cfg: &SequenceConfig) -> Result<()> {
    ensure!(
        cfg.width > 0 && cfg.height > 0 && cfg.length >= 1,
        Config,
        "frame size and length must be positive"
    );
    let (tw, th) = cfg.target_size;
    ensure!(tw > 0.0 && th > 0.0, Config, "target size must be positive");
    ensure!(
        cfg.motion.velocity >= 0.0 && cfg.motion.jitter_sd >= 0.0 && cfg.pixel_noise_sd >= 0.0,
        Config,
        "motion and noise parameters must be non-negative"
    );
    let max_scale = cfg
        .events
        .iter()
        .map(|e| match *e {
            ChallengeEvent::ScaleRamp { factor, .. } => factor.max(1.0),
            _ => 1.0,
        })
        .product::<f64>();
    ensure!(
        tw * max_scale <= cfg.width as f64 && th * max_scale <= cfg.height as f64,
        Config,
        "target {}x{} (max scale {max_scale}) is larger than the {}x{} frame",
        tw,
        th,
        cfg.width,
        cfg.height
    );
    for (i, ev) in cfg.events.iter().enumerate() {
        let (s, e) = ev.interval();
        if !(1 <= s && s <= e && e <= cfg.length) {
            return Err(Error::Config(format!(
                "event {i} ({}) interval [{s}, {e}] is outside [1, {}]",
                ev.tag(),
                cfg.length
            )));
        }
        let ok = match *ev {
            ChallengeEvent::Occlusion { margin, occluder, .. } => {
                margin >= 0.0 && occluder.map_or(true, |b| b.validate().is_ok() && b.present)
            }
            ChallengeEvent::Illumination {
                gain_min, gain_max, ..
            } => gain_min > 0.0 && gain_max > 0.0,
            ChallengeEvent::ScaleRamp { factor, .. } => factor > 0.0,
            ChallengeEvent::FastMotion { speed, .. } => speed >= 0.0,
            ChallengeEvent::Deformation { amplitude, .. } => amplitude >= 0.0,
            ChallengeEvent::LowResolution { factor, .. } => factor >= 1,
            _ => true,
        };
        ensure!(ok, Config, "event {i} ({}) has invalid parameters", ev.tag());
    }
    Ok(())
}

fn scale_factor(cfg: &SequenceConfig, t: usize) -> f64 {
    cfg.events
        .iter()
        .map(|ev| match *ev {
            ChallengeEvent::ScaleRamp { start, end, factor } => {
                if t < start {
                    1.0
                } else if t >= end {
                    factor
                } else {
                    factor.powf((t - start) as f64 / (end - start) as f64)
                }
            }
            _ => 1.0,
        })
        .product()
}

fn trajectory(cfg: &SequenceConfig) -> Vec<BBox> {
    let mut rng = SeededRng::stream(cfg.seed, streams::MOTION);
    let (fw, fh) = (cfg.width as f64, cfg.height as f64);
    let (tw, th) = cfg.target_size;
    let random_center = |rng: &mut SeededRng, w: f64, h: f64| {
        (
            rng.range(w / 2.0, fw - w / 2.0),
            rng.range(h / 2.0, fh - h / 2.0),
        )
    };

    let mut heading = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    let mut reenter = false;
    let mut out = Vec::with_capacity(cfg.length);
    for t in 1..=cfg.length {
        let s = scale_factor(cfg, t);
        let (w, h) = (tw * s, th * s);
        let hidden = cfg
            .events
            .iter()
            .any(|e| matches!(e, ChallengeEvent::OutOfView { .. }) && e.active(t));
        let burst = cfg.events.iter().find_map(|e| match *e {
            ChallengeEvent::FastMotion { speed, .. } if e.active(t) => Some(speed),
            _ => None,
        });

        if t == 1 {
            (cx, cy) = random_center(&mut rng, w, h);
            heading = rng.range(0.0, TAU);
        } else if hidden {
            reenter = true;
        } else if reenter {
            (cx, cy) = random_center(&mut rng, w, h);
            heading = rng.range(0.0, TAU);
            reenter = false;
        } else if let Some(speed) = burst {
            let phi = rng.range(0.0, TAU);
            cx += speed * phi.cos();
            cy += speed * phi.sin();
        } else {
            let jx = cfg.motion.jitter_sd * rng.normal();
            let jy = cfg.motion.jitter_sd * rng.normal();
            cx += cfg.motion.velocity * heading.cos() + jx;
            cy += cfg.motion.velocity * heading.sin() + jy;
        }

        let (nx, fx) = reflect(cx, w / 2.0, fw - w / 2.0);
        let (ny, fy) = reflect(cy, h / 2.0, fh - h / 2.0);
        (cx, cy) = (nx, ny);
        if fx {
            heading = PI - heading;
        }
        if fy {
            heading = -heading;
        }

        out.push(if hidden {
            BBox::absent()
        } else {
            BBox::from_center(cx, cy, w, h)
        });
    }
    out
}

/// Mirrors `p` back into `[lo, hi]`; reports whether a bounce happened.
fn reflect(p: f64, lo: f64, hi: f64) -> (f64, bool) {
    if hi <= lo {
        return ((lo + hi) / 2.0, false);
    }
    if p < lo {
        ((2.0 * lo - p).min(hi), true)
    } else if p > hi {
        ((2.0 * hi - p).max(lo), true)
    } else {
        (p, false)
    }
}

/// Square value grid sampled bilinearly over the unit square.
#[derive(Debug, Clone)]
struct Texture {
    n: usize,
    values: Vec<f64>,
}

impl Texture {
    fn random(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        Self {
            n,
            values: (0..n * n).map(|_| rng.range(lo, hi)).collect(),
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let m = (self.n - 1) as f64;
        let gx = (u.clamp(0.0, 1.0) * m).min(m);
        let gy = (v.clamp(0.0, 1.0) * m).min(m);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.n - 1), (y0 + 1).min(self.n - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let at = |x: usize, y: usize| self.values[y * self.n + x];
        let top = (1.0 - fx) * at(x0, y0) + fx * at(x1, y0);
        let bot = (1.0 - fx) * at(x0, y1) + fx * at(x1, y1);
        (1.0 - fy) * top + fy * bot
    }
}

fn render_background(w: usize, h: usize, rng: &mut SeededRng) -> Vec<f64> {
    let layer = |cell: f64, lo: f64, hi: f64, rng: &mut SeededRng| {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let g: Vec<f64> = (0..gw * gh).map(|_| rng.range(lo, hi)).collect();
        move |x: f64, y: f64| {
            let (gx, gy) = (x / cell, y / cell);
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let at = |i: usize, j: usize| g[j * gw + i];
            let top = (1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0);
            let bot = (1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1);
            (1.0 - fy) * top + fy * bot
        }
    };
    let coarse = layer(12.0, 0.3, 0.7, rng);
    let fine = layer(4.0, -0.05, 0.05, rng);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            out.push(coarse(px, py) + fine(px, py));
        }
    }
    out
}

/// Paints every pixel whose center lies inside `b` with `tex(u, v)`, where
/// `(u, v)` are the normalized coordinates of the pixel center within `b`.
fn draw_textured(buf: &mut [f64], w: usize, h: usize, b: &BBox, tex: impl Fn(f64, f64) -> f64) {
    let c = clip_box(b, w, h);
    if !c.present {
        return;
    }
    let x0 = (c.x - 0.5).ceil().max(0.0) as usize;
    let y0 = (c.y - 0.5).ceil().max(0.0) as usize;
    let x1 = ((c.right() - 0.5).ceil().max(0.0) as usize).min(w);
    let y1 = ((c.bottom() - 0.5).ceil().max(0.0) as usize).min(h);
    for py in y0..y1 {
        let v = (py as f64 + 0.5 - b.y) / b.h;
        for px in x0..x1 {
            let u = (px as f64 + 0.5 - b.x) / b.w;
            buf[py * w + px] = tex(u, v);
        }
    }
}

/// Texture-coordinate warps for deformation and in-plane rotation.
struct TargetWarp {
    angle: f64,
    deform: f64,
    phase: f64,
}

impl TargetWarp {
    fn at(cfg: &SequenceConfig, t: usize) -> Self {
        let mut warp = TargetWarp {
            angle: 0.0,
            deform: 0.0,
            phase: 0.0,
        };
        let (tw, _) = cfg.target_size;
        for ev in &cfg.events {
            if !ev.active(t) {
                continue;
            }
            let (s, e) = ev.interval();
            let envelope = if e == s {
                1.0
            } else {
                (PI * (t - s) as f64 / (e - s) as f64).sin()
            };
            match *ev {
                ChallengeEvent::InPlaneRotation { max_angle_deg, .. } => {
                    warp.angle += max_angle_deg.to_radians() * envelope;
                }
                ChallengeEvent::Deformation { amplitude, .. } => {
                    warp.deform += amplitude / tw * envelope;
                    warp.phase = 0.3 * (t - s) as f64;
                }
                _ => {}
            }
        }
        warp
    }

    fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let (mut u, mut v) = (u, v);
        if self.angle != 0.0 {
            let (du, dv) = (u - 0.5, v - 0.5);
            let (s, c) = self.angle.sin_cos();
            u = 0.5 + c * du + s * dv;
            v = 0.5 - s * du + c * dv;
        }
        if self.deform != 0.0 {
            let du = self.deform * (TAU * v + self.phase).sin();
            let dv = self.deform * (TAU * u + self.phase).sin();
            u += du;
            v += dv;
        }
        (u, v)
    }
}

/// Per-event random properties, drawn once per sequence in event order.
struct EventProps {
    clutter: Vec<Vec<(BBox, Texture)>>,
    occluders: Vec<Option<(BBox, Texture)>>,
}

impl EventProps {
    fn build(cfg: &SequenceConfig, truth: &[BBox]) -> Self {
        let mut rng = SeededRng::stream(cfg.seed, streams::EVENTS);
        let (tw, th) = cfg.target_size;
        let (fw, fh) = (cfg.width as f64, cfg.height as f64);
        let mut clutter = Vec::new();
        let mut occluders = Vec::new();
        for ev in &cfg.events {
            let mut distractors = Vec::new();
            let mut occ = None;
            match *ev {
                ChallengeEvent::Clutter { count, .. } => {
                    for _ in 0..count {
                        let x = rng.range(0.0, fw - tw);
                        let y = rng.range(0.0, fh - th);
                        distractors.push((
                            BBox::new(x, y, tw, th),
                            Texture::random(5, 0.05, 0.95, &mut rng),
                        ));
                    }
                }
                ChallengeEvent::Occlusion {
                    start,
                    end,
                    occluder,
                    margin,
                } => {
                    let tex = Texture::random(4, 0.1, 0.9, &mut rng);
                    let b = occluder.or_else(|| {
                        path_hull(&truth[start - 1..end]).map(|hull| {
                            let (mx, my) = (margin * tw, margin * th);
                            BBox::new(hull.x - mx, hull.y - my, hull.w + 2.0 * mx, hull.h + 2.0 * my)
                        })
                    });
                    occ = b.map(|b| (b, tex));
                }
                _ => {}
            }
            clutter.push(distractors);
            occluders.push(occ);
        }
        Self { clutter, occluders }
    }
}

fn path_hull(boxes: &[BBox]) -> Option<BBox> {
    let present: Vec<&BBox> = boxes.iter().filter(|b| b.present).collect();
    if present.is_empty() {
        return None;
    }
    let x0 = present.iter().map(|b| b.x).fold(f64::INFINITY, f64::min);
    let y0 = present.iter().map(|b| b.y).fold(f64::INFINITY, f64::min);
    let x1 = present.iter().map(|b| b.right()).fold(f64::NEG_INFINITY, f64::max);
    let y1 = present.iter().map(|b| b.bottom()).fold(f64::NEG_INFINITY, f64::max);
    Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
}

fn apply_frame_effects(cfg: &SequenceConfig, t: usize, buf: &mut [f64]) {
    let (w, h) = (cfg.width, cfg.height);
    for ev in cfg.events.iter().filter(|e| e.active(t)) {
        match *ev {
            ChallengeEvent::Illumination {
                start,
                end,
                gain_min,
                gain_max,
            } => {
                let a = if end == start {
                    1.0
                } else {
                    (t - start) as f64 / (end - start) as f64
                };
                let gain = gain_max + (gain_min - gain_max) * a;
                buf.iter_mut().for_each(|p| *p *= gain);
            }
            ChallengeEvent::MotionBlur { radius, .. } if radius > 0 => box_blur(buf, w, h, radius),
            ChallengeEvent::LowResolution { factor, .. } if factor > 1 => {
                block_downsample(buf, w, h, factor)
            }
            _ => {}
        }
    }
}

fn box_blur(buf: &mut [f64], w: usize, h: usize, r: usize) {
    let n = (2 * r + 1) as f64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in 0..=2 * r {
                let xx = (x + k).saturating_sub(r).min(w - 1);
                s += buf[y * w + xx];
            }
            tmp[y * w + x] = s / n;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in 0..=2 * r {
                let yy = (y + k).saturating_sub(r).min(h - 1);
                s += tmp[yy * w + x];
            }
            buf[y * w + x] = s / n;
        }
    }
}

fn block_downsample(buf: &mut [f64], w: usize, h: usize, k: usize) {
    for by in (0..h).step_by(k) {
        for bx in (0..w).step_by(k) {
            let (ex, ey) = ((bx + k).min(w), (by + k).min(h));
            let mut s = 0.0;
            for y in by..ey {
                for x in bx..ex {
                    s += buf[y * w + x];
                }
            }
            let mean = s / ((ex - bx) * (ey - by)) as f64;
            for y in by..ey {
                for x in bx..ex {
                    buf[y * w + x] = mean;
                }
            }
        }
    }
}
