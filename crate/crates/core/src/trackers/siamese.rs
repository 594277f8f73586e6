//! Template-matching siamese tracker with local, hierarchical global and
//! hybrid search.

use serde::{Deserialize, Serialize};

use super::ncc::{ncc_maps, sample_region, Template};
use super::{Prediction, SearchKind, SimilarityMap};
use crate::error::{ensure, Error, Result};
use crate::geom::{clip_box, extract_patch, BBox, Frame, Grid};

/// Fine scale steps used by local search and the last global stage.
pub const FINE_SCALES: [f64; 5] = [0.9509, 0.9751, 1.0, 1.0255, 1.0517];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseConfig {
    /// Side of the stored exemplar and of local / stage-3 correlation.
    pub template_size: usize,
    /// Side of the downscaled exemplar used by global stages 1 and 2.
    pub coarse_size: usize,
    pub local_scales: Vec<f64>,
    pub fine_scales: Vec<f64>,
    /// Global scales, relative to the initial box size.
    pub global_scales: Vec<f64>,
    /// Run global search on frames whose 1-based index is a multiple of
    /// this; `None` never does.
    pub global_interval: Option<usize>,
    /// Stage-1 locations carried into stage 2.
    pub candidates: usize,
    /// Local window side as a multiple of the box side.
    pub search_factor: f64,
    /// Stage-2 neighborhood side as a multiple of the largest global box.
    pub stage2_factor: f64,
    /// Stage-3 window side as a multiple of the candidate box side.
    pub refine_factor: f64,
    /// Report the target absent when the best score falls below this.
    pub absent_threshold: Option<f64>,
    /// Allowed box size range, as multiples of the initial box.
    pub scale_bounds: (f64, f64),
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            template_size: 64,
            coarse_size: 32,
            local_scales: FINE_SCALES.to_vec(),
            fine_scales: FINE_SCALES.to_vec(),
            global_scales: (0..11).map(|k| 2f64.powf(-0.4 + 0.08 * k as f64)).collect(),
            global_interval: Some(15),
            candidates: 10,
            search_factor: 3.0,
            stage2_factor: 1.5,
            refine_factor: 1.5,
            absent_threshold: None,
            scale_bounds: (0.25, 4.0),
        }
    }
}

impl SiameseConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.template_size >= 4 && self.coarse_size >= 4,
            Config,
            "template sizes must be at least 4 pixels"
        );
        for (name, s) in [
            ("local_scales", &self.local_scales),
            ("fine_scales", &self.fine_scales),
            ("global_scales", &self.global_scales),
        ] {
            ensure!(
                !s.is_empty() && s.iter().all(|v| v.is_finite() && *v > 0.0),
                Config,
                "{name} must be a non-empty list of positive scales"
            );
        }
        ensure!(self.global_interval != Some(0), Config, "global_interval must be positive");
        ensure!(self.candidates > 0, Config, "candidates must be positive");
        ensure!(
            self.search_factor >= 1.1 && self.stage2_factor >= 1.1 && self.refine_factor >= 1.1,
            Config,
            "search window factors must be at least 1.1"
        );
        let (lo, hi) = self.scale_bounds;
        ensure!(
            lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite(),
            Config,
            "scale_bounds must bracket 1, got ({lo}, {hi})"
        );
        Ok(())
    }
}

/// The exemplar at every size a search needs.
#[derive(Debug, Clone, PartialEq)]
struct Bank {
    coarse: Template,
    local: Vec<Template>,
    fine: Vec<Template>,
    global: Vec<Template>,
}

impl Bank {
    fn new(template: &Template, cfg: &SiameseConfig) -> Result<Self> {
        let sized = |base: &Template, n: usize, scales: &[f64], bounds: Option<(f64, f64)>| {
            scales
                .iter()
                .map(|&s| {
                    let s = bounds.map_or(s, |(lo, hi)| s.clamp(lo, hi));
                    let m = ((n as f64 * s).round() as usize).max(4);
                    base.resized(m, m)
                })
                .collect::<Result<Vec<_>>>()
        };
        let coarse = template.resized(cfg.coarse_size, cfg.coarse_size)?;
        Ok(Self {
            local: sized(template, cfg.template_size, &cfg.local_scales, None)?,
            fine: sized(template, cfg.template_size, &cfg.fine_scales, None)?,
            global: sized(&coarse, cfg.coarse_size, &cfg.global_scales, Some(cfg.scale_bounds))?,
            coarse,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseState {
    pub template: Template,
    bank: Bank,
    pub init_box: BBox,
    /// Last located box; local search is centered on it.
    pub last_box: BBox,
    /// 1-based index of the last processed frame (the init frame is 1).
    pub frame_index: usize,
    pub config: SiameseConfig,
}

impl SiameseState {
    pub fn coarse_template(&self) -> &Template {
        &self.bank.coarse
    }

    fn size_limits(&self) -> [(f64, f64); 2] {
        let (lo, hi) = self.config.scale_bounds;
        [
            (lo * self.init_box.w, hi * self.init_box.w),
            (lo * self.init_box.h, hi * self.init_box.h),
        ]
    }

    fn finish(&self, kind: SearchKind, best: Option<Scan>) -> Prediction {
        let Some(best) = best else {
            return Prediction::lost(kind);
        };
        let reported = match self.config.absent_threshold {
            Some(t) if best.score < t => BBox::absent(),
            _ => best.bbox,
        };
        Prediction {
            bbox: reported,
            candidate: best.bbox,
            score: best.score,
            kind,
            map: Some(best.map),
        }
    }
}

pub fn siamese_init(f: &Frame, b: &BBox, cfg: SiameseConfig) -> Result<SiameseState> {
    cfg.validate()?;
    ensure!(b.present, InvalidArgument, "initial box must be present");
    b.validate()?;
    let inside = clip_box(b, f.width(), f.height());
    ensure!(
        inside.present && (inside.area() - b.area()).abs() <= 1e-9 * b.area().max(1.0),
        InvalidArgument,
        "initial box {b:?} is not inside the {}x{} frame",
        f.width(),
        f.height()
    );
    let patch = extract_patch(f, b, cfg.template_size, cfg.template_size)?;
    let template = Template::from_frame(&patch)?;
    let bank = Bank::new(&template, &cfg)?;
    Ok(SiameseState {
        template,
        bank,
        init_box: *b,
        last_box: *b,
        frame_index: 1,
        config: cfg,
    })
}

/// NCC of `t`, resized by `scale`, against every placement inside `region`.
/// The region is sampled so that `reference` frame pixels span the unscaled
/// template.
pub fn ncc_similarity(
    t: &Template,
    f: &Frame,
    region: &BBox,
    reference: (f64, f64),
    scale: f64,
) -> Result<SimilarityMap> {
    ensure!(scale > 0.0 && scale.is_finite(), InvalidArgument, "scale must be positive");
    let sw = ((t.width() as f64 * scale).round() as usize).max(1);
    let sh = ((t.height() as f64 * scale).round() as usize).max(1);
    let scaled = t.resized(sw, sh)?;
    let (grid, smp) = sample_region(f, region, reference, (t.width(), t.height()))?;
    let values = ncc_maps(&grid, &[&scaled])?.remove(0);
    Ok(SimilarityMap {
        values,
        origin: smp.origin,
        stride: smp.stride,
        scale: sw as f64 / t.width() as f64,
    })
}

struct Scan {
    score: f64,
    bbox: BBox,
    map: SimilarityMap,
}

/// Correlates every template of a bank against one sampled region and keeps
/// the best placement. Ties go to the smallest `(row, column, template)`.
fn best_of(
    templates: &[Template],
    base: usize,
    f: &Frame,
    region: &BBox,
    reference: (f64, f64),
) -> Result<Option<Scan>> {
    let (grid, smp) = sample_region(f, region, reference, (base, base))?;
    let refs: Vec<&Template> = templates.iter().collect();
    let maps = ncc_maps(&grid, &refs)?;
    let mut best: Option<(f64, (usize, usize, usize))> = None;
    for (k, m) in maps.iter().enumerate() {
        let Some((u, v)) = m.argmax() else { continue };
        let val = m.get(u, v);
        let better = match best {
            None => true,
            Some((b, key)) => val > b || (val == b && (v, u, k) < key),
        };
        if better {
            best = Some((val, (v, u, k)));
        }
    }
    Ok(best.map(|(score, (v, u, k))| {
        let t = &templates[k];
        Scan {
            score,
            bbox: smp.placement(u, v, t),
            map: SimilarityMap {
                values: maps[k].clone(),
                origin: smp.origin,
                stride: smp.stride,
                scale: t.width() as f64 / base as f64,
            },
        }
    }))
}

/// Multi-scale search in a window of `factor` times `around` (size clamped
/// to the allowed range), centered on it.
fn scan(
    templates: &[Template],
    base: usize,
    f: &Frame,
    around: &BBox,
    factor: f64,
    limits: [(f64, f64); 2],
) -> Result<Option<Scan>> {
    let (cx, cy) = around.center();
    let rw = around.w.clamp(limits[0].0, limits[0].1);
    let rh = around.h.clamp(limits[1].0, limits[1].1);
    let largest = templates.iter().map(|t| t.width().max(t.height())).max().unwrap_or(base) as f64 / base as f64;
    let k = factor.max(largest * 1.01);
    let window = BBox::from_center(cx, cy, k * rw, k * rh);
    if !clip_box(&window, f.width(), f.height()).present {
        return Ok(None);
    }
    best_of(templates, base, f, &window, (rw, rh))
}

/// Searches a window around `last_box` at the local scales.
pub fn local_search(s: &SiameseState, f: &Frame) -> Result<Prediction> {
    if !s.last_box.present {
        return Ok(Prediction::lost(SearchKind::Local));
    }
    let best = scan(
        &s.bank.local,
        s.config.template_size,
        f,
        &s.last_box,
        s.config.search_factor,
        s.size_limits(),
    )?;
    Ok(s.finish(SearchKind::Local, best))
}

/// Intermediate products of a global search, for inspection.
#[derive(Debug, Clone)]
pub struct GlobalTrace {
    pub stage1: SimilarityMap,
    /// Stage-1 cells `(column, row)` carried into stage 2, best first.
    pub peaks: Vec<(usize, usize)>,
    /// Best `(box, score)` per peak after the scale sweep.
    pub stage2: Vec<(BBox, f64)>,
}

/// Three-stage search over the whole frame.
pub fn global_search(s: &SiameseState, f: &Frame) -> Result<Prediction> {
    global_search_traced(s, f).map(|(p, _)| p)
}

pub fn global_search_traced(s: &SiameseState, f: &Frame) -> Result<(Prediction, GlobalTrace)> {
    let cfg = &s.config;
    let (fw, fh) = (f.width(), f.height());
    ensure!(
        fw >= cfg.coarse_size && fh >= cfg.coarse_size,
        InvalidArgument,
        "{fw}x{fh} frame is smaller than the {0}x{0} coarse template",
        cfg.coarse_size
    );
    let reference = (s.init_box.w, s.init_box.h);
    let whole = BBox::new(0.0, 0.0, fw as f64, fh as f64);

    // Stage 1: coarse full-frame correlation, top-N separated maxima.
    let (grid, smp1) = sample_region(f, &whole, reference, (cfg.coarse_size, cfg.coarse_size))?;
    let map1 = ncc_maps(&grid, &[&s.bank.coarse])?.remove(0);
    let peaks = top_peaks(&map1, cfg.candidates, cfg.coarse_size / 2);

    // Stage 2: global scale sweep around each location, coarse resolution.
    let widest = cfg
        .global_scales
        .iter()
        .fold(1.0f64, |m, &g| m.max(g.clamp(cfg.scale_bounds.0, cfg.scale_bounds.1)));
    let mut stage2 = Vec::with_capacity(peaks.len());
    for &(u, v) in &peaks {
        let (cx, cy) = smp1.placement(u, v, &s.bank.coarse).center();
        let k = cfg.stage2_factor * widest;
        let region = BBox::from_center(cx, cy, k * reference.0, k * reference.1);
        if let Some(c) = best_of(&s.bank.global, cfg.coarse_size, f, &region, reference)? {
            stage2.push((c.bbox, c.score));
        }
    }

    // Stage 3: fine scales at full template resolution around each survivor.
    let limits = s.size_limits();
    let mut best: Option<Scan> = None;
    for (b, _) in &stage2 {
        if let Some(c) = scan(&s.bank.fine, cfg.template_size, f, b, cfg.refine_factor, limits)? {
            if best.as_ref().map_or(true, |x| c.score > x.score) {
                best = Some(c);
            }
        }
    }
    let trace = GlobalTrace {
        stage1: SimilarityMap {
            values: map1,
            origin: smp1.origin,
            stride: smp1.stride,
            scale: 1.0,
        },
        peaks,
        stage2,
    };
    Ok((s.finish(SearchKind::Global, best), trace))
}

/// Up to `n` local maxima, best first, greedily separated by more than
/// `radius` cells (Chebyshev). If suppression leaves fewer than `n`, the
/// strongest suppressed maxima fill the remaining slots.
fn top_peaks(map: &Grid, n: usize, radius: usize) -> Vec<(usize, usize)> {
    let (w, h) = (map.width, map.height);
    let mut maxima = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let c = map.get(u, v);
            let mut is_max = true;
            'nb: for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    let (x, y) = (u as i64 + du, v as i64 + dv);
                    if (du, dv) != (0, 0)
                        && x >= 0
                        && y >= 0
                        && (x as usize) < w
                        && (y as usize) < h
                        && map.get(x as usize, y as usize) > c
                    {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push((c, v, u));
            }
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut rest = Vec::new();
    for &(_, v, u) in &maxima {
        if picked.len() == n {
            break;
        }
        if picked.iter().all(|&(pu, pv)| pu.abs_diff(u) > radius || pv.abs_diff(v) > radius) {
            picked.push((u, v));
        } else {
            rest.push((u, v));
        }
    }
    let missing = n.saturating_sub(picked.len());
    picked.extend(rest.into_iter().take(missing));
    picked
}

/// Local search, except on frames whose index is a multiple of the global
/// interval. Advances the frame counter and moves `last_box`.
pub fn hybrid_step(s: &mut SiameseState, f: &Frame) -> Result<Prediction> {
    s.frame_index += 1;
    let global = s.config.global_interval.is_some_and(|t| s.frame_index % t == 0);
    let p = if global {
        global_search(s, f)?
    } else {
        local_search(s, f)?
    };
    if p.candidate.present {
        s.last_box = p.candidate;
    }
    Ok(p)
}

/// Blends the patch under `p` into the exemplar when `permitted`.
pub fn template_update(
    s: &mut SiameseState,
    f: &Frame,
    p: &Prediction,
    alpha: f64,
    permitted: bool,
) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&alpha),
        InvalidArgument,
        "blend weight must lie in [0, 1], got {alpha}"
    );
    if !permitted {
        return Ok(());
    }
    if !p.bbox.present {
        return Err(Error::InvalidArgument(
            "cannot update the template from a not-present prediction".into(),
        ));
    }
    let n = s.config.template_size;
    let patch = Template::from_frame(&extract_patch(f, &p.bbox, n, n)?)?;
    let blended: Vec<f64> = s
        .template
        .values()
        .iter()
        .zip(patch.values())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    let template = Template::from_values(n, n, &blended)?;
    s.bank = Bank::new(&template, &s.config)?;
    s.template = template;
    Ok(())
}
