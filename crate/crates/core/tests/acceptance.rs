//! Acceptance run: one PASS/FAIL line per criterion with the measured values.
//!
//! Tolerances and corpus sizes are pinned here. The process exits non-zero
//! if any criterion outside `KNOWN_RED` fails, or if a known-red criterion
//! starts passing (so the list cannot go stale).

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use decaylab::decaygate::net::{encode, loss_and_gradient as gate_loss, LAYERS};
use decaylab::decaygate::{
    build_training_set, gate_forward, gate_train_step, GateClassifier, GateTrainer, GateWindow,
    DEFAULT_WINDOW,
};
use decaylab::dynamics::{
    decompose_step, dynamics_prediction, loss_and_gradient, run_decay_experiment, sgd_step,
    DynamicsConfig, FeatureMap, LabeledSample, LinearTrackerModel, ParamMatrix, SigmaSchedule,
    COORDS,
};
use decaylab::eval::{auc, frame_iou, pr_f, tpr, AbsenceMode, TrackResult};
use decaylab::harness::*;
use decaylab::rng::SeededRng;
use decaylab::synthvid::{generate_sequence, write_sequence, SequenceConfig};
use decaylab::trackers::{correlate_frequency, fft2, ncc_map_direct, ncc_map_fft, Complex64, Template};
use decaylab::{BBox, Grid};

/// Criteria that fail at desk scale, with the reason recorded alongside.
///
/// 7: the synthetic target never changes appearance persistently, so a
/// frozen exemplar is already the best template; gated updates fire only on
/// accurate frames but still add sub-pixel and scale error, and on this
/// corpus their net effect on AUC is noise-level and slightly negative.
const KNOWN_RED: &[u32] = &[7];

struct Report {
    lines: Vec<(u32, bool, String)>,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, text: String) {
        eprintln!("  C{id} done");
        self.lines.push((id, pass, text));
    }
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut r = Report { lines: Vec::new() };
    println!("acceptance: 12 criteria");
    decomposition(&mut r);
    prediction_change(&mut r);
    noiseless(&mut r);
    noise_trend(&mut r);
    let gate = gate_separability(work.path());
    long_decay(&mut r, work.path(), &gate);
    search(&mut r, work.path());
    recovery(&mut r);
    oracles(&mut r);
    gradients(&mut r);
    r.line(11, gate.pass, gate.text.clone());
    determinism(&mut r, work.path(), &gate.path);

    r.lines.sort_by_key(|l| l.0);
    for (id, pass, text) in &r.lines {
        println!("{} C{id:<2} {text}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed: BTreeSet<u32> = r.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    let known: BTreeSet<u32> = KNOWN_RED.iter().copied().collect();
    println!(
        "acceptance: {} pass, {} fail (known red: {:?})",
        r.lines.len() - failed.len(),
        failed.len(),
        KNOWN_RED
    );
    if failed != known {
        eprintln!("acceptance: failures {failed:?} differ from the known-red list {known:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- dynamics

fn dyn_instance(seed: u64) -> (LinearTrackerModel, Vec<LabeledSample>, f64) {
    let mut r = SeededRng::stream(seed, 9001);
    let dim = 1 + r.index(16);
    let n = 1 + r.index(48);
    let phi = ParamMatrix::from_values(dim, (0..dim * COORDS).map(|_| r.range(-2.0, 2.0)).collect()).unwrap();
    let data = (0..n)
        .map(|_| {
            let g = (0..dim).map(|_| r.range(-1.0, 1.0)).collect();
            let truth = [r.range(0.0, 200.0), r.range(0.0, 200.0), r.range(4.0, 60.0), r.range(4.0, 60.0)];
            let s = r.range(0.0, 4.0);
            LabeledSample::with_truth(g, truth, [s * r.normal(), s * r.normal(), s * r.normal(), s * r.normal()])
        })
        .collect();
    let eta = r.range(1e-4, 0.1);
    (LinearTrackerModel { phi, feature_map: FeatureMap { patch: 0 } }, data, eta)
}

/// Plain `-eta * dL/dphi` written out from the loss definition.
fn oracle_step(m: &LinearTrackerModel, data: &[LabeledSample], eta: f64) -> Vec<f64> {
    let d = m.phi.dim();
    let mut step = vec![0.0; d * COORDS];
    for s in data {
        for c in 0..COORDS {
            let f: f64 = (0..d).map(|k| m.phi.get(k, c) * s.features[k]).sum();
            let r = f - s.label[c];
            for k in 0..d {
                step[k * COORDS + c] -= eta * 2.0 * r * s.features[k] / data.len() as f64;
            }
        }
    }
    step
}

fn decomposition(rep: &mut Report) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        let (m, data, eta) = dyn_instance(seed);
        let dec = decompose_step(&m, &data, eta).unwrap();
        let split = dec.perfect_term.plus(&dec.bias_term);
        for (a, b) in oracle_step(&m, &data, eta).iter().zip(split.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    rep.line(
        1,
        worst < 1e-12 && secs < 5.0,
        format!("step = perfect + bias: max abs error {worst:.2e} over 1000 instances (< 1e-12), {secs:.2} s (< 5 s)"),
    );
}

fn prediction_change(rep: &mut Report) {
    let mut worst: f64 = 0.0;
    for seed in 1000..2000 {
        let (m, data, eta) = dyn_instance(seed);
        let dec = decompose_step(&m, &data, eta).unwrap();
        let (_, g) = loss_and_gradient(&m, &data).unwrap();
        let next = sgd_step(&m, &g, eta).unwrap();
        let probe = &data[seed as usize % data.len()];
        let ch = dynamics_prediction(&m, &dec, probe).unwrap();
        let (before, after) = (m.predict(&probe.features).unwrap(), next.predict(&probe.features).unwrap());
        for c in 0..COORDS {
            worst = worst.max((ch.predicted_change[c] - (after[c] - before[c])).abs());
        }
    }
    rep.line(
        2,
        worst < 1e-12,
        format!("predicted vs re-evaluated prediction change: max abs error {worst:.2e} over 1000 instances (< 1e-12)"),
    );
}

fn noiseless(rep: &mut Report) {
    let seq = generate_sequence(&SequenceConfig::new(500, 31)).unwrap();
    let trace = run_decay_experiment(&seq, &SigmaSchedule::Constant(0.0), &DynamicsConfig::default(), 5).unwrap();
    let max = trace.rows.iter().map(|r| r.cum_bias.abs()).fold(0.0, f64::max);
    rep.line(
        3,
        max == 0.0 && trace.rows.len() == 500,
        format!("sigma = 0: max |cumulative bias| = {max:e} over {} frames (exactly 0)", trace.rows.len()),
    );
}

/// One-sided sign-test p-value for `k` successes out of `n`.
fn sign_test(k: usize, n: usize) -> f64 {
    let mut c = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=n {
        if i > 0 {
            c = c * (n - i + 1) as f64 / i as f64;
        }
        if i >= k {
            tail += c;
        }
    }
    tail / 2f64.powi(n as i32)
}

fn noise_trend(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let rows = run_dynamics(&DynamicsRun {
        sigmas: vec![0.5, 2.0],
        runs: 30,
        seed: 4,
        output: dir.path().to_path_buf(),
        ..Default::default()
    })
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let at = |s: f64| -> Vec<f64> { rows.iter().filter(|r| r.sigma == s).map(|r| r.terminal_cum_bias).collect() };
    let (lo, hi) = (at(0.5), at(2.0));
    let ordered = lo.iter().zip(&hi).filter(|(a, b)| b > a).count();
    let p = sign_test(ordered, lo.len());
    let (ml, mh) = (lo.iter().sum::<f64>() / 30.0, hi.iter().sum::<f64>() / 30.0);
    rep.line(
        4,
        mh > ml && (ordered == 30 || p < 0.01) && secs < 60.0,
        format!(
            "terminal cumulative bias, 30 paired seeds: mean {mh:.4} at sigma 2 vs {ml:.4} at sigma 0.5, {ordered}/30 ordered (sign test p = {p:.1e}), {secs:.1} s (< 60 s)"
        ),
    );
}

// --------------------------------------------------------------- trackers

fn long_decay(rep: &mut Report, work: &Path, gate: &GateOutcome) {
    let corpus = CorpusSpec::Preset {
        preset: Preset::LongOccOv,
        count: 6,
        repetitions: 5,
    };
    let t = Instant::now();
    let main = run_benchmark(&BenchmarkConfig {
        corpus: corpus.clone(),
        trackers: vec![TrackerKind::SiameseNoUpdate, TrackerKind::HybridBlindUpdate, TrackerKind::Mosse],
        output: work.join("long-a"),
        ..Default::default()
    })
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let drop = |k| {
        let v = main.mean_repetition_auc(k);
        (v[0], v[4], v[0] - v[4])
    };
    let (m1, m5, md) = drop(TrackerKind::Mosse);
    let (b1, b5, bd) = drop(TrackerKind::HybridBlindUpdate);
    let (n1, n5, nd) = drop(TrackerKind::SiameseNoUpdate);
    rep.line(
        5,
        md >= 0.05 && bd >= 0.05 && nd.abs() <= 0.02 && secs < 600.0,
        format!(
            "Long corpus (6 videos, R = 5), AUC rep 1 -> rep 5: mosse {m1:.3} -> {m5:.3} (drop {md:.3} >= 0.05), \
             blind {b1:.3} -> {b5:.3} (drop {bd:.3} >= 0.05), no-update {n1:.3} -> {n5:.3} (|change| {:.3} <= 0.02), {secs:.0} s (< 600 s)",
            nd.abs()
        ),
    );

    let extra = run_benchmark(&BenchmarkConfig {
        corpus,
        trackers: vec![TrackerKind::HybridSimThresholdUpdate, TrackerKind::HybridGated],
        gate_checkpoint: Some(gate.path.clone()),
        output: work.join("long-b"),
        ..Default::default()
    })
    .unwrap();
    let blind = main.mean_auc(TrackerKind::HybridBlindUpdate).unwrap();
    let none = main.mean_auc(TrackerKind::SiameseNoUpdate).unwrap();
    let sim = extra.mean_auc(TrackerKind::HybridSimThresholdUpdate).unwrap();
    let gated = extra.mean_auc(TrackerKind::HybridGated).unwrap();
    let updates: usize = extra.runs.iter().filter(|r| r.tracker == TrackerKind::HybridGated).map(|r| r.updates).sum();
    rep.line(
        7,
        blind < none && none <= gated && gated >= sim,
        format!(
            "Long corpus AUC: blind {blind:.4} < no-update {none:.4} [{}], no-update <= gated {gated:.4} [{}], \
             gated >= sim-threshold {sim:.4} [{}]; gate fired {updates} times",
            ok(blind < none),
            ok(none <= gated),
            ok(gated >= sim)
        ),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn search(rep: &mut Report, work: &Path) {
    let s = run_benchmark(&BenchmarkConfig {
        corpus: CorpusSpec::Preset {
            preset: Preset::OvFm,
            count: 6,
            repetitions: 1,
        },
        trackers: vec![TrackerKind::SiameseLocalOnly, TrackerKind::SiameseGlobalOnly],
        output: work.join("search"),
        ..Default::default()
    })
    .unwrap();
    let (l, g) = (
        s.mean_auc(TrackerKind::SiameseLocalOnly).unwrap(),
        s.mean_auc(TrackerKind::SiameseGlobalOnly).unwrap(),
    );
    rep.line(
        6,
        g - l >= 0.05,
        format!("OV/FM corpus (6 videos): global AUC {g:.4} vs local {l:.4}, margin {:.4} (>= 0.05)", g - l),
    );
}

fn recovery(rep: &mut Report) {
    let settings = TrackerSettings::default();
    let (mut hybrid, mut local) = (0, 0);
    for i in 0..50 {
        let seq = generate_sequence(&Preset::Reentry.sequence(i, 0)).unwrap();
        let back = reentry_frame(&seq.truth).expect("the target re-enters");
        let end = (back + 15).min(seq.len());
        let reacquired = |k| {
            let out = run_tracker(k, &settings, None, &seq).unwrap();
            (back..end).any(|t| frame_iou(&out.predictions[t].bbox, &seq.truth[t]) > 0.5)
        };
        hybrid += reacquired(TrackerKind::SiameseNoUpdate) as usize;
        local += reacquired(TrackerKind::SiameseLocalOnly) as usize;
    }
    rep.line(
        8,
        hybrid >= 45 && local < 10,
        format!("re-acquired within 15 frames of re-entry: hybrid T = 15 {hybrid}/50 (>= 90%), local-only {local}/50 (< 20%)"),
    );
}

// ---------------------------------------------------------------- oracles

fn ncc_oracle(region: &Grid, tw: usize, th: usize, t: &[f64]) -> Grid {
    let tm = t.iter().sum::<f64>() / t.len() as f64;
    let tn: f64 = t.iter().map(|v| (v - tm).powi(2)).sum::<f64>().sqrt();
    grid(region.width - tw + 1, region.height - th + 1, |x, y| {
        let mut w = Vec::with_capacity(tw * th);
        for v in 0..th {
            for u in 0..tw {
                w.push(region.get(x + u, y + v));
            }
        }
        let wm = w.iter().sum::<f64>() / w.len() as f64;
        let wn: f64 = w.iter().map(|v| (v - wm).powi(2)).sum::<f64>().sqrt();
        if wn * wn <= 1e-10 * w.len() as f64 {
            return 0.0;
        }
        let dot: f64 = w.iter().zip(t).map(|(a, b)| (a - wm) * (b - tm)).sum();
        dot / (wn * tn)
    })
}

fn oracles(rep: &mut Report) {
    let mut r = SeededRng::stream(77, 0);

    // NCC, both evaluation paths.
    let mut ncc: f64 = 0.0;
    for _ in 0..20 {
        let (w, h) = (8 + r.index(10), 8 + r.index(10));
        let (tw, th) = (2 + r.index(4), 2 + r.index(4));
        let region = grid(w, h, |_, _| r.uniform());
        let raw: Vec<f64> = (0..tw * th).map(|_| r.uniform()).collect();
        let t = Template::from_values(tw, th, &raw).unwrap();
        let want = ncc_oracle(&region, tw, th, &raw);
        for got in [ncc_map_direct(&region, &t).unwrap(), ncc_map_fft(&region, &t).unwrap()] {
            for (a, b) in got.values.iter().zip(&want.values) {
                ncc = ncc.max((a - b).abs());
            }
        }
    }

    // MOSSE detection against spatial circular correlation.
    let mut mosse: f64 = 0.0;
    for _ in 0..5 {
        let (w, h) = (8, 8);
        let patch = grid(w, h, |_, _| r.uniform());
        let spatial: Vec<f64> = (0..w * h).map(|_| r.normal()).collect();
        let mut spec: Vec<Complex64> = spatial.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut spec, w, h, false);
        let filter: Vec<Complex64> = spec.iter().map(|c| c.conj()).collect();
        let resp = correlate_frequency(&filter, &patch).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for v in 0..h {
                    for u in 0..w {
                        acc += spatial[v * w + u] * patch.get((u + x) % w, (v + y) % h);
                    }
                }
                mosse = mosse.max((resp.get(x, y) - acc).abs());
            }
        }
    }

    // Encoder against direct convolution on 5x5 maps.
    let mut conv: f64 = 0.0;
    for k in 0..5 {
        let c = GateClassifier::random(1, 40 + k).unwrap();
        let x = grid(5, 5, |_, _| r.range(-1.0, 1.0));
        let e = encode(&c.params, &x);
        let (w1, w2) = (block(&c.params, "conv1.weight"), block(&c.params, "conv2.weight"));
        let mut a1 = vec![0.0; 8 * 9];
        for o in 0..8 {
            for y in 0..3 {
                for xx in 0..3 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            acc += w1[o * 9 + ky * 3 + kx] * x.get(xx + kx, y + ky);
                        }
                    }
                    a1[o * 9 + y * 3 + xx] = acc;
                }
            }
        }
        for (a, b) in e.a1.iter().zip(&a1) {
            conv = conv.max((a - b).abs());
        }
        for o in 0..16 {
            let mut acc = 0.0;
            for ch in 0..8 {
                for k in 0..9 {
                    acc += w2[(o * 8 + ch) * 9 + k] * a1[ch * 9 + k].max(0.0);
                }
            }
            conv = conv.max((e.a2[o] - acc).abs());
        }
    }

    // Metrics against pixel counting on integer boxes.
    let mut metrics_exact = true;
    for seed in 0..50 {
        let mut g = SeededRng::stream(seed, 5);
        let bx = |g: &mut SeededRng| {
            BBox::new(g.index(20) as f64, g.index(20) as f64, 1.0 + g.index(10) as f64, 1.0 + g.index(10) as f64)
        };
        let truth: Vec<BBox> = (0..50).map(|_| if g.uniform() < 0.8 { bx(&mut g) } else { BBox::absent() }).collect();
        let pred: Vec<BBox> = truth
            .iter()
            .map(|t| match g.index(4) {
                0 => BBox::absent(),
                1 if t.present => BBox::new(t.x + g.index(3) as f64, t.y, t.w, t.h),
                _ => bx(&mut g),
            })
            .collect();
        let v: Vec<f64> = pred.iter().zip(&truth).map(|(p, t)| pixel_overlap(p, t)).collect();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let mut s = 0.0;
        for &tau in &grid {
            s += v.iter().filter(|&&x| x > tau || x == 1.0).count() as f64 / 50.0;
        }
        let hit = |i: usize| pred[i].present && truth[i].present && v[i] > 0.5;
        let shown = (0..50).filter(|&i| truth[i].present).count() as f64;
        let tp = (0..50).filter(|&i| hit(i)).count() as f64;
        let np = (0..50).filter(|&i| pred[i].present).count() as f64;
        let (p, rc) = (if np > 0.0 { tp / np } else { 0.0 }, tp / shown);
        let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        let res = TrackResult::new(pred.clone(), truth.clone()).unwrap();
        metrics_exact &= auc(&res, AbsenceMode::Credit).unwrap() == s / 21.0
            && tpr(&res, 0.5).unwrap() == tp / shown
            && pr_f(&res, 0.5).unwrap() == (p, rc, f)
            && (0..50).all(|i| frame_iou(&pred[i], &truth[i]) == v[i]);
    }

    rep.line(
        9,
        ncc < 1e-8 && mosse < 1e-8 && conv < 1e-10 && metrics_exact,
        format!(
            "oracles: NCC {ncc:.1e} (< 1e-8), MOSSE detection {mosse:.1e} (< 1e-8), encoder {conv:.1e} (< 1e-10), \
             metrics on 50 random 50-frame instances {}",
            if metrics_exact { "exact" } else { "MISMATCH" }
        ),
    );
}

fn pixel_overlap(p: &BBox, t: &BBox) -> f64 {
    let cells = |b: &BBox| -> BTreeSet<(i64, i64)> {
        (b.x as i64..(b.x + b.w) as i64)
            .flat_map(|i| (b.y as i64..(b.y + b.h) as i64).map(move |j| (i, j)))
            .collect()
    };
    match (p.present, t.present) {
        (true, true) => {
            let (a, b) = (cells(p), cells(t));
            a.intersection(&b).count() as f64 / a.union(&b).count() as f64
        }
        (false, false) => 1.0,
        _ => 0.0,
    }
}

fn block<'a>(p: &'a [f64], name: &str) -> &'a [f64] {
    let mut off = 0;
    for (n, s) in LAYERS {
        let len: usize = s.iter().product();
        if n == name {
            return &p[off..off + len];
        }
        off += len;
    }
    panic!("no parameter block {name}")
}

fn gradients(rep: &mut Report) {
    // Dynamics: full finite-difference gradient.
    let mut dyn_rel: f64 = 0.0;
    for seed in 0..20 {
        let (m, data, _) = dyn_instance(5000 + seed);
        let (_, g) = loss_and_gradient(&m, &data).unwrap();
        let loss = |m: &LinearTrackerModel| loss_and_gradient(m, &data).unwrap().0;
        let mut fd = ParamMatrix::zeros(m.phi.dim());
        for k in 0..m.phi.dim() {
            for c in 0..COORDS {
                let h = 1e-5;
                let (mut a, mut b) = (m.clone(), m.clone());
                a.phi.set(k, c, m.phi.get(k, c) + h);
                b.phi.set(k, c, m.phi.get(k, c) - h);
                fd.set(k, c, (loss(&a) - loss(&b)) / (2.0 * h));
            }
        }
        dyn_rel = dyn_rel.max(g.minus(&fd).frobenius() / g.frobenius().max(fd.frobenius()));
    }

    // Gate: BPTT on K = 2 windows of 4x4 maps, 20 coordinates per block.
    let mut r = SeededRng::stream(6, 0);
    let mut gate_rel: f64 = 0.0;
    for seed in 0..3 {
        let c = GateClassifier::random(2, 300 + seed).unwrap();
        let windows: Vec<(Vec<Arc<Grid>>, f64)> = (0..2)
            .map(|i| {
                let maps = (0..2)
                    .map(|_| Arc::new(grid(4, 4, |_, _| r.range(-1.0, 1.0)).resampled(32, 32)))
                    .collect();
                (maps, (i % 2) as f64)
            })
            .collect();
        let items: Vec<(&[Arc<Grid>], f64)> = windows.iter().map(|(m, y)| (m.as_slice(), *y)).collect();
        let (_, g) = gate_loss(&c.params, &items);
        let (mut num, mut da, mut dn) = (0.0, 0.0, 0.0);
        let mut off = 0;
        for (_, shape) in LAYERS {
            let n: usize = shape.iter().product();
            for _ in 0..20.min(n) {
                let i = off + r.index(n);
                let mut p = c.params.clone();
                p[i] += 1e-6;
                let lp = gate_loss(&p, &items).0;
                p[i] -= 2e-6;
                let lm = gate_loss(&p, &items).0;
                let fd = (lp - lm) / 2e-6;
                num += (fd - g[i]).powi(2);
                da += g[i] * g[i];
                dn += fd * fd;
            }
            off += n;
        }
        gate_rel = gate_rel.max(num.sqrt() / da.sqrt().max(dn.sqrt()));
    }
    rep.line(
        10,
        dyn_rel < 1e-6 && gate_rel < 1e-4,
        format!("finite differences: dynamics rel. error {dyn_rel:.1e} (< 1e-6), gate BPTT rel. error {gate_rel:.1e} (< 1e-4)"),
    );
}

// ------------------------------------------------------------------- gate

struct GateOutcome {
    path: std::path::PathBuf,
    pass: bool,
    text: String,
}

fn toy_window(positive: bool, r: &mut SeededRng) -> GateWindow {
    let maps = (0..DEFAULT_WINDOW)
        .map(|_| {
            let (cx, cy) = (r.range(4.0, 28.0), r.range(4.0, 28.0));
            let noise: Vec<f64> = (0..32 * 32).map(|_| 0.05 * r.uniform()).collect();
            Arc::new(grid(32, 32, |x, y| {
                let base = if positive {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    (-d2 / 8.0).exp()
                } else {
                    0.3
                };
                base + noise[y * 32 + x]
            }))
        })
        .collect();
    GateWindow::new(maps, Some(positive)).unwrap()
}

fn bce(c: &GateClassifier, set: &[GateWindow]) -> f64 {
    set.iter()
        .map(|w| {
            let s = gate_forward(c, w).unwrap();
            if w.label == Some(true) {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum::<f64>()
        / set.len() as f64
}

fn gate_separability(work: &Path) -> GateOutcome {
    // Toy set: peaked maps versus flat maps.
    let mut r = SeededRng::stream(12, 0);
    let toy: Vec<GateWindow> = (0..64).map(|i| toy_window(i % 2 == 0, &mut r)).collect();
    let mut trainer = GateTrainer::new(GateClassifier::random(DEFAULT_WINDOW, 12).unwrap());
    let mut steps = 0;
    let mut loss = bce(&trainer.classifier, &toy);
    while steps < 500 && loss >= 0.1 {
        let batch: Vec<GateWindow> = (0..16).map(|_| toy[r.index(toy.len())].clone()).collect();
        gate_train_step(&mut trainer, &batch, 0.01, 0.9).unwrap();
        steps += 1;
        if steps % 10 == 0 {
            loss = bce(&trainer.classifier, &toy);
        }
    }

    // Real tracks: train on one held-out synthetic set, score another.
    let path = work.join("gate.json");
    let run = GateTrainingRun {
        output: path.clone(),
        ..Default::default()
    };
    let trained = run_gate_training(&run).unwrap();
    let held = CorpusSpec::Preset {
        preset: Preset::GateTrain,
        count: 4,
        repetitions: 1,
    }
    .materialize(run.seed + 1000)
    .unwrap();
    let tracks = collect_gate_tracks(&held, &run.settings).unwrap();
    let windows = build_training_set(&tracks, run.train.window).unwrap();
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for w in &windows {
        let s = gate_forward(&trained.classifier, w).unwrap();
        if w.label == Some(true) {
            sp += s;
            np += 1;
        } else {
            sn += s;
            nn += 1;
        }
    }
    let (ms, mf) = (sp / np as f64, sn / nn as f64);
    GateOutcome {
        path,
        pass: loss < 0.1 && steps <= 500 && nn > 0 && ms - mf >= 0.2,
        text: format!(
            "gate: toy-set BCE {loss:.4} after {steps} steps (< 0.1 within 500); held-out mean score \
             success {ms:.3} ({np} windows) vs failure {mf:.3} ({nn} windows), gap {:.3} (>= 0.2)",
            ms - mf
        ),
    }
}

// ------------------------------------------------------------ determinism

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(rep: &mut Report, work: &Path, gate: &Path) {
    let mut same = Vec::new();
    for tag in ["a", "b"] {
        let root = work.join(format!("det-{tag}"));
        run_benchmark(&BenchmarkConfig {
            corpus: CorpusSpec::Preset {
                preset: Preset::Challenges,
                count: 3,
                repetitions: 2,
            },
            trackers: TrackerKind::ALL.to_vec(),
            gate_checkpoint: Some(gate.to_path_buf()),
            output: root.join("bench"),
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        run_dynamics(&DynamicsRun {
            runs: 3,
            output: root.join("dynamics"),
            ..Default::default()
        })
        .unwrap();
        let mut g = GateTrainingRun {
            output: root.join("gate.json"),
            ..Default::default()
        };
        g.train.steps = 20;
        if let CorpusSpec::Preset { count, .. } = &mut g.corpus {
            *count = 2;
        }
        run_gate_training(&g).unwrap();
        let seq = generate_sequence(&Preset::LongOccOv.sequence(0, 3)).unwrap();
        write_sequence(&seq, &root.join("sequence")).unwrap();
        same.push(tree(&root));
    }
    let files = same[0].len();
    rep.line(
        12,
        same[0] == same[1] && files > 0,
        format!(
            "two runs with equal seeds (benchmark with all 7 trackers, dynamics sweep, gate training, sequence generation): \
             {files} files, {}",
            if same[0] == same[1] { "byte-identical" } else { "DIFFERENT" }
        ),
    );
}

fn grid(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> f64) -> Grid {
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            values.push(f(x, y));
        }
    }
    Grid::from_vec(w, h, values)
}
