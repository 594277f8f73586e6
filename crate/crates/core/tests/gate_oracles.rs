use std::sync::Arc;

use decaylab::decaygate::net::{encode, loss_and_gradient as raw_loss, LAYERS, PARAM_COUNT};
use decaylab::decaygate::*;
use decaylab::rng::SeededRng;
use decaylab::trackers::{Prediction, SearchKind, SimilarityMap};
use decaylab::{BBox, Grid};

fn offset_of(name: &str) -> (usize, usize) {
    let mut off = 0;
    for (n, s) in LAYERS {
        let len: usize = s.iter().product();
        if n == name {
            return (off, len);
        }
        off += len;
    }
    panic!("no block {name}");
}

fn block<'a>(p: &'a [f64], name: &str) -> &'a [f64] {
    let (o, n) = offset_of(name);
    &p[o..o + n]
}

fn random_grid(w: usize, h: usize, r: &mut SeededRng) -> Grid {
    Grid::from_vec(w, h, (0..w * h).map(|_| r.range(-1.0, 1.0)).collect())
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn zero_parameters_score_one_half() {
    let c = GateClassifier::zeros(3).unwrap();
    let mut r = SeededRng::stream(1, 0);
    let w = GateWindow::new((0..3).map(|_| Arc::new(random_grid(32, 32, &mut r))).collect(), None).unwrap();
    assert_eq!(gate_forward(&c, &w).unwrap(), 0.5);
}

#[test]
fn forward_is_deterministic_and_bounded() {
    let c = GateClassifier::random(4, 7).unwrap();
    let mut r = SeededRng::stream(2, 0);
    let maps: Vec<Arc<Grid>> = (0..4).map(|_| Arc::new(random_grid(32, 32, &mut r))).collect();
    let a = GateWindow::new(maps.clone(), None).unwrap();
    let b = GateWindow::new(maps.iter().map(|m| Arc::new((**m).clone())).collect(), None).unwrap();
    let (sa, sb) = (gate_forward(&c, &a).unwrap(), gate_forward(&c, &b).unwrap());
    assert_eq!(sa, sb);
    assert!(sa > 0.0 && sa < 1.0);
    let short = GateWindow::new(maps[..3].to_vec(), None).unwrap();
    assert!(gate_forward(&c, &short).is_err());
}

#[test]
fn encoder_matches_direct_convolution() {
    let mut r = SeededRng::stream(3, 0);
    let c = GateClassifier::random(1, 11).unwrap();
    let x = random_grid(5, 5, &mut r);
    let e = encode(&c.params, &x);
    let w1 = block(&c.params, "conv1.weight");
    let w2 = block(&c.params, "conv2.weight");
    // conv1: 8 x 3 x 3 outputs
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
        assert!((a - b).abs() < 1e-10);
    }
    // conv2 over relu(a1): 16 x 1 x 1 outputs
    for o in 0..16 {
        let mut acc = 0.0;
        for ch in 0..8 {
            for ky in 0..3 {
                for kx in 0..3 {
                    acc += w2[((o * 8 + ch) * 3 + ky) * 3 + kx] * a1[ch * 9 + ky * 3 + kx].max(0.0);
                }
            }
        }
        assert!((e.a2[o] - acc).abs() < 1e-10);
    }
}

#[test]
fn encoder_linearity_checks() {
    let c = GateClassifier::random(1, 12).unwrap();
    let zero = encode(&c.params, &Grid::zeros(32, 32));
    assert!(zero.a1.iter().chain(&zero.a2).chain(&zero.features).all(|&v| v == 0.0));
    let mut r = SeededRng::stream(4, 0);
    let x = Grid::from_vec(32, 32, (0..1024).map(|_| r.uniform()).collect());
    let x2 = Grid::from_vec(32, 32, x.values.iter().map(|v| 2.0 * v).collect());
    let (a, b) = (encode(&c.params, &x), encode(&c.params, &x2));
    for (p, q) in a.a1.iter().zip(&b.a1).chain(a.a2.iter().zip(&b.a2)) {
        assert!((2.0 * p - q).abs() < 1e-12 * (1.0 + q.abs()));
    }
    assert_eq!(a.features.len(), FEATURES);
}

#[test]
fn single_step_matches_hand_rolled_recurrence() {
    let c = GateClassifier::random(1, 13).unwrap();
    let w = GateWindow::new(vec![zero_map()], None).unwrap();
    let p = &c.params;
    let h = HIDDEN;
    // Zero input and zero state: only biases drive the first step.
    let layer = |bi: &[f64], bh: &[f64], wi: &[f64], x: &[f64]| -> Vec<f64> {
        (0..h)
            .map(|j| {
                let dot = |row: usize| -> f64 {
                    x.iter().enumerate().map(|(k, v)| wi[row * x.len() + k] * v).sum()
                };
                let r = sig(dot(j) + bi[j] + bh[j]);
                let z = sig(dot(h + j) + bi[h + j] + bh[h + j]);
                let n = (dot(2 * h + j) + bi[2 * h + j] + r * bh[2 * h + j]).tanh();
                (1.0 - z) * n
            })
            .collect()
    };
    let h1 = layer(block(p, "gru1.bias_ih"), block(p, "gru1.bias_hh"), block(p, "gru1.weight_ih"), &vec![0.0; FEATURES]);
    let h2 = layer(block(p, "gru2.bias_ih"), block(p, "gru2.bias_hh"), block(p, "gru2.weight_ih"), &h1);
    let (f1w, f1b) = (block(p, "fc1.weight"), block(p, "fc1.bias"));
    let (f2w, f2b) = (block(p, "fc2.weight"), block(p, "fc2.bias"));
    let mut logit = f2b[0];
    for j in 0..16 {
        let a: f64 = f1b[j] + (0..h).map(|k| f1w[j * h + k] * h2[k]).sum::<f64>();
        logit += f2w[j] * a.max(0.0);
    }
    assert!((gate_forward(&c, &w).unwrap() - sig(logit)).abs() < 1e-10);
}

#[test]
fn bptt_matches_finite_differences() {
    let mut r = SeededRng::stream(5, 0);
    for seed in 0..3 {
        let c = GateClassifier::random(2, 100 + seed).unwrap();
        let windows: Vec<(Vec<Arc<Grid>>, f64)> = (0..2)
            .map(|i| {
                let maps = (0..2).map(|_| Arc::new(random_grid(4, 4, &mut r).resampled(32, 32))).collect();
                (maps, (i % 2) as f64)
            })
            .collect();
        let items: Vec<(&[Arc<Grid>], f64)> = windows.iter().map(|(m, y)| (m.as_slice(), *y)).collect();
        let (_, g) = raw_loss(&c.params, &items);
        // Twenty coordinates from every parameter block.
        let mut idx = Vec::new();
        for (name, _) in LAYERS {
            let (o, n) = offset_of(name);
            for _ in 0..20.min(n) {
                idx.push(o + r.index(n));
            }
        }
        let eps = 1e-6;
        let (mut num, mut den_a, mut den_n) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let mut p = c.params.clone();
            p[i] += eps;
            let (lp, _) = raw_loss(&p, &items);
            p[i] -= 2.0 * eps;
            let (lm, _) = raw_loss(&p, &items);
            let fd = (lp - lm) / (2.0 * eps);
            num += (fd - g[i]).powi(2);
            den_a += g[i] * g[i];
            den_n += fd * fd;
        }
        let rel = num.sqrt() / den_a.sqrt().max(den_n.sqrt()).max(1e-12);
        assert!(rel < 1e-4, "seed {seed}: relative error {rel}");
        assert_eq!(g.len(), PARAM_COUNT);
    }
}

fn labeled(maps: usize, label: bool, r: &mut SeededRng) -> GateWindow {
    GateWindow::new((0..maps).map(|_| Arc::new(random_grid(32, 32, r))).collect(), Some(label)).unwrap()
}

#[test]
fn degenerate_training_steps() {
    let mut r = SeededRng::stream(6, 0);
    let batch: Vec<GateWindow> = (0..4).map(|i| labeled(2, i % 2 == 0, &mut r)).collect();
    let mut t = GateTrainer::new(GateClassifier::random(2, 14).unwrap());
    let before = t.classifier.clone();
    let loss = gate_train_step(&mut t, &batch, 0.0, 0.9).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(t.classifier, before);

    // A classifier already confident in the labels barely moves.
    let pos: Vec<GateWindow> = (0..4).map(|_| labeled(2, true, &mut r)).collect();
    let mut c = GateClassifier::zeros(2).unwrap();
    *c.params.last_mut().unwrap() = 30.0;
    let mut t = GateTrainer::new(c.clone());
    let loss = gate_train_step(&mut t, &pos, 0.01, 0.9).unwrap();
    assert!(loss < 1e-12);
    let moved = t.classifier.params.iter().zip(&c.params).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(moved < 1e-14);

    let mut bad = GateClassifier::random(2, 15).unwrap();
    *bad.params.last_mut().unwrap() = f64::NAN;
    let mut t = GateTrainer::new(bad.clone());
    assert!(matches!(
        gate_train_step(&mut t, &batch, 0.01, 0.9),
        Err(decaylab::Error::Numeric(_))
    ));
    assert_eq!(t.classifier.params.len(), bad.params.len());
    assert!(t.classifier.params.last().unwrap().is_nan());
    assert!(gate_train_step(&mut t, &[labeled(3, true, &mut r)], 0.01, 0.9).is_err());
}

#[test]
fn update_decision_is_strict() {
    assert!(should_update(0.95, 0.9));
    assert!(!should_update(0.9, 0.9));
    assert!(!should_update(0.999_999, 1.0));
}

fn pred(b: BBox, peak: f64) -> Prediction {
    Prediction {
        bbox: b,
        candidate: b,
        score: peak,
        kind: SearchKind::Local,
        map: Some(SimilarityMap {
            values: Grid::from_vec(3, 3, vec![0.0, 0.0, 0.0, 0.0, peak, 0.0, 0.0, 0.0, 0.0]),
            origin: (0.0, 0.0),
            stride: (1.0, 1.0),
            scale: 1.0,
        }),
    }
}

#[test]
fn training_windows_are_labeled_by_overlap() {
    let t = BBox::new(0.0, 0.0, 10.0, 10.0);
    let perfect = Track {
        predictions: (0..5).map(|_| pred(t, 1.0)).collect(),
        truth: vec![t; 5],
    };
    let w = build_training_set(&[perfect], 3).unwrap();
    assert_eq!(w.len(), 5);
    assert!(w.iter().all(|w| w.label == Some(true) && w.maps.len() == 3));
    assert_eq!(*w[0].maps[0], Grid::zeros(32, 32));
    assert_eq!(*w[0].maps[1], Grid::zeros(32, 32));
    assert_ne!(*w[0].maps[2], Grid::zeros(32, 32));

    let lost = Track {
        predictions: (0..6).map(|i| pred(if i < 3 { t } else { BBox::new(80.0, 80.0, 10.0, 10.0) }, 0.3)).collect(),
        truth: vec![t; 6],
    };
    let w = build_training_set(&[lost], 2).unwrap();
    assert_eq!(
        w.iter().map(|w| w.label.unwrap()).collect::<Vec<_>>(),
        [true, true, true, false, false, false]
    );

    let half = Track {
        predictions: vec![pred(BBox::new(0.0, 0.0, 10.0, 20.0), 0.5), pred(t, 1.0)],
        truth: vec![t; 2],
    };
    assert_eq!(build_training_set(&[half], 2).unwrap().len(), 1);

    let missing = Track {
        predictions: vec![pred(t, 1.0)],
        truth: vec![],
    };
    assert!(build_training_set(&[missing], 2).is_err());
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gate.json");
    let c = GateClassifier::random(8, 21).unwrap();
    c.save(&path).unwrap();
    assert_eq!(GateClassifier::load(&path).unwrap(), c);

    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replace("\"conv2.weight\",\"shape\":[16,8,3,3]", "\"conv2.weight\",\"shape\":[16,8,5,5]");
    assert_ne!(broken, text);
    std::fs::write(&path, broken).unwrap();
    assert!(matches!(GateClassifier::load(&path), Err(decaylab::Error::Data(_))));
    std::fs::write(&path, text.replace("\"version\":1", "\"version\":9")).unwrap();
    assert!(GateClassifier::load(&path).is_err());
}
