//! Forward and backward passes of the gate network on a flat parameter vector.
//!
//! Encoder (per map, bias-free, stride 1, valid padding):
//!   `a1 = conv3x3(x; W1)` (8 channels), `r1 = relu(a1)`,
//!   `a2 = conv3x3(r1; W2)` (16 channels), `r2 = relu(a2)`,
//!   `f = maxpool5x5/5(r2)`, flattened channel-major (16 x 5 x 5 = 400).
//!
//! Recurrent unit, two stacked layers, `h_0 = 0`, gate rows ordered `r, z, n`:
//!   `r = s(W_ir x + b_ir + W_hr h + b_hr)`
//!   `z = s(W_iz x + b_iz + W_hz h + b_hz)`
//!   `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))`
//!   `h' = (1 - z) * n + z * h`
//!
//! Head on the last top-layer state: `o = relu(F1 h + c1)`,
//! `logit = F2 o + c2`, `score = s(logit)`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::geom::Grid;

pub const MAP_SIZE: usize = 32;
pub const HIDDEN: usize = 32;
const C1: usize = 8;
const C2: usize = 16;
const POOL: usize = 5;
const HEAD: usize = 16;
pub const FEATURES: usize = C2 * ((MAP_SIZE - 4) / POOL) * ((MAP_SIZE - 4) / POOL);

/// Parameter blocks in storage order.
pub const LAYERS: [(&str, &[usize]); 14] = [
    ("conv1.weight", &[C1, 1, 3, 3]),
    ("conv2.weight", &[C2, C1, 3, 3]),
    ("gru1.weight_ih", &[3 * HIDDEN, FEATURES]),
    ("gru1.weight_hh", &[3 * HIDDEN, HIDDEN]),
    ("gru1.bias_ih", &[3 * HIDDEN]),
    ("gru1.bias_hh", &[3 * HIDDEN]),
    ("gru2.weight_ih", &[3 * HIDDEN, HIDDEN]),
    ("gru2.weight_hh", &[3 * HIDDEN, HIDDEN]),
    ("gru2.bias_ih", &[3 * HIDDEN]),
    ("gru2.bias_hh", &[3 * HIDDEN]),
    ("fc1.weight", &[HEAD, HIDDEN]),
    ("fc1.bias", &[HEAD]),
    ("fc2.weight", &[1, HEAD]),
    ("fc2.bias", &[1]),
];

const fn offsets() -> [usize; 15] {
    let mut out = [0; 15];
    let mut i = 0;
    while i < 14 {
        let shape = LAYERS[i].1;
        let mut n = 1;
        let mut j = 0;
        while j < shape.len() {
            n *= shape[j];
            j += 1;
        }
        out[i + 1] = out[i] + n;
        i += 1;
    }
    out
}

const OFF: [usize; 15] = offsets();
pub const PARAM_COUNT: usize = OFF[14];

const CONV1: usize = 0;
const CONV2: usize = 1;
const GRU1: usize = 2;
const GRU2: usize = 6;
const FC1_W: usize = 10;
const FC1_B: usize = 11;
const FC2_W: usize = 12;
const FC2_B: usize = 13;

fn block(p: &[f64], i: usize) -> &[f64] {
    &p[OFF[i]..OFF[i + 1]]
}

fn block_mut(p: &mut [f64], i: usize) -> &mut [f64] {
    &mut p[OFF[i]..OFF[i + 1]]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Valid 3x3 convolution (cross-correlation), no bias.
pub fn conv3x3(input: &[f64], cin: usize, w: usize, h: usize, weights: &[f64], cout: usize) -> Vec<f64> {
    let (ow, oh) = (w - 2, h - 2);
    let mut out = vec![0.0; cout * ow * oh];
    for o in 0..cout {
        let dst = &mut out[o * ow * oh..(o + 1) * ow * oh];
        for c in 0..cin {
            let src = &input[c * w * h..(c + 1) * w * h];
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = weights[((o * cin + c) * 3 + ky) * 3 + kx];
                    if k == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let srow = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Encoder activations kept for the backward pass.
pub struct Encoded {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub features: Vec<f64>,
    pool_idx: Vec<usize>,
    w: usize,
    h: usize,
}

pub fn encode(p: &[f64], x: &Grid) -> Encoded {
    let (w, h) = (x.width, x.height);
    let a1 = conv3x3(&x.values, 1, w, h, block(p, CONV1), C1);
    let r1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let (w1, h1) = (w - 2, h - 2);
    let a2 = conv3x3(&r1, C1, w1, h1, block(p, CONV2), C2);
    let (w2, h2) = (w1 - 2, h1 - 2);
    let (pw, ph) = (w2 / POOL, h2 / POOL);
    let mut features = Vec::with_capacity(C2 * pw * ph);
    let mut pool_idx = Vec::with_capacity(C2 * pw * ph);
    for o in 0..C2 {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = (f64::NEG_INFINITY, 0);
                for y in py * POOL..(py + 1) * POOL {
                    for x in px * POOL..(px + 1) * POOL {
                        let i = (o * h2 + y) * w2 + x;
                        let v = a2[i].max(0.0);
                        if v > best.0 {
                            best = (v, i);
                        }
                    }
                }
                features.push(best.0);
                pool_idx.push(best.1);
            }
        }
    }
    Encoded {
        a1,
        a2,
        features,
        pool_idx,
        w,
        h,
    }
}

/// Accumulates encoder weight gradients given `d loss / d features`.
fn encode_backward(p: &[f64], x: &Grid, e: &Encoded, dfeat: &[f64], g: &mut [f64]) {
    let (w1, h1) = (e.w - 2, e.h - 2);
    let (w2, h2) = (w1 - 2, h1 - 2);
    let w2s = block(p, CONV2);
    let mut dr1 = vec![0.0; C1 * w1 * h1];
    {
        let gw2 = block_mut(g, CONV2);
        for (i, &d) in dfeat.iter().enumerate() {
            let pos = e.pool_idx[i];
            if d == 0.0 || e.a2[pos] <= 0.0 {
                continue;
            }
            let o = pos / (w2 * h2);
            let y = (pos / w2) % h2;
            let xx = pos % w2;
            for c in 0..C1 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wi = ((o * C1 + c) * 3 + ky) * 3 + kx;
                        let ri = (c * h1 + y + ky) * w1 + xx + kx;
                        gw2[wi] += d * e.a1[ri].max(0.0);
                        dr1[ri] += d * w2s[wi];
                    }
                }
            }
        }
    }
    let gw1 = block_mut(g, CONV1);
    for (ri, &d) in dr1.iter().enumerate() {
        if d == 0.0 || e.a1[ri] <= 0.0 {
            continue;
        }
        let c = ri / (w1 * h1);
        let y = (ri / w1) % h1;
        let xx = ri % w1;
        for ky in 0..3 {
            for kx in 0..3 {
                gw1[(c * 3 + ky) * 3 + kx] += d * x.values[(y + ky) * e.w + xx + kx];
            }
        }
    }
}

struct GruStep {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
}

fn matvec_add(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Runs one recurrent layer; returns states `h_1..h_K` and caches.
fn gru_forward(p: &[f64], base: usize, xs: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<GruStep>) {
    let (wi, wh, bi, bh) = (block(p, base), block(p, base + 1), block(p, base + 2), block(p, base + 3));
    let mut h = vec![0.0; HIDDEN];
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    let mut gi = vec![0.0; 3 * HIDDEN];
    let mut gh = vec![0.0; 3 * HIDDEN];
    for x in xs {
        matvec_add(wi, x, bi, &mut gi);
        matvec_add(wh, &h, bh, &mut gh);
        let mut st = GruStep {
            r: vec![0.0; HIDDEN],
            z: vec![0.0; HIDDEN],
            n: vec![0.0; HIDDEN],
            hn: gh[2 * HIDDEN..].to_vec(),
        };
        let mut next = vec![0.0; HIDDEN];
        for j in 0..HIDDEN {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[HIDDEN + j] + gh[HIDDEN + j]);
            let n = (gi[2 * HIDDEN + j] + r * gh[2 * HIDDEN + j]).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
            st.r[j] = r;
            st.z[j] = z;
            st.n[j] = n;
        }
        h = next;
        hs.push(h.clone());
        steps.push(st);
    }
    (hs, steps)
}

/// Backpropagation through time for one layer. `dhs[t]` is the gradient
/// flowing into `h_t` from above; returns gradients w.r.t. the inputs.
fn gru_backward(
    p: &[f64],
    base: usize,
    xs: &[&[f64]],
    hs: &[Vec<f64>],
    steps: &[GruStep],
    dhs: &[Vec<f64>],
    g: &mut [f64],
) -> Vec<Vec<f64>> {
    let (wi, wh) = (block(p, base), block(p, base + 1));
    let in_dim = xs.first().map_or(0, |x| x.len());
    let zero = vec![0.0; HIDDEN];
    let mut dxs = vec![vec![0.0; in_dim]; xs.len()];
    let mut carry = vec![0.0; HIDDEN];
    let mut gwi = vec![0.0; 3 * HIDDEN * in_dim];
    let mut gwh = vec![0.0; 3 * HIDDEN * HIDDEN];
    let mut gbi = vec![0.0; 3 * HIDDEN];
    let mut gbh = vec![0.0; 3 * HIDDEN];
    for t in (0..xs.len()).rev() {
        let st = &steps[t];
        let h_prev = if t == 0 { &zero } else { &hs[t - 1] };
        let mut dai = vec![0.0; 3 * HIDDEN];
        let mut dah = vec![0.0; 3 * HIDDEN];
        let mut dh_prev = vec![0.0; HIDDEN];
        for j in 0..HIDDEN {
            let dh = dhs[t][j] + carry[j];
            let (r, z, n) = (st.r[j], st.z[j], st.n[j]);
            let dn = dh * (1.0 - z);
            let dz = dh * (h_prev[j] - n);
            dh_prev[j] = dh * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * st.hn[j];
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            dai[j] = dar;
            dai[HIDDEN + j] = daz;
            dai[2 * HIDDEN + j] = dan;
            dah[j] = dar;
            dah[HIDDEN + j] = daz;
            dah[2 * HIDDEN + j] = dan * r;
        }
        let x = xs[t];
        for i in 0..3 * HIDDEN {
            let (a, b) = (dai[i], dah[i]);
            gbi[i] += a;
            gbh[i] += b;
            if a != 0.0 {
                let row = &wi[i * in_dim..(i + 1) * in_dim];
                let grow = &mut gwi[i * in_dim..(i + 1) * in_dim];
                for k in 0..in_dim {
                    grow[k] += a * x[k];
                    dxs[t][k] += a * row[k];
                }
            }
            if b != 0.0 {
                let row = &wh[i * HIDDEN..(i + 1) * HIDDEN];
                let grow = &mut gwh[i * HIDDEN..(i + 1) * HIDDEN];
                for k in 0..HIDDEN {
                    grow[k] += b * h_prev[k];
                    dh_prev[k] += b * row[k];
                }
            }
        }
        carry = dh_prev;
    }
    for (blk, src) in [(base, gwi), (base + 1, gwh), (base + 2, gbi), (base + 3, gbh)] {
        for (d, s) in block_mut(g, blk).iter_mut().zip(src) {
            *d += s;
        }
    }
    dxs
}

/// Head forward: returns `(hidden pre-activation, logit)`.
fn head(p: &[f64], h: &[f64]) -> (Vec<f64>, f64) {
    let mut pre = vec![0.0; HEAD];
    matvec_add(block(p, FC1_W), h, block(p, FC1_B), &mut pre);
    let w2 = block(p, FC2_W);
    let logit = block(p, FC2_B)[0] + pre.iter().zip(w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>();
    (pre, logit)
}

/// Score of a sequence of encoded feature vectors.
pub fn score_features(p: &[f64], feats: &[&[f64]]) -> f64 {
    let (h1, _) = gru_forward(p, GRU1, feats);
    let refs: Vec<&[f64]> = h1.iter().map(|v| v.as_slice()).collect();
    let (h2, _) = gru_forward(p, GRU2, &refs);
    let (_, logit) = head(p, h2.last().expect("non-empty window"));
    sigmoid(logit)
}

/// Binary cross-entropy from a logit, stable for large magnitudes.
fn bce_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over windows and its gradient. Maps shared between windows
/// (same `Arc`) are encoded once.
pub fn loss_and_gradient(p: &[f64], windows: &[(&[Arc<Grid>], f64)]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; PARAM_COUNT];
    let mut index: HashMap<*const Grid, usize> = HashMap::new();
    let mut unique: Vec<&Arc<Grid>> = Vec::new();
    for (maps, _) in windows {
        for m in maps.iter() {
            index.entry(Arc::as_ptr(m)).or_insert_with(|| {
                unique.push(m);
                unique.len() - 1
            });
        }
    }
    let enc: Vec<Encoded> = unique.iter().map(|m| encode(p, m)).collect();
    let mut dfeat = vec![vec![0.0; FEATURES]; unique.len()];
    let scale = 1.0 / windows.len().max(1) as f64;
    let mut total = 0.0;
    for (maps, y) in windows {
        let ids: Vec<usize> = maps.iter().map(|m| index[&Arc::as_ptr(m)]).collect();
        let xs: Vec<&[f64]> = ids.iter().map(|&i| enc[i].features.as_slice()).collect();
        let (h1, s1) = gru_forward(p, GRU1, &xs);
        let h1r: Vec<&[f64]> = h1.iter().map(|v| v.as_slice()).collect();
        let (h2, s2) = gru_forward(p, GRU2, &h1r);
        let last = h2.last().expect("non-empty window");
        let (pre, logit) = head(p, last);
        total += bce_logit(logit, *y);

        let dlogit = (sigmoid(logit) - y) * scale;
        block_mut(&mut g, FC2_B)[0] += dlogit;
        let w2 = block(p, FC2_W).to_vec();
        let mut dpre = vec![0.0; HEAD];
        {
            let gw2 = block_mut(&mut g, FC2_W);
            for j in 0..HEAD {
                gw2[j] += dlogit * pre[j].max(0.0);
                dpre[j] = if pre[j] > 0.0 { dlogit * w2[j] } else { 0.0 };
            }
        }
        let w1 = block(p, FC1_W);
        let mut dlast = vec![0.0; HIDDEN];
        for j in 0..HEAD {
            block_mut(&mut g, FC1_B)[j] += dpre[j];
            for k in 0..HIDDEN {
                g[OFF[FC1_W] + j * HIDDEN + k] += dpre[j] * last[k];
                dlast[k] += dpre[j] * w1[j * HIDDEN + k];
            }
        }
        let mut dh2 = vec![vec![0.0; HIDDEN]; xs.len()];
        *dh2.last_mut().expect("non-empty") = dlast;
        let dh1 = gru_backward(p, GRU2, &h1r, &h2, &s2, &dh2, &mut g);
        let dx = gru_backward(p, GRU1, &xs, &h1, &s1, &dh1, &mut g);
        for (i, d) in ids.iter().zip(dx) {
            for (a, b) in dfeat[*i].iter_mut().zip(d) {
                *a += b;
            }
        }
    }
    for ((m, e), d) in unique.iter().zip(&enc).zip(&dfeat) {
        encode_backward(p, m, e, d, &mut g);
    }
    (total * scale, g)
}
