use std::ops::Range;

use super::Sequence;
use crate::error::{ensure, Error, Result};

/// Long repetition protocol: `x1`, then `repetitions` times `x2..xT` followed
/// by `x(T-1)..x1`. One forward plus reverse pass is one repetition.
///
/// The output has `(2T - 2) * repetitions + 1` frames. Repetition 1 starts at
/// index 0 (it owns the initial frame); repetition `k > 1` starts at
/// `1 + (k - 1) * (2T - 2)`.
pub fn extend_long(s: &Sequence, repetitions: usize) -> Result<Sequence> {
    let t = s.len();
    ensure!(repetitions >= 1, InvalidArgument, "need at least one repetition");
    ensure!(t >= 2, InvalidArgument, "Long extension needs at least 2 frames, got {t}");
    ensure!(
        s.truth.len() == t,
        Data,
        "sequence has {t} frames but {} truth boxes",
        s.truth.len()
    );

    let order = long_order(t, repetitions);
    let period = 2 * t - 2;
    Ok(Sequence {
        frames: order.iter().map(|&i| s.frames[i].clone()).collect(),
        truth: order.iter().map(|&i| s.truth[i]).collect(),
        tags: s.tags.clone(),
        seed: s.seed,
        repetition_boundaries: (0..repetitions)
            .map(|k| if k == 0 { 0 } else { 1 + k * period })
            .collect(),
    })
}

/// Source frame index for every position of the extended video.
pub(crate) fn long_order(t: usize, repetitions: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity((2 * t - 2) * repetitions + 1);
    order.push(0);
    for _ in 0..repetitions {
        order.extend(1..t);
        order.extend((0..t - 1).rev());
    }
    order
}

/// Frame spans of each repetition: `[b_k, b_{k+1})`, the last one ending at `len`.
pub fn repetition_spans(boundaries: &[usize], len: usize) -> Result<Vec<Range<usize>>> {
    ensure!(!boundaries.is_empty(), InvalidArgument, "no repetition boundaries");
    for w in boundaries.windows(2) {
        ensure!(
            w[0] < w[1],
            InvalidArgument,
            "repetition boundaries must increase strictly: {boundaries:?}"
        );
    }
    if boundaries[boundaries.len() - 1] >= len {
        return Err(Error::InvalidArgument(format!(
            "repetition boundary {} outside a {len}-frame sequence",
            boundaries[boundaries.len() - 1]
        )));
    }
    Ok(boundaries
        .iter()
        .enumerate()
        .map(|(k, &b)| b..boundaries.get(k + 1).copied().unwrap_or(len))
        .collect())
}
