//! Deterministic synthetic challenge videos.
//!
//! A textured target moves over a static textured background while timed
//! challenge events (occlusion, out-of-view, illumination, ...) alter the
//! frames. Output frames are quantized to 8 bits so they survive the PGM
//! round trip bit-exactly.

mod generate;
mod io;
mod long;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geom::{BBox, Frame};

pub use generate::generate_sequence;
pub use io::{read_sequence, write_sequence};
pub use long::{extend_long, repetition_spans};

/// Video-wide challenge annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChallengeTag {
    IV,
    SV,
    OCC,
    DEF,
    MB,
    FM,
    #[serde(rename = "IPR_proxy")]
    IprProxy,
    OV,
    BC,
    LR,
}

impl ChallengeTag {
    pub const ALL: [ChallengeTag; 10] = [
        ChallengeTag::IV,
        ChallengeTag::SV,
        ChallengeTag::OCC,
        ChallengeTag::DEF,
        ChallengeTag::MB,
        ChallengeTag::FM,
        ChallengeTag::IprProxy,
        ChallengeTag::OV,
        ChallengeTag::BC,
        ChallengeTag::LR,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChallengeTag::IV => "IV",
            ChallengeTag::SV => "SV",
            ChallengeTag::OCC => "OCC",
            ChallengeTag::DEF => "DEF",
            ChallengeTag::MB => "MB",
            ChallengeTag::FM => "FM",
            ChallengeTag::IprProxy => "IPR_proxy",
            ChallengeTag::OV => "OV",
            ChallengeTag::BC => "BC",
            ChallengeTag::LR => "LR",
        }
    }
}

impl fmt::Display for ChallengeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    /// Constant speed in pixels per frame along a seeded random heading.
    pub velocity: f64,
    /// Per-frame Gaussian positional jitter (standard deviation, pixels).
    pub jitter_sd: f64,
}

/// A timed challenge. `start` and `end` are 1-based, inclusive frame numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChallengeEvent {
    /// Opaque textured occluder. Without an explicit box the occluder spans
    /// the target's path over the interval, grown by `margin` target sizes.
    Occlusion {
        start: usize,
        end: usize,
        #[serde(default)]
        occluder: Option<BBox>,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    /// Target leaves the frame; it re-enters at a fresh uniform location.
    OutOfView { start: usize, end: usize },
    /// Frame-wide gain ramping linearly from `gain_max` to `gain_min`.
    Illumination {
        start: usize,
        end: usize,
        gain_min: f64,
        gain_max: f64,
    },
    /// Target size ramps geometrically to `factor` and keeps it afterwards.
    ScaleRamp { start: usize, end: usize, factor: f64 },
    MotionBlur { start: usize, end: usize, radius: usize },
    /// Each burst frame jumps `speed` pixels in a fresh random direction.
    FastMotion { start: usize, end: usize, speed: f64 },
    /// Sinusoidal texture warp, peak displacement `amplitude` pixels.
    Deformation { start: usize, end: usize, amplitude: f64 },
    /// Texture rotation inside the axis-aligned box (in-plane rotation proxy),
    /// rising to `max_angle_deg` at mid-interval and back to zero.
    InPlaneRotation {
        start: usize,
        end: usize,
        max_angle_deg: f64,
    },
    /// Static distractors drawn from the target's texture distribution.
    Clutter { start: usize, end: usize, count: usize },
    /// Block-average downsample by `factor`, then nearest upsample.
    LowResolution { start: usize, end: usize, factor: usize },
}

fn default_margin() -> f64 {
    0.15
}

impl ChallengeEvent {
    pub fn interval(&self) -> (usize, usize) {
        match *self {
            ChallengeEvent::Occlusion { start, end, .. }
            | ChallengeEvent::OutOfView { start, end }
            | ChallengeEvent::Illumination { start, end, .. }
            | ChallengeEvent::ScaleRamp { start, end, .. }
            | ChallengeEvent::MotionBlur { start, end, .. }
            | ChallengeEvent::FastMotion { start, end, .. }
            | ChallengeEvent::Deformation { start, end, .. }
            | ChallengeEvent::InPlaneRotation { start, end, .. }
            | ChallengeEvent::Clutter { start, end, .. }
            | ChallengeEvent::LowResolution { start, end, .. } => (start, end),
        }
    }

    pub fn tag(&self) -> ChallengeTag {
        match self {
            ChallengeEvent::Occlusion { .. } => ChallengeTag::OCC,
            ChallengeEvent::OutOfView { .. } => ChallengeTag::OV,
            ChallengeEvent::Illumination { .. } => ChallengeTag::IV,
            ChallengeEvent::ScaleRamp { .. } => ChallengeTag::SV,
            ChallengeEvent::MotionBlur { .. } => ChallengeTag::MB,
            ChallengeEvent::FastMotion { .. } => ChallengeTag::FM,
            ChallengeEvent::Deformation { .. } => ChallengeTag::DEF,
            ChallengeEvent::InPlaneRotation { .. } => ChallengeTag::IprProxy,
            ChallengeEvent::Clutter { .. } => ChallengeTag::BC,
            ChallengeEvent::LowResolution { .. } => ChallengeTag::LR,
        }
    }

    fn active(&self, t: usize) -> bool {
        let (s, e) = self.interval();
        (s..=e).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub width: usize,
    pub height: usize,
    /// Number of frames `T`.
    pub length: usize,
    pub seed: u64,
    /// Initial target `(w, h)` in pixels.
    pub target_size: (f64, f64),
    pub motion: Motion,
    #[serde(default)]
    pub pixel_noise_sd: f64,
    #[serde(default)]
    pub events: Vec<ChallengeEvent>,
}

impl SequenceConfig {
    /// A static-free default scene: 192x144 frames with a 16x16 target.
    pub fn new(length: usize, seed: u64) -> Self {
        Self {
            width: 192,
            height: 144,
            length,
            seed,
            target_size: (16.0, 16.0),
            motion: Motion {
                velocity: 1.0,
                jitter_sd: 0.3,
            },
            pixel_noise_sd: 0.0,
            events: Vec::new(),
        }
    }

    pub fn with_event(mut self, e: ChallengeEvent) -> Self {
        self.events.push(e);
        self
    }
}

/// Frames plus dense ground truth. Frames are shared (`Arc`) so Long-extended
/// sequences do not duplicate pixel data.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Arc<Frame>>,
    pub truth: Vec<BBox>,
    pub tags: BTreeSet<ChallengeTag>,
    pub seed: u64,
    /// Start index of each Long repetition; empty for an unextended video.
    pub repetition_boundaries: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width())
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height())
    }
}
