//! Benchmark corpora: generated configs, named presets, or sequence directories.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geom::BBox;
use crate::rng::derive_seed;
use crate::synthvid::{
    extend_long, generate_sequence, read_sequence, ChallengeEvent, ChallengeTag, Sequence,
    SequenceConfig,
};

/// Canned sequence families used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 61-frame videos with one occlusion and one out-of-view spell, plus a
    /// rotation or deformation; meant for Long extension.
    LongOccOv,
    /// 150-frame videos dominated by out-of-view spells and motion bursts.
    OvFm,
    /// One 120-frame video per challenge tag, cycling through the tags.
    Challenges,
    /// Mixed-challenge 200-frame videos for gate training.
    GateTrain,
    /// 60-frame 256x192 videos whose target leaves at frame 20 and re-enters
    /// at a random location on frame 30.
    Reentry,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::LongOccOv => "long-occ-ov",
            Preset::OvFm => "ov-fm",
            Preset::Challenges => "challenges",
            Preset::GateTrain => "gate-train",
            Preset::Reentry => "reentry",
        }
    }

    fn id(self) -> u64 {
        match self {
            Preset::LongOccOv => 1,
            Preset::OvFm => 2,
            Preset::Challenges => 3,
            Preset::GateTrain => 4,
            Preset::Reentry => 5,
        }
    }

    /// Configuration of video `index` in this family.
    pub fn sequence(self, index: usize, root_seed: u64) -> SequenceConfig {
        let seed = derive_seed(derive_seed(root_seed, self.id()), index as u64);
        let base = |length| SequenceConfig {
            pixel_noise_sd: 0.01,
            ..SequenceConfig::new(length, seed)
        };
        let occ = |start, end| ChallengeEvent::Occlusion {
            start,
            end,
            occluder: None,
            margin: 0.15,
        };
        match self {
            Preset::LongOccOv => {
                let c = base(61)
                    .with_event(occ(14, 23))
                    .with_event(ChallengeEvent::OutOfView { start: 36, end: 43 });
                if index % 2 == 0 {
                    c.with_event(ChallengeEvent::Deformation {
                        start: 48,
                        end: 58,
                        amplitude: 2.0,
                    })
                } else {
                    c.with_event(ChallengeEvent::InPlaneRotation {
                        start: 48,
                        end: 58,
                        max_angle_deg: 40.0,
                    })
                }
            }
            Preset::OvFm => base(150)
                .with_event(ChallengeEvent::OutOfView { start: 25, end: 36 })
                .with_event(ChallengeEvent::FastMotion {
                    start: 60,
                    end: 60,
                    speed: 50.0,
                })
                .with_event(ChallengeEvent::OutOfView { start: 85, end: 96 })
                .with_event(ChallengeEvent::FastMotion {
                    start: 120,
                    end: 120,
                    speed: 60.0,
                }),
            Preset::Challenges => {
                let tag = ChallengeTag::ALL[index % ChallengeTag::ALL.len()];
                base(120).with_event(challenge_event(tag))
            }
            Preset::GateTrain => {
                let mut c = base(200)
                    .with_event(occ(30, 42))
                    .with_event(ChallengeEvent::OutOfView { start: 70, end: 84 })
                    .with_event(ChallengeEvent::FastMotion {
                        start: 120,
                        end: 120,
                        speed: 45.0,
                    });
                c = match index % 3 {
                    0 => c.with_event(ChallengeEvent::Clutter {
                        start: 140,
                        end: 200,
                        count: 3,
                    }),
                    1 => c.with_event(ChallengeEvent::InPlaneRotation {
                        start: 150,
                        end: 170,
                        max_angle_deg: 45.0,
                    }),
                    _ => c.with_event(occ(150, 165)),
                };
                c
            }
            Preset::Reentry => SequenceConfig {
                width: 256,
                height: 192,
                ..base(60)
            }
            .with_event(ChallengeEvent::OutOfView { start: 20, end: 29 }),
        }
    }
}

/// A representative event for each tag, inside frames 40..=80.
fn challenge_event(tag: ChallengeTag) -> ChallengeEvent {
    let (start, end) = (40, 80);
    match tag {
        ChallengeTag::IV => ChallengeEvent::Illumination {
            start,
            end,
            gain_min: 0.4,
            gain_max: 1.0,
        },
        ChallengeTag::SV => ChallengeEvent::ScaleRamp {
            start,
            end,
            factor: 1.6,
        },
        ChallengeTag::OCC => ChallengeEvent::Occlusion {
            start: 50,
            end: 62,
            occluder: None,
            margin: 0.15,
        },
        ChallengeTag::DEF => ChallengeEvent::Deformation {
            start,
            end,
            amplitude: 2.5,
        },
        ChallengeTag::MB => ChallengeEvent::MotionBlur {
            start,
            end,
            radius: 2,
        },
        ChallengeTag::FM => ChallengeEvent::FastMotion {
            start: 60,
            end: 62,
            speed: 40.0,
        },
        ChallengeTag::IprProxy => ChallengeEvent::InPlaneRotation {
            start,
            end,
            max_angle_deg: 60.0,
        },
        ChallengeTag::OV => ChallengeEvent::OutOfView { start: 50, end: 62 },
        ChallengeTag::BC => ChallengeEvent::Clutter {
            start,
            end,
            count: 4,
        },
        ChallengeTag::LR => ChallengeEvent::LowResolution {
            start,
            end,
            factor: 3,
        },
    }
}

/// Where the benchmark sequences come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    Preset {
        preset: Preset,
        count: usize,
        /// Long-extension repetitions; 1 keeps the short videos.
        #[serde(default = "one")]
        repetitions: usize,
    },
    Generated {
        sequences: Vec<SequenceConfig>,
        #[serde(default = "one")]
        repetitions: usize,
    },
    /// Previously written sequence directories.
    Directories { paths: Vec<PathBuf> },
}

fn one() -> usize {
    1
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::Preset {
            preset: Preset::Challenges,
            count: 10,
            repetitions: 1,
        }
    }
}

/// A corpus member with a stable name.
#[derive(Debug, Clone)]
pub struct NamedSequence {
    pub name: String,
    pub sequence: Sequence,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, reps) = match self {
            CorpusSpec::Preset {
                count, repetitions, ..
            } => (*count, *repetitions),
            CorpusSpec::Generated {
                sequences,
                repetitions,
            } => (sequences.len(), *repetitions),
            CorpusSpec::Directories { paths } => (paths.len(), 1),
        };
        ensure!(n > 0, Config, "the corpus is empty");
        ensure!(reps > 0, Config, "repetitions must be at least 1");
        Ok(())
    }

    /// Builds the corpus; `seed` roots the preset seeds.
    pub fn materialize(&self, seed: u64) -> Result<Vec<NamedSequence>> {
        self.validate()?;
        let extend = |s: Sequence, reps: usize| if reps > 1 { extend_long(&s, reps) } else { Ok(s) };
        match self {
            CorpusSpec::Preset {
                preset,
                count,
                repetitions,
            } => (0..*count)
                .map(|i| {
                    let s = generate_sequence(&preset.sequence(i, seed))?;
                    Ok(NamedSequence {
                        name: format!("{}-{i:02}", preset.name()),
                        sequence: extend(s, *repetitions)?,
                    })
                })
                .collect(),
            CorpusSpec::Generated {
                sequences,
                repetitions,
            } => sequences
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    Ok(NamedSequence {
                        name: format!("seq-{i:03}"),
                        sequence: extend(generate_sequence(c)?, *repetitions)?,
                    })
                })
                .collect(),
            CorpusSpec::Directories { paths } => {
                let mut out: Vec<NamedSequence> = Vec::with_capacity(paths.len());
                for p in paths {
                    let name = p
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .ok_or_else(|| Error::Config(format!("{}: not a sequence directory", p.display())))?;
                    ensure!(
                        out.iter().all(|s| s.name != name),
                        Config,
                        "duplicate sequence name {name:?}"
                    );
                    out.push(NamedSequence {
                        name,
                        sequence: read_sequence(p)?,
                    });
                }
                Ok(out)
            }
        }
    }
}

/// Frame (0-based) at which the target first comes back after its first
/// absence, if it does.
pub fn reentry_frame(truth: &[BBox]) -> Option<usize> {
    let gone = truth.iter().position(|b| !b.present)?;
    truth[gone..].iter().position(|b| b.present).map(|k| gone + k)
}

