//! A laboratory for model decay in long-term visual tracking.
//!
//! The crate couples an exactly decomposable learning-dynamics simulator
//! ([`dynamics`]) with executable trackers ([`trackers`]), a synthetic
//! challenge-video generator with the Long repetition protocol ([`synthvid`]),
//! a learned update gate ([`decaygate`]), long-term metrics ([`eval`]) and
//! the experiment orchestration used by the command line tool ([`harness`]).

pub mod error;
pub mod geom;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
pub use geom::{BBox, Frame, Grid};
pub mod dynamics;
pub mod synthvid;
pub mod trackers;
pub mod eval;
pub mod decaygate;
pub mod harness;
