//! Experiment orchestration: the tracker roster, benchmark corpora, gate
//! training on tracker output, and dynamics sweeps. Everything here is
//! deterministic given the config seeds; runs are sequential.

mod bench;
mod corpus;
mod decay;
mod roster;

pub use bench::{
    collect_gate_tracks, run_benchmark, run_gate_training, write_tables, BenchmarkConfig,
    BenchmarkSummary, GateTrainingOutcome, GateTrainingRun, RunScore,
};
pub use corpus::{reentry_frame, CorpusSpec, NamedSequence, Preset};
pub use decay::{run_dynamics, DynamicsRun, DynamicsSummaryRow};
pub use roster::{run_tracker, TrackOutput, TrackerKind, TrackerSettings};
