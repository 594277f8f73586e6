//! Monte-Carlo sweeps of the online-learning decay experiment over label
//! noise levels.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::{run_decay_experiment, DynamicsConfig, FeatureMap, SigmaSchedule};
use crate::error::{ensure, Error, Result};
use crate::rng::derive_seed;
use crate::synthvid::{generate_sequence, SequenceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsRun {
    /// Scene template; its seed is replaced per run.
    pub sequence: SequenceConfig,
    pub sigmas: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub eta: f64,
    pub window: Option<usize>,
    pub patch: usize,
    pub output: PathBuf,
}

impl Default for DynamicsRun {
    fn default() -> Self {
        Self {
            sequence: SequenceConfig::new(150, 0),
            sigmas: vec![0.5, 2.0],
            runs: 30,
            seed: 0,
            eta: 0.01,
            window: None,
            patch: 16,
            output: PathBuf::from("dynamics-out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsSummaryRow {
    pub sigma: f64,
    pub run: usize,
    pub terminal_cum_bias: f64,
    pub terminal_cum_perfect: f64,
    pub first_pred_error: f64,
    pub last_pred_error: f64,
}

/// Runs every `(sigma, run)` pair. Run `k` uses the same scene and noise
/// seed for every sigma, so the sweep is paired. Traces go to
/// `<output>/sigma-<s>/run-<k>.csv`, one row per pair to `summary.csv`.
pub fn run_dynamics(cfg: &DynamicsRun) -> Result<Vec<DynamicsSummaryRow>> {
    ensure!(!cfg.sigmas.is_empty(), Config, "no sigma values given");
    ensure!(cfg.runs > 0, Config, "runs must be positive");
    ensure!(cfg.patch > 0, Config, "patch must be positive");
    for &s in &cfg.sigmas {
        ensure!(s.is_finite() && s >= 0.0, Config, "sigma must be finite and non-negative, got {s}");
    }
    let dc = DynamicsConfig {
        eta: cfg.eta,
        window: cfg.window,
        feature_map: FeatureMap { patch: cfg.patch },
    };
    let scenes = (0..cfg.runs)
        .map(|k| {
            let sc = SequenceConfig {
                seed: derive_seed(cfg.seed, 2 * k as u64),
                ..cfg.sequence.clone()
            };
            generate_sequence(&sc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &sigma in &cfg.sigmas {
        let dir = cfg.output.join(format!("sigma-{sigma}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, seq) in scenes.iter().enumerate() {
            let noise_seed = derive_seed(cfg.seed, 2 * k as u64 + 1);
            let trace = run_decay_experiment(seq, &SigmaSchedule::Constant(sigma), &dc, noise_seed)?;
            trace.save(&dir.join(format!("run-{k:03}.csv")))?;
            let first = trace.rows.first();
            let last = trace.rows.last();
            rows.push(DynamicsSummaryRow {
                sigma,
                run: k,
                terminal_cum_bias: trace.terminal_cum_bias(),
                terminal_cum_perfect: last.map_or(0.0, |r| r.cum_perfect),
                first_pred_error: first.map_or(0.0, |r| r.pred_error),
                last_pred_error: last.map_or(0.0, |r| r.pred_error),
            });
        }
    }
    let path = cfg.output.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
