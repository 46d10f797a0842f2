//! CSV row schemas shared by the commands and the plotter.

use std::path::Path;

use anyhow::{Context, Result};
use demos_core::env::{MalfunctionKind, MalfunctionSpec};
use demos_core::kinematics::BranchSet;
use demos_core::training::{EvalReport, IterationMetrics};
use serde::{Deserialize, Serialize};

pub const METRICS_CSV: &str = "metrics.csv";
pub const CONNECTIONS_CSV: &str = "connections.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const TIMING_CSV: &str = "timing.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub episode_return: f64,
    pub balance: f64,
    pub gait: f64,
    pub swing: f64,
    pub action: f64,
    pub action_rate: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub penalty: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub skipped: usize,
}

/// Wall-clock time is kept out of the metrics file so reruns compare equal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub iteration: usize,
    pub wall_time: f64,
}

impl From<&IterationMetrics> for MetricsRow {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iteration: m.iteration,
            mean_reward: m.mean_reward,
            episode_return: m.episode_return,
            balance: m.terms.balance,
            gait: m.terms.gait,
            swing: m.terms.swing,
            action: m.terms.action,
            action_rate: m.terms.action_rate,
            surrogate: m.update.surrogate,
            value_loss: m.update.value_loss,
            entropy: m.update.entropy,
            penalty: m.update.penalty,
            kl: m.update.kl,
            clip_fraction: m.update.clip_fraction,
            lr: m.update.lr,
            skipped: m.update.skipped,
        }
    }
}

/// One relative connection strength at one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionRow {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub malfunction: String,
    pub motor: String,
    pub level: f64,
    pub seed: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub balance: f64,
    pub gait: f64,
    pub swing: f64,
    pub action: f64,
    pub action_rate: f64,
    pub leg_terms: f64,
}

impl EvalRow {
    pub fn new(label: &str, report: &EvalReport, branches: &BranchSet, seed: u64) -> Self {
        let (malfunction, motor, level) = match report.malfunction {
            None => ("none".to_string(), String::new(), 0.0),
            Some(MalfunctionSpec { motor, kind }) => {
                let name = branches.motor_names[motor].clone();
                match kind {
                    MalfunctionKind::Stuck { angle } => ("stuck".into(), name, angle),
                    MalfunctionKind::Noise { std } => ("noise".into(), name, std),
                }
            }
        };
        let t = &report.terms;
        Self {
            label: label.to_string(),
            malfunction,
            motor,
            level,
            seed,
            episodes: report.episodes,
            mean_return: report.mean_return,
            std_return: report.std_return,
            balance: t.balance,
            gait: t.gait,
            swing: t.swing,
            action: t.action,
            action_rate: t.action_rate,
            leg_terms: report.leg_terms(),
        }
    }
}

/// Writes rows with a header to `path`, or to stdout when `path` is `None`.
pub fn write_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).with_context(|| format!("cannot write {}", p.display()))?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize().map(|row| row.with_context(|| format!("bad row in {}", path.display()))).collect()
}
