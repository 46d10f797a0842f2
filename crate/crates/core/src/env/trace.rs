use std::io::Write;

use crate::error::Result;

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Per-step record of a single env, exportable as CSV.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub motor_names: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(motor_names: Vec<String>) -> Self {
        Self { motor_names, rows: Vec::new() }
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["q", "qd", "action"] {
            header.extend(self.motor_names.iter().map(|n| format!("{prefix}_{n}")));
        }
        header.push("reward".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.q.iter().chain(&r.qd).chain(&r.action).map(f64::to_string));
            rec.push(r.reward.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
