use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mask::MaskEdit;
use super::objective::lp_norm;
use super::policy::DecentralizedPolicy;
use crate::error::{DemosError, Result};
use crate::kinematics::BranchSet;

/// Branch-to-branch and branch-to-motor connection strengths over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionMatrix {
    pub p: f64,
    pub samples: usize,
    /// `C_ij`: mean L-p magnitude of branch `i`'s output on branch `j`'s motors.
    pub c: Array2<f64>,
    /// `C_ij / C_jj`; NaN where `C_jj = 0`.
    pub relative: Array2<f64>,
    /// `S_im`: mean absolute output of branch `i` on motor `m`.
    pub s: Array2<f64>,
    /// Per-motor normalizer: sum of `S_im` over the branches owning `m`.
    pub s_own: Array1<f64>,
}

impl ConnectionMatrix {
    /// Builds the matrices from per-branch (masked) outputs.
    pub fn from_outputs(set: &BranchSet, outputs: &[Array2<f64>], p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(DemosError::InvalidArgument(format!("norm order p must be >= 1, got {p}")));
        }
        if outputs.len() != set.len() {
            return Err(DemosError::Dimension { expected: set.len(), got: outputs.len() });
        }
        let batch = outputs[0].nrows();
        if batch == 0 {
            return Err(DemosError::InvalidArgument("empty batch".into()));
        }
        let (n, motors) = (set.len(), set.motor_count());
        let mut c = Array2::zeros((n, n));
        let mut s = Array2::zeros((n, motors));
        for (i, out) in outputs.iter().enumerate() {
            if out.nrows() != batch || out.ncols() != motors {
                return Err(DemosError::Dimension { expected: motors, got: out.ncols() });
            }
            for row in out.rows() {
                for (j, b) in set.branches.iter().enumerate() {
                    c[[i, j]] += lp_norm(b.motors.iter().map(|&m| row[m]), p);
                }
                for m in 0..motors {
                    s[[i, m]] += row[m].abs();
                }
            }
        }
        let inv = 1.0 / batch as f64;
        c *= inv;
        s *= inv;
        let relative = Array2::from_shape_fn((n, n), |(i, j)| {
            let d = c[[j, j]];
            if d > 0.0 {
                c[[i, j]] / d
            } else {
                f64::NAN
            }
        });
        let s_own = Array1::from_shape_fn(motors, |m| set.owners(m).map(|b| s[[b.id, m]]).sum());
        Ok(Self { p, samples: batch, c, relative, s, s_own })
    }

    pub fn branch_count(&self) -> usize {
        self.c.nrows()
    }

    /// Branches `j` with `C_jj = 0`, whose relative column is undefined.
    pub fn undefined(&self) -> Vec<usize> {
        (0..self.branch_count()).filter(|&j| !(self.c[[j, j]] > 0.0)).collect()
    }

    /// Off-diagonal `(i, j)` edges that fall below `eta` (undefined counts as below).
    pub fn edges_below(&self, eta: f64) -> Vec<(usize, usize)> {
        let n = self.branch_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let r = self.relative[[i, j]];
                if i != j && (r.is_nan() || r < eta) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Writes `i,j,c,relative` rows with one-based branch labels.
    pub fn write_branch_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "c", "relative"])?;
        let n = self.branch_count();
        for i in 0..n {
            for j in 0..n {
                w.write_record([
                    format!("B{}", i + 1),
                    format!("B{}", j + 1),
                    self.c[[i, j]].to_string(),
                    self.relative[[i, j]].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `branch,motor,s,s_own,ratio` rows.
    pub fn write_motor_csv<W: Write>(&self, out: W, motor_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["branch", "motor", "s", "s_own", "ratio"])?;
        for i in 0..self.s.nrows() {
            for (m, name) in motor_names.iter().enumerate() {
                let ratio = self.s[[i, m]] / self.s_own[m];
                w.write_record([
                    format!("B{}", i + 1),
                    name.clone(),
                    self.s[[i, m]].to_string(),
                    self.s_own[m].to_string(),
                    ratio.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Connection strengths of `policy` on a batch of local observations,
/// measured on the masked branch contributions.
pub fn connection_matrix(policy: &DecentralizedPolicy, locals: &[Array2<f64>], p: f64) -> Result<ConnectionMatrix> {
    let outputs = policy.branch_actions(locals)?;
    ConnectionMatrix::from_outputs(policy.branches(), &outputs, p)
}

/// What a decoupling pass did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoupleReport {
    /// Mask entries that changed from allowed to cut.
    pub cleared: Vec<MaskEdit>,
    /// Branch edges `(i, j)` judged prunable.
    pub pruned_edges: Vec<(usize, usize)>,
    /// Branches or motors whose normalizer was zero.
    pub undefined: Vec<usize>,
}

impl DecoupleReport {
    pub fn summary(&self, set: &BranchSet) -> String {
        let mut out = String::new();
        for &(i, j) in &self.pruned_edges {
            out.push_str(&format!("pruned B{}→B{}\n", i + 1, j + 1));
        }
        for e in &self.cleared {
            out.push_str(&format!("cleared B{} → {}\n", e.branch + 1, set.motor_names[e.motor]));
        }
        if self.cleared.is_empty() {
            out.push_str("mask unchanged\n");
        }
        out
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(DemosError::InvalidArgument(format!("threshold must be >= 0, got {eta}")));
    }
    Ok(())
}

/// Branch-level pruning: for `i ≠ j` with `C_ij / C_jj < η`, cut branch `i`
/// from the motors of `𝕄_j \ 𝕄_i`. `C_jj = 0` counts as prunable. `η = 0`
/// leaves the mask unchanged.
pub fn apply_branch_decoupling(
    policy: &mut DecentralizedPolicy,
    cm: &ConnectionMatrix,
    eta: f64,
) -> Result<DecoupleReport> {
    check_eta(eta)?;
    let set = policy.branches().clone();
    if cm.branch_count() != set.len() {
        return Err(DemosError::Dimension { expected: set.len(), got: cm.branch_count() });
    }
    let mut report = DecoupleReport { undefined: cm.undefined(), ..Default::default() };
    if eta == 0.0 {
        return Ok(report);
    }
    let mut mask = policy.mask().clone();
    for (i, j) in cm.edges_below(eta) {
        report.pruned_edges.push((i, j));
        for &m in &set.branches[j].motors {
            if mask.clear(&set, i, m)? {
                report.cleared.push(MaskEdit { branch: i, motor: m });
            }
        }
    }
    if !report.cleared.is_empty() {
        policy.set_mask(mask)?;
    }
    Ok(report)
}

/// Motor-level pruning: cut branch `i` from foreign motor `m` when
/// `S_im / S_m < η'`. Motors with `S_m = 0` are reported and left alone.
pub fn apply_motor_decoupling(
    policy: &mut DecentralizedPolicy,
    cm: &ConnectionMatrix,
    eta: f64,
) -> Result<DecoupleReport> {
    check_eta(eta)?;
    let set = policy.branches().clone();
    if cm.s.dim() != (set.len(), set.motor_count()) {
        return Err(DemosError::Dimension { expected: set.len() * set.motor_count(), got: cm.s.len() });
    }
    let mut report = DecoupleReport {
        undefined: (0..set.motor_count()).filter(|&m| !(cm.s_own[m] > 0.0)).collect(),
        ..Default::default()
    };
    if eta == 0.0 {
        return Ok(report);
    }
    let mut mask = policy.mask().clone();
    for b in &set.branches {
        for &m in &b.complement {
            let norm = cm.s_own[m];
            if norm > 0.0 && cm.s[[b.id, m]] / norm < eta && mask.clear(&set, b.id, m)? {
                report.cleared.push(MaskEdit { branch: b.id, motor: m });
            }
        }
    }
    if !report.cleared.is_empty() {
        policy.set_mask(mask)?;
    }
    Ok(report)
}
