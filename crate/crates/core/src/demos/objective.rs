use ndarray::Array2;

use super::policy::DecentralizedPolicy;
use crate::error::{DemosError, Result};
use crate::kinematics::BranchSet;

fn check(set: &BranchSet, raw: &[Array2<f64>], p: f64) -> Result<usize> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(DemosError::InvalidArgument(format!("norm order p must be >= 1, got {p}")));
    }
    if raw.len() != set.len() {
        return Err(DemosError::Dimension { expected: set.len(), got: raw.len() });
    }
    let batch = raw[0].nrows();
    if batch == 0 {
        return Err(DemosError::InvalidArgument("empty batch".into()));
    }
    for r in raw {
        if r.nrows() != batch || r.ncols() != set.motor_count() {
            return Err(DemosError::Dimension { expected: set.motor_count(), got: r.ncols() });
        }
    }
    Ok(batch)
}

/// `‖x‖_p` over the entries of `row` selected by `idx`.
pub(crate) fn lp_norm(row: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 1.0 {
        row.map(f64::abs).sum()
    } else {
        row.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Off-branch penalty `(1/|D|) Σ_samples Σ_i ‖raw_i[𝕄̄_i]‖_p` on unmasked outputs.
pub fn decentralization_penalty(set: &BranchSet, raw: &[Array2<f64>], p: f64) -> Result<f64> {
    let batch = check(set, raw, p)?;
    let mut total = 0.0;
    for (b, out) in set.branches.iter().zip(raw) {
        for row in out.rows() {
            total += lp_norm(b.complement.iter().map(|&m| row[m]), p);
        }
    }
    Ok(total / batch as f64)
}

/// Penalty and its gradient with respect to every raw output entry.
///
/// For `p = 1` the subgradient at zero is taken as zero.
pub fn decentralization_penalty_grad(set: &BranchSet, raw: &[Array2<f64>], p: f64) -> Result<(f64, Vec<Array2<f64>>)> {
    let batch = check(set, raw, p)?;
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(raw.len());
    for (b, out) in set.branches.iter().zip(raw) {
        let mut g = Array2::zeros(out.raw_dim());
        for (r, row) in out.rows().into_iter().enumerate() {
            let norm = lp_norm(b.complement.iter().map(|&m| row[m]), p);
            total += norm;
            if norm == 0.0 {
                continue;
            }
            for &m in &b.complement {
                let x = row[m];
                let d = if p == 1.0 { x.signum() } else { norm.powf(1.0 - p) * x.abs().powf(p - 1.0) * x.signum() };
                g[[r, m]] = if x == 0.0 { 0.0 } else { d * scale };
            }
        }
        grads.push(g);
    }
    Ok((total * scale, grads))
}

/// `J_de = −penalty` for a batch of local observations.
pub fn decentralization_loss(policy: &DecentralizedPolicy, locals: &[Array2<f64>], p: f64) -> Result<f64> {
    let raw = policy.raw_outputs(locals)?;
    Ok(-decentralization_penalty(policy.branches(), &raw, p)?)
}
