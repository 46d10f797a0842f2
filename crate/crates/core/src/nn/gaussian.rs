use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DemosError, Result};

/// `ln(2π)`.
pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// State-independent diagonal Gaussian over actions: `a ~ N(μ, diag(σ²))`
/// with `σ = exp(log_std)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub log_std: Array1<f64>,
}

impl GaussianHead {
    pub fn new(dim: usize, init_std: f64) -> Self {
        Self { log_std: Array1::from_elem(dim, init_std.ln()) }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Array1<f64> {
        self.log_std.mapv(f64::exp)
    }

    fn check(&self, mu: &ArrayView2<'_, f64>, a: &ArrayView2<'_, f64>) -> Result<()> {
        if mu.ncols() != self.dim() || mu.dim() != a.dim() {
            return Err(DemosError::Dimension { expected: self.dim(), got: mu.ncols().max(a.ncols()) });
        }
        Ok(())
    }

    /// Per-sample log density of `a` under `N(μ, σ²)`.
    pub fn log_prob(&self, mu: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check(&mu, &a)?;
        let inv_var = self.log_std.mapv(|l| (-2.0 * l).exp());
        let norm = -self.log_std.sum() - 0.5 * LOG_2PI * self.dim() as f64;
        let mut out = Array1::from_elem(mu.nrows(), norm);
        Zip::from(&mut out).and(mu.rows()).and(a.rows()).for_each(|lp, m, x| {
            let mut quad = 0.0;
            for k in 0..m.len() {
                let d = x[k] - m[k];
                quad += d * d * inv_var[k];
            }
            *lp -= 0.5 * quad;
        });
        Ok(out)
    }

    /// Entropy `Σ (log σ + ½ log 2πe)`, independent of the mean.
    pub fn entropy(&self) -> f64 {
        self.log_std.sum() + 0.5 * (LOG_2PI + 1.0) * self.dim() as f64
    }

    /// Gradients of `Σ_b w_b log p(a_b)` with respect to `μ` (per sample) and `log σ`.
    pub fn log_prob_grads(
        &self,
        mu: ArrayView2<'_, f64>,
        a: ArrayView2<'_, f64>,
        weights: ArrayView1<'_, f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check(&mu, &a)?;
        if weights.len() != mu.nrows() {
            return Err(DemosError::Dimension { expected: mu.nrows(), got: weights.len() });
        }
        let inv_var = self.log_std.mapv(|l| (-2.0 * l).exp());
        let mut d_mu = Array2::zeros(mu.raw_dim());
        let mut d_log_std = Array1::zeros(self.dim());
        for (b, w) in weights.iter().enumerate() {
            for k in 0..self.dim() {
                let d = a[[b, k]] - mu[[b, k]];
                d_mu[[b, k]] = w * d * inv_var[k];
                d_log_std[k] += w * (d * d * inv_var[k] - 1.0);
            }
        }
        Ok((d_mu, d_log_std))
    }

    /// Samples one action per row of `mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: ArrayView2<'_, f64>, rng: &mut R) -> Array2<f64> {
        let std = self.std();
        let mut a = mu.to_owned();
        for mut row in a.rows_mut() {
            for (x, s) in row.iter_mut().zip(std.iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *x += s * z;
            }
        }
        a
    }
}
