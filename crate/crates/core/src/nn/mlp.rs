use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DemosError, Result};

const EXP_SHIFTER: f64 = 6755399441055744.0; // 1.5 * 2^52
                                             // ln 2 split so that `k * LN2_HI` is exact for |k| < 2^11.
const LN2_HI: f64 = f64::from_bits(0x3FE6_2E42_FEE0_0000);
const LN2_LO: f64 = f64::from_bits(0x3DEA_39EF_3579_3C76);

/// `exp(x)` for `x <= 0`, branch free so batched loops vectorize.
/// Relative error stays within a few ulp; inputs below -700 flush towards 0.
#[inline]
fn exp_nonpositive(x: f64) -> f64 {
    let x = x.max(-700.0);
    let t = x * std::f64::consts::LOG2_E + EXP_SHIFTER;
    let k = t - EXP_SHIFTER;
    let ki = t.to_bits().wrapping_sub(EXP_SHIFTER.to_bits());
    let r = x - k * LN2_HI - k * LN2_LO;
    // Taylor polynomial on |r| <= ln2/2, truncation below 1e-16.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(ki.wrapping_add(1023) << 52)
}

#[inline]
pub fn elu(x: f64) -> f64 {
    let neg = exp_nonpositive(x.min(0.0)) - 1.0;
    if x > 0.0 {
        x
    } else {
        neg
    }
}

/// Derivative of [`elu`] expressed through its output `y = elu(x)`.
#[inline]
pub fn elu_grad(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Fully connected layer. `weight` is stored input-major (`in x out`) so a
/// batch `X` (`batch x in`) maps to `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Array2::zeros((input, output)), bias: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Multilayer perceptron with ELU hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Orthogonal matrix of shape `rows x cols` scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // Columns of `q` are made orthonormal with modified Gram-Schmidt.
    let mut q = Array2::from_shape_fn((tall, short), |_| rng.sample::<f64, _>(StandardNormal));
    for c in 0..short {
        for prev in 0..c {
            let dot = q.column(c).dot(&q.column(prev));
            let p = q.column(prev).to_owned();
            q.column_mut(c).scaled_add(-dot, &p);
        }
        let norm = q.column(c).dot(&q.column(c)).sqrt();
        q.column_mut(c).mapv_inplace(|v| v / norm);
    }
    let q = if rows >= cols { q } else { q.reversed_axes().as_standard_layout().to_owned() };
    q * gain
}

impl Mlp {
    /// Network with all weights and biases zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    /// Orthogonal initialization: hidden layers use gain `sqrt(2)`, the output
    /// layer uses `output_gain`. Biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let gain = if k == last { output_gain } else { std::f64::consts::SQRT_2 };
            layer.weight = orthogonal(layer.input_dim(), layer.output_dim(), gain, rng);
        }
        net
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DemosError::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(DemosError::Dimension { expected: pair[0].output_dim(), got: pair[1].input_dim() });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(DemosError::Dimension { expected: layer.output_dim(), got: layer.bias.len() });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(DemosError::Dimension { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass (`batch x in` -> `batch x out`) without caching.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if k != last {
                z.mapv_inplace(elu);
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched forward pass returning the output and the cache for [`Mlp::backward`].
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if k != last {
                z.mapv_inplace(elu);
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Backpropagates `d_out` (`batch x out`), returning parameter gradients
    /// and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<'_, f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(DemosError::Dimension { expected: self.layers.len(), got: cache.inputs.len() });
        }
        let batch = cache.inputs[0].nrows();
        if d_out.nrows() != batch || d_out.ncols() != self.output_dim() {
            return Err(DemosError::Dimension {
                expected: batch * self.output_dim(),
                got: d_out.nrows() * d_out.ncols(),
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        for k in (0..n).rev() {
            if k != n - 1 {
                ndarray::Zip::from(&mut delta).and(&cache.inputs[k + 1]).for_each(|d, &y| *d *= elu_grad(y));
            }
            weights.push(cache.inputs[k].t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.layers[k].weight.t());
        }
        weights.reverse();
        biases.reverse();
        Ok((MlpGrads { weights, biases }, delta))
    }

    /// Appends parameters (per layer: weight row-major, then bias).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
    }

    /// Reads parameters in [`Mlp::write_params`] order, returning the count consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if src.len() < need {
            return Err(DemosError::Dimension { expected: need, got: src.len() });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = src[off];
                off += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = src[off];
                off += 1;
            }
        }
        Ok(off)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Appends gradients in the same order as [`Mlp::write_params`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward per-sample re-implementation with explicit loops.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = net.layers().len() - 1;
        for (k, layer) in net.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.output_dim()];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (i, hi) in h.iter().enumerate() {
                    acc += hi * layer.weight[[i, o]];
                }
                *zo = if k == last || acc > 0.0 { acc } else { acc.exp() - 1.0 };
            }
            h = z;
        }
        h
    }

    fn random_net(sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::orthogonal(sizes, 0.7, &mut rng);
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        net
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut net = random_net(&[4, 8, 3], 1);
        let last = net.layers_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias = array![0.5, -1.0, 2.0];
        let x = array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 0.3, 9.0]];
        let y = net.predict(x.view()).unwrap();
        for row in y.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn identity_single_layer() {
        let mut net = Mlp::zeros(&[3, 3]);
        net.layers_mut()[0].weight = Array2::eye(3);
        let x = array![[1.0, -2.0, 0.5]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn fast_exp_tracks_std() {
        let mut x = -745.0;
        while x <= 0.0 {
            let (a, b) = (exp_nonpositive(x), x.exp());
            if x >= -700.0 {
                assert!((a - b).abs() <= 4.0 * f64::EPSILON * b, "x={x}: {a} vs {b}");
            } else {
                assert!(a <= 1e-300);
            }
            x += 0.0137;
        }
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(elu(0.0), 0.0);
        assert!((elu(-1e-3) - (-1e-3f64).exp_m1()).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_forward() {
        let net = random_net(&[5, 7, 6, 2], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-2.0..2.0));
        let y = net.predict(x.view()).unwrap();
        let (y2, _) = net.forward(x.view()).unwrap();
        assert_eq!(y, y2);
        for (r, row) in x.rows().into_iter().enumerate() {
            let expected = reference_forward(&net, &row.to_vec());
            for (o, e) in expected.iter().enumerate() {
                assert!((y[[r, o]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 2]);
        let x = Array2::<f64>::zeros((1, 4));
        assert!(matches!(net.predict(x.view()), Err(DemosError::Dimension { expected: 3, got: 4 })));
    }

    fn loss(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let y = net.predict(x.view()).unwrap();
        (&y * target).sum() + 0.5 * y.mapv(|v| v * v).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = random_net(&[4, 6, 5, 3], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.5..1.5));
        let target = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let (y, cache) = net.forward(x.view()).unwrap();
        let d_out = &target + &y;
        let (grads, d_x) = net.backward(&cache, d_out.view()).unwrap();
        let mut analytic = Vec::new();
        grads.write_flat(&mut analytic);

        let mut params = Vec::new();
        net.write_params(&mut params);
        let h = 1e-5;
        for (i, a) in analytic.iter().enumerate() {
            let mut probe = net.clone();
            let mut p = params.clone();
            p[i] += h;
            probe.read_params(&p).unwrap();
            let up = loss(&probe, &x, &target);
            p[i] -= 2.0 * h;
            probe.read_params(&p).unwrap();
            let down = loss(&probe, &x, &target);
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {a} numeric {numeric}");
        }
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let up = loss(&net, &xp, &target);
                xp[[r, c]] -= 2.0 * h;
                let down = loss(&net, &xp, &target);
                let numeric = (up - down) / (2.0 * h);
                assert!((d_x[[r, c]] - numeric).abs() < 1e-6 * numeric.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = random_net(&[3, 4, 2], 5);
        let x = array![[0.1, -0.2, 0.3]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        let mut flat = Vec::new();
        g.write_flat(&mut flat);
        assert!(flat.iter().chain(dx.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let net = random_net(&[3, 4, 2], 6);
        let x = array![[0.1, -0.2, 0.3], [1.0, 0.5, -0.7]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let d = array![[0.3, -1.0], [2.0, 0.25]];
        let (g1, _) = net.backward(&cache, d.view()).unwrap();
        let (g2, _) = net.backward(&cache, (&d * 2.0).view()).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        g1.write_flat(&mut a);
        g2.write_flat(&mut b);
        for (x1, x2) in a.iter().zip(&b) {
            assert!((2.0 * x1 - x2).abs() <= 1e-12 * x2.abs().max(1.0));
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = orthogonal(8, 3, 1.0, &mut rng);
        let gram = w.t().dot(&w);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
        let wide = orthogonal(3, 8, 1.0, &mut rng);
        let gram = wide.dot(&wide.t());
        assert!((gram[[1, 1]] - 1.0).abs() < 1e-12 && gram[[0, 2]].abs() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let net = random_net(&[3, 5, 2], 8);
        let mut flat = Vec::new();
        net.write_params(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut other = Mlp::zeros(&[3, 5, 2]);
        assert_eq!(other.read_params(&flat).unwrap(), flat.len());
        assert_eq!(other, net);
    }
}
