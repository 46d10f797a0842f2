use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::config::TrainConfig;
use super::gae::adapt_lr;
use crate::demos::{decentralization_penalty_grad, DecentralizedPolicy};
use crate::error::{DemosError, Result};
use crate::nn::{AdamW, Mlp, StepOutcome};

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub demos_lambda: f64,
    pub norm_p: f64,
}

impl LossCoefficients {
    pub fn from_config(cfg: &TrainConfig, demos_lambda: f64) -> Self {
        Self {
            clip: cfg.clip,
            entropy_coef: cfg.entropy_coef,
            value_coef: cfg.value_coef,
            demos_lambda,
            norm_p: cfg.norm_p,
        }
    }
}

/// A slice of the rollout used for one gradient step.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_prob: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

/// Loss terms on a minibatch. `total` is the quantity minimized:
/// `−surrogate − c_ent·entropy + λ·penalty + c_v·value_loss`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Decentralization penalty (`J_de = −penalty`).
    pub penalty: f64,
    /// Mean of `log p_old − log p_new`.
    pub kl: f64,
    pub clip_fraction: f64,
    pub total: f64,
}

/// Flat gradients of `total`, in the parameter order of
/// [`DecentralizedPolicy::write_params`] and [`Mlp::write_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub policy: Vec<f64>,
    pub critic: Vec<f64>,
}

struct Forward {
    locals_cache: Vec<crate::nn::MlpCache>,
    raw: Vec<Array2<f64>>,
    mu: Array2<f64>,
    log_prob: Array1<f64>,
    values: Array1<f64>,
    critic_cache: crate::nn::MlpCache,
}

fn forward(policy: &DecentralizedPolicy, critic: &Mlp, mb: &Minibatch) -> Result<Forward> {
    if policy.replacements().iter().any(Option::is_some) {
        return Err(DemosError::InvalidArgument("policies with scripted replacements cannot be trained".into()));
    }
    let b = mb.obs.nrows();
    if mb.actions.nrows() != b || mb.old_log_prob.len() != b || mb.advantages.len() != b || mb.returns.len() != b {
        return Err(DemosError::Dimension { expected: b, got: mb.actions.nrows() });
    }
    let locals = policy.local_inputs(mb.obs.view())?;
    let mut raw = Vec::with_capacity(locals.len());
    let mut locals_cache = Vec::with_capacity(locals.len());
    for (net, o) in policy.nets().iter().zip(&locals) {
        let (y, cache) = net.forward(o.view())?;
        raw.push(y);
        locals_cache.push(cache);
    }
    let mu = policy.mean_from_raw(&raw);
    let log_prob = policy.head.log_prob(mu.view(), mb.actions.view())?;
    let (v, critic_cache) = critic.forward(mb.obs.view())?;
    let values = v.column(0).to_owned();
    Ok(Forward { locals_cache, raw, mu, log_prob, values, critic_cache })
}

struct Surrogate {
    value: f64,
    /// `∂(mean surrogate)/∂ log p` per sample.
    d_log_prob: Array1<f64>,
    clip_fraction: f64,
}

fn surrogate(log_prob: &Array1<f64>, mb: &Minibatch, clip: f64) -> Surrogate {
    let b = log_prob.len() as f64;
    let mut value = 0.0;
    let mut clipped = 0usize;
    let mut d = Array1::zeros(log_prob.len());
    for k in 0..log_prob.len() {
        let ratio = (log_prob[k] - mb.old_log_prob[k]).exp();
        let a = mb.advantages[k];
        let unclipped = ratio * a;
        let bounded = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        if unclipped <= bounded {
            value += unclipped;
            d[k] = unclipped / b;
        } else {
            value += bounded;
        }
    }
    Surrogate { value: value / b, d_log_prob: d, clip_fraction: clipped as f64 / b }
}

/// Per-branch gradients of the penalty, present when `λ > 0`.
type PenaltyGrads = Option<Vec<Array2<f64>>>;

fn breakdown(
    policy: &DecentralizedPolicy,
    f: &Forward,
    mb: &Minibatch,
    coefs: &LossCoefficients,
) -> Result<(LossBreakdown, Surrogate, PenaltyGrads)> {
    let b = mb.obs.nrows() as f64;
    let sur = surrogate(&f.log_prob, mb, coefs.clip);
    let value_loss = f.values.iter().zip(&mb.returns).map(|(v, r)| (v - r) * (v - r)).sum::<f64>() / b;
    let entropy = policy.head.entropy();
    let (penalty, d_pen) = if coefs.demos_lambda > 0.0 {
        let (p, g) = decentralization_penalty_grad(policy.branches(), &f.raw, coefs.norm_p)?;
        (p, Some(g))
    } else {
        (0.0, None)
    };
    let kl = (&mb.old_log_prob - &f.log_prob).sum() / b;
    let total =
        -sur.value - coefs.entropy_coef * entropy + coefs.demos_lambda * penalty + coefs.value_coef * value_loss;
    let out = LossBreakdown {
        surrogate: sur.value,
        value_loss,
        entropy,
        penalty,
        kl,
        clip_fraction: sur.clip_fraction,
        total,
    };
    Ok((out, sur, d_pen))
}

/// Loss terms without gradients.
pub fn ppo_loss(
    policy: &DecentralizedPolicy,
    critic: &Mlp,
    mb: &Minibatch,
    coefs: &LossCoefficients,
) -> Result<LossBreakdown> {
    let f = forward(policy, critic, mb)?;
    Ok(breakdown(policy, &f, mb, coefs)?.0)
}

/// Loss terms and the gradient of `total` with respect to every parameter.
pub fn ppo_gradients(
    policy: &DecentralizedPolicy,
    critic: &Mlp,
    mb: &Minibatch,
    coefs: &LossCoefficients,
) -> Result<(LossBreakdown, Gradients)> {
    let f = forward(policy, critic, mb)?;
    let (loss, sur, d_pen) = breakdown(policy, &f, mb, coefs)?;
    let b = mb.obs.nrows() as f64;

    // total contains −surrogate, so dL/dlog p = −d_log_prob.
    let weights = sur.d_log_prob.mapv(|d| -d);
    let (d_mu, mut d_log_std) = policy.head.log_prob_grads(f.mu.view(), mb.actions.view(), weights.view())?;
    d_log_std -= coefs.entropy_coef;

    let mut policy_grad = Vec::with_capacity(policy.param_count());
    for (i, net) in policy.nets().iter().enumerate() {
        let row = Array1::from(policy.mask().row(i));
        let mut d_raw = &d_mu * &row;
        if let Some(g) = &d_pen {
            d_raw.scaled_add(coefs.demos_lambda, &g[i]);
        }
        let (grads, _) = net.backward(&f.locals_cache[i], d_raw.view())?;
        grads.write_flat(&mut policy_grad);
    }
    policy_grad.extend(d_log_std.iter());

    let d_v =
        Array2::from_shape_fn((f.values.len(), 1), |(k, _)| coefs.value_coef * 2.0 * (f.values[k] - mb.returns[k]) / b);
    let (cg, _) = critic.backward(&f.critic_cache, d_v.view())?;
    let mut critic_grad = Vec::with_capacity(critic.param_count());
    cg.write_flat(&mut critic_grad);
    Ok((loss, Gradients { policy: policy_grad, critic: critic_grad }))
}

/// Averages over all minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub penalty: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Learning rate after the last adaptation.
    pub lr: f64,
    /// Steps skipped because of non-finite gradients.
    pub skipped: usize,
    /// The update stopped early on a non-finite loss.
    pub aborted: bool,
}

/// PPO epochs over shuffled minibatches with one AdamW over policy and
/// critic parameters. The learning rate follows [`adapt_lr`] using the KL
/// measured on each minibatch before its step.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut DecentralizedPolicy,
    critic: &mut Mlp,
    opt: &mut AdamW,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    demos_lambda: f64,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let coefs = LossCoefficients::from_config(cfg, demos_lambda);
    let n = buffer.len();
    let mb_size = n / cfg.minibatches;
    let mut params = Vec::with_capacity(opt.len());
    policy.write_params(&mut params);
    critic.write_params(&mut params);
    let split = policy.param_count();
    let mut metrics = UpdateMetrics { lr: opt.lr, ..Default::default() };
    let mut count = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb_size).filter(|c| c.len() == mb_size) {
            let mb = buffer.minibatch(chunk);
            let (loss, grads) = ppo_gradients(policy, critic, &mb, &coefs)?;
            if !loss.total.is_finite() {
                metrics.aborted = true;
                break 'epochs;
            }
            opt.lr = adapt_lr(opt.lr, loss.kl, cfg.desired_kl);
            let mut flat = grads.policy;
            flat.extend(grads.critic);
            match opt.step(&mut params, &flat)? {
                StepOutcome::Applied => {
                    policy.read_params(&params[..split])?;
                    critic.read_params(&params[split..])?;
                }
                StepOutcome::SkippedNonFinite => metrics.skipped += 1,
            }
            metrics.surrogate += loss.surrogate;
            metrics.value_loss += loss.value_loss;
            metrics.entropy += loss.entropy;
            metrics.penalty += loss.penalty;
            metrics.kl += loss.kl;
            metrics.clip_fraction += loss.clip_fraction;
            count += 1;
        }
    }
    if count > 0 {
        let c = count as f64;
        metrics.surrogate /= c;
        metrics.value_loss /= c;
        metrics.entropy /= c;
        metrics.penalty /= c;
        metrics.kl /= c;
        metrics.clip_fraction /= c;
    }
    metrics.lr = opt.lr;
    Ok(metrics)
}

/// Rows `rows` of a matrix, in order.
pub(crate) fn gather_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.slice_mut(s![k, ..]).assign(&m.index_axis(Axis(0), r));
    }
    out
}
