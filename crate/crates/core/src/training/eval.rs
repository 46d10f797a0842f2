use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::DecentralizedPolicy;
use crate::env::{BranchWorld, MalfunctionSpec, RewardTerms};
use crate::error::{DemosError, Result};

/// Returns of deterministic full-length episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
    /// Mean per-episode sum of each reward term.
    pub terms: RewardTerms,
    pub malfunction: Option<MalfunctionSpec>,
}

impl EvalReport {
    /// Balance plus gait: the terms owned by the coordinated legs.
    pub fn leg_terms(&self) -> f64 {
        self.terms.legs()
    }
}

fn check(policy: &DecentralizedPolicy, env: &BranchWorld) -> Result<()> {
    if policy.motor_count() != env.motor_count() || policy.obs_dim() != env.obs_dim() {
        return Err(DemosError::Dimension { expected: env.obs_dim(), got: policy.obs_dim() });
    }
    Ok(())
}

/// Rolls the deterministic policy `a = μ` for one full episode in every env
/// of `env` (one episode per env) and reports the returns.
pub fn evaluate(
    policy: &DecentralizedPolicy,
    env: &mut BranchWorld,
    malfunction: Option<MalfunctionSpec>,
    seed: u64,
) -> Result<EvalReport> {
    check(policy, env)?;
    env.set_malfunction(malfunction)?;
    let n = env.num_envs();
    let mut obs = env.reset(seed);
    let mut returns = vec![0.0; n];
    let mut terms = vec![RewardTerms::default(); n];
    let mut live = vec![true; n];
    for _ in 0..env.config().steps_per_episode() {
        let action = policy.act_global::<ChaCha8Rng>(obs.view(), None)?.action;
        let res = env.step(action.view())?;
        for e in 0..n {
            if live[e] {
                returns[e] += res.reward[e];
                terms[e].add(&res.terms[e]);
                if res.done[e] {
                    live[e] = false;
                }
            }
        }
        obs = res.obs;
    }
    env.set_malfunction(None)?;
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let mut total = RewardTerms::default();
    for t in &terms {
        total.add(t);
    }
    Ok(EvalReport {
        episodes: n,
        mean_return: mean,
        std_return: var.sqrt(),
        returns,
        terms: total.scaled(1.0 / n as f64),
        malfunction,
    })
}

/// Global observations for connection analysis: `warmup` deterministic steps,
/// then `steps` recorded steps from every env of `env`.
pub fn analysis_batch(
    policy: &DecentralizedPolicy,
    env: &mut BranchWorld,
    warmup: usize,
    steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    check(policy, env)?;
    let mut obs = env.reset(seed);
    let mut rows = Vec::with_capacity(steps);
    for k in 0..warmup + steps {
        if k >= warmup {
            rows.push(obs.clone());
        }
        let action = policy.act_global::<ChaCha8Rng>(obs.view(), None)?.action;
        obs = env.step(action.view())?.obs;
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|_| DemosError::InvalidArgument("empty analysis batch".into()))
}
