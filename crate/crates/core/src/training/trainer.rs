use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::config::RunConfig;
use super::eval::{analysis_batch, evaluate, EvalReport};
use super::ppo::{ppo_update, UpdateMetrics};
use crate::demos::{
    apply_branch_decoupling, apply_motor_decoupling, connection_matrix, make_baseline, ConnectionMatrix,
    DecentralizedPolicy, DecoupleReport, DecouplingMask, PolicyKind,
};
use crate::env::{BranchWorld, RewardTerms};
use crate::error::{DemosError, Result};
use crate::kinematics::{extract_branches, BranchSet, KinematicTree};
use crate::nn::{AdamW, Mlp};

/// Seed offset separating evaluation episodes from training ones.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Per-iteration training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean per-step environment reward over the rollout.
    pub mean_reward: f64,
    /// Mean return of episodes finishing in this rollout (NaN if none did).
    pub episode_return: f64,
    pub update: UpdateMetrics,
    /// Mean per-step reward terms.
    pub terms: RewardTerms,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Relative connection matrix measured on one iteration's rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub iteration: usize,
    pub relative: Array2<f64>,
}

/// Outcome of the post-training connection analysis and pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTraining {
    pub connection: ConnectionMatrix,
    pub branch: DecoupleReport,
    pub motor: Option<DecoupleReport>,
    pub mask_before: DecouplingMask,
    pub pre_mask: EvalReport,
    pub post_mask: EvalReport,
}

/// Resolves the effective DEMOS weight: baselines never use the penalty.
pub fn effective_lambda(kind: PolicyKind, lambda: f64) -> f64 {
    match kind {
        PolicyKind::Demos => lambda,
        PolicyKind::Centralized | PolicyKind::LocalActors => 0.0,
    }
}

/// Stateful PPO/DEMOS trainer.
pub struct Trainer {
    pub config: RunConfig,
    pub tree: KinematicTree,
    pub branches: BranchSet,
    pub policy: DecentralizedPolicy,
    pub critic: Mlp,
    pub optimizer: AdamW,
    env: BranchWorld,
    obs: Array2<f64>,
    rng: ChaCha8Rng,
    running_returns: Vec<f64>,
    iteration: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(tree: &KinematicTree, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let branches = extract_branches(tree);
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = make_baseline(config.mode, &branches, &config.policy, &mut init_rng)?;
        let mut sizes = vec![policy.obs_dim()];
        sizes.extend(&config.train.critic_hidden);
        sizes.push(1);
        let critic = Mlp::orthogonal(&sizes, 1.0, &mut init_rng);
        let optimizer = AdamW::new(
            policy.param_count() + critic.param_count(),
            config.train.learning_rate,
            config.train.weight_decay,
        );
        Self::from_parts(tree, config, policy, critic, optimizer, 0)
    }

    /// Resumes from existing networks (fine-tuning or a loaded checkpoint).
    pub fn from_parts(
        tree: &KinematicTree,
        config: &RunConfig,
        policy: DecentralizedPolicy,
        critic: Mlp,
        optimizer: AdamW,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        let branches = extract_branches(tree);
        let mut env = BranchWorld::new(tree, &branches, config.env.clone(), config.train.num_envs)?;
        if policy.obs_dim() != env.obs_dim() || critic.input_dim() != env.obs_dim() || critic.output_dim() != 1 {
            return Err(DemosError::Dimension { expected: env.obs_dim(), got: policy.obs_dim() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        env.reset(config.seed.wrapping_add(iteration as u64));
        env.randomize_progress(&mut rng);
        let obs = env.observe();
        Ok(Self {
            running_returns: vec![0.0; config.train.num_envs],
            config: config.clone(),
            tree: tree.clone(),
            branches,
            policy,
            critic,
            optimizer,
            env,
            obs,
            rng,
            iteration,
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn demos_lambda(&self) -> f64 {
        effective_lambda(self.policy.kind(), self.config.train.demos_lambda)
    }

    /// Collects `steps_per_env` stochastic steps from every env.
    pub fn collect_rollout(&mut self) -> Result<RolloutBuffer> {
        let cfg = &self.config.train;
        let gamma = cfg.gamma;
        let envs = self.env.num_envs();
        let mut buf = RolloutBuffer::new(
            cfg.steps_per_env,
            envs,
            self.env.obs_dim(),
            self.env.motor_count(),
            self.policy.branches().len(),
        );
        for t in 0..cfg.steps_per_env {
            let out = self.policy.act_global(self.obs.view(), Some(&mut self.rng))?;
            let values = self.critic.predict(self.obs.view())?.column(0).to_owned();
            let res = self.env.step(out.action.view())?;
            let mut rewards = &res.reward * cfg.reward_scale;
            buf.env_reward_sum += res.reward.sum();
            for tr in &res.terms {
                buf.term_sums.add(tr);
            }
            let timed_out: Vec<usize> = (0..envs).filter(|&e| res.timeout[e]).collect();
            if !timed_out.is_empty() {
                let rows: Vec<_> = timed_out
                    .iter()
                    .map(|&e| res.terminal_obs[e].as_ref().expect("terminal observation on timeout").view())
                    .collect();
                let stacked = ndarray::stack(Axis(0), &rows).expect("equal lengths");
                let v = self.critic.predict(stacked.view())?;
                for (k, &e) in timed_out.iter().enumerate() {
                    rewards[e] += gamma * v[[k, 0]];
                }
            }
            for e in 0..envs {
                self.running_returns[e] += res.reward[e];
                if res.done[e] {
                    buf.finished_returns.push(self.running_returns[e]);
                    self.running_returns[e] = 0.0;
                }
            }
            buf.store(
                t,
                &self.obs,
                &out.action,
                out.log_prob.view(),
                values.view(),
                rewards.view(),
                &res.done,
                &out.branch_actions,
            )?;
            self.obs = res.obs;
        }
        buf.last_values = self.critic.predict(self.obs.view())?.column(0).to_owned();
        buf.finish(gamma, cfg.gae_lambda)?;
        Ok(buf)
    }

    /// One rollout plus PPO update. Returns the metrics and, when recorded,
    /// the relative connection matrix of the rollout.
    pub fn step(&mut self) -> Result<(IterationMetrics, Option<ConnectionRecord>)> {
        let buf = self.collect_rollout()?;
        let record = if self.policy.kind() != PolicyKind::Centralized
            && self.iteration.is_multiple_of(self.config.train.connection_every)
        {
            let cm =
                ConnectionMatrix::from_outputs(self.policy.branches(), &buf.branch_actions, self.config.train.norm_p)?;
            Some(ConnectionRecord { iteration: self.iteration, relative: cm.relative })
        } else {
            None
        };
        let lambda = self.demos_lambda();
        let update = ppo_update(
            &mut self.policy,
            &mut self.critic,
            &mut self.optimizer,
            &buf,
            &self.config.train,
            lambda,
            &mut self.rng,
        )?;
        let n = buf.len() as f64;
        let episode_return = if buf.finished_returns.is_empty() {
            f64::NAN
        } else {
            buf.finished_returns.iter().sum::<f64>() / buf.finished_returns.len() as f64
        };
        let metrics = IterationMetrics {
            iteration: self.iteration,
            mean_reward: buf.mean_env_reward(),
            episode_return,
            update,
            terms: buf.term_sums.scaled(1.0 / n),
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.iteration += 1;
        Ok((metrics, record))
    }

    /// Fresh env with `envs` copies for evaluation or analysis.
    pub fn make_env(&self, envs: usize) -> Result<BranchWorld> {
        BranchWorld::new(&self.tree, &self.branches, self.config.env.clone(), envs)
    }

    /// Connection matrix on a deterministic post-training batch.
    pub fn analyze(&self, policy: &DecentralizedPolicy) -> Result<ConnectionMatrix> {
        let a = &self.config.analysis;
        let mut env = self.make_env(a.batch_envs)?;
        let obs = analysis_batch(policy, &mut env, a.warmup_steps, a.batch_steps, self.eval_seed())?;
        connection_matrix(policy, &policy.local_inputs(obs.view())?, self.config.train.norm_p)
    }

    pub fn eval_seed(&self) -> u64 {
        self.config.seed.wrapping_add(EVAL_SEED_OFFSET)
    }

    pub fn evaluate(&self, policy: &DecentralizedPolicy) -> Result<EvalReport> {
        let mut env = self.make_env(self.config.analysis.eval_episodes)?;
        evaluate(policy, &mut env, None, self.eval_seed())
    }

    /// Post-training stage: measure connections, prune, and compare
    /// evaluations before and after. Applies the mask to `self.policy`.
    pub fn post_training(&mut self) -> Result<PostTraining> {
        let pre_mask = self.evaluate(&self.policy)?;
        let connection = self.analyze(&self.policy)?;
        let mask_before = self.policy.mask().clone();
        let a = self.config.analysis.clone();
        let branch = apply_branch_decoupling(&mut self.policy, &connection, a.eta)?;
        let motor = if a.motor_level {
            Some(apply_motor_decoupling(&mut self.policy, &connection, a.eta_prime)?)
        } else {
            None
        };
        let post_mask = self.evaluate(&self.policy)?;
        Ok(PostTraining { connection, branch, motor, mask_before, pre_mask, post_mask })
    }
}

/// Full training history of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: DecentralizedPolicy,
    pub critic: Mlp,
    pub history: Vec<IterationMetrics>,
    pub connections: Vec<ConnectionRecord>,
    /// Present for `demos` runs.
    pub post: Option<PostTraining>,
    /// Deterministic evaluation of the final (masked) policy.
    pub final_eval: EvalReport,
}

/// Trains for `config.train.iterations` iterations, calling `on_iteration`
/// after each, then runs the post-training stage for `demos` runs.
pub fn train(
    tree: &KinematicTree,
    config: &RunConfig,
    mut on_iteration: impl FnMut(&Trainer, &IterationMetrics, Option<&ConnectionRecord>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(tree, config)?;
    let mut history = Vec::with_capacity(config.train.iterations);
    let mut connections = Vec::new();
    for _ in 0..config.train.iterations {
        let (m, rec) = trainer.step()?;
        on_iteration(&trainer, &m, rec.as_ref())?;
        history.push(m);
        connections.extend(rec);
    }
    let post = if config.mode == PolicyKind::Demos && config.train.iterations > 0 {
        Some(trainer.post_training()?)
    } else {
        None
    };
    let final_eval = match &post {
        Some(p) => p.post_mask.clone(),
        None => trainer.evaluate(&trainer.policy)?,
    };
    Ok(TrainOutcome { policy: trainer.policy, critic: trainer.critic, history, connections, post, final_eval })
}

/// Mean of `xs` ignoring NaN entries.
pub fn nan_mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
