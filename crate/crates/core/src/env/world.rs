use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::layout::ObservationLayout;
use super::reward::{clock_phase, reward_terms, RewardTerms, TaskRoles};
use crate::error::{DemosError, Result};
use crate::kinematics::{BranchSet, KinematicTree};

/// Reward assigned when a policy emits a non-finite action.
pub const FAILURE_REWARD: f64 = -1.0;

/// Per-motor physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub lower: f64,
    pub upper: f64,
    pub effort: f64,
    pub velocity: f64,
    pub inertia: f64,
    pub damping: f64,
}

impl JointParams {
    pub fn from_tree(tree: &KinematicTree, config: &EnvConfig) -> Vec<Self> {
        tree.motors()
            .map(|j| JointParams {
                lower: j.lower,
                upper: j.upper,
                effort: j.effort,
                velocity: j.velocity,
                inertia: j.inertia.unwrap_or(config.default_inertia),
                damping: j.damping.unwrap_or(config.default_damping),
            })
            .collect()
    }
}

/// PD torque `k_p (target − q) − k_d q̇`, clamped to `±effort`.
#[inline]
pub fn pd_torque(q: f64, qd: f64, target: f64, kp: f64, kd: f64, effort: f64) -> f64 {
    (kp * (target - q) - kd * qd).clamp(-effort, effort)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MalfunctionKind {
    /// Gaussian noise (std, rad) on the motor's sensed position and velocity.
    Noise { std: f64 },
    /// Motor frozen at `angle` with its torque ignored.
    Stuck { angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MalfunctionSpec {
    pub motor: usize,
    pub kind: MalfunctionKind,
}

impl MalfunctionSpec {
    pub fn validate(&self, joints: &[JointParams]) -> Result<()> {
        let j = joints.get(self.motor).ok_or(DemosError::InvalidMotor { index: self.motor, count: joints.len() })?;
        match self.kind {
            MalfunctionKind::Noise { std } if !(std >= 0.0) || !std.is_finite() => {
                Err(DemosError::InvalidArgument(format!("noise std must be >= 0, got {std}")))
            }
            MalfunctionKind::Stuck { angle } if !(angle >= j.lower && angle <= j.upper) => {
                Err(DemosError::InvalidArgument(format!(
                    "stuck angle {angle} outside joint limits [{}, {}]",
                    j.lower, j.upper
                )))
            }
            _ => Ok(()),
        }
    }

    /// Parses `kind:motor_name:level`, e.g. `stuck:l_shoulder_pitch:0.3`.
    pub fn parse(text: &str, motor_names: &[String]) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let [kind, motor, level] = parts.as_slice() else {
            return Err(DemosError::InvalidArgument(format!(
                "malfunction `{text}` is not of the form kind:motor:level"
            )));
        };
        let motor = motor_names
            .iter()
            .position(|n| n == motor)
            .or_else(|| motor.parse::<usize>().ok().filter(|&m| m < motor_names.len()))
            .ok_or_else(|| DemosError::InvalidArgument(format!("unknown motor `{motor}`")))?;
        let level: f64 =
            level.parse().map_err(|_| DemosError::InvalidArgument(format!("bad malfunction level `{level}`")))?;
        let kind = match *kind {
            "noise" => MalfunctionKind::Noise { std: level },
            "stuck" => MalfunctionKind::Stuck { angle: level },
            other => return Err(DemosError::InvalidArgument(format!("unknown malfunction kind `{other}`"))),
        };
        Ok(Self { motor, kind })
    }

    pub fn stuck_angle(&self) -> Option<f64> {
        match self.kind {
            MalfunctionKind::Stuck { angle } => Some(angle),
            MalfunctionKind::Noise { .. } => None,
        }
    }
}

/// Constant torque applied to one joint for a whole episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub motor: usize,
    pub torque: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// Observations after the step (already reset for finished envs).
    pub obs: Array2<f64>,
    pub reward: Array1<f64>,
    pub terms: Vec<RewardTerms>,
    pub done: Vec<bool>,
    /// Episode ended by the time limit rather than failure.
    pub timeout: Vec<bool>,
    /// Final observation of every env that finished this step.
    pub terminal_obs: Vec<Option<Array1<f64>>>,
}

/// Vectorized, seedable BranchWorld: independent PD-driven joints, a hidden
/// per-episode push on one hip of the coordinated pair, and a cross-leg
/// balance reward.
#[derive(Debug, Clone)]
pub struct BranchWorld {
    config: EnvConfig,
    roles: TaskRoles,
    joints: Vec<JointParams>,
    layout: ObservationLayout,
    envs: usize,
    motors: usize,
    q: Vec<f64>,
    qd: Vec<f64>,
    last_action: Vec<f64>,
    steps: Vec<usize>,
    disturbance: Vec<Disturbance>,
    malfunction: Option<MalfunctionSpec>,
    rngs: Vec<ChaCha8Rng>,
    noise_rngs: Vec<ChaCha8Rng>,
}

fn derive_roles(branches: &BranchSet, config: &EnvConfig) -> Result<TaskRoles> {
    let n = branches.len();
    let pair = match config.coordinated_pair {
        Some(p) => p,
        None if n >= 2 => [n - 2, n - 1],
        None => return Err(DemosError::Config("BranchWorld needs at least two branches".into())),
    };
    if pair[0] == pair[1] {
        return Err(DemosError::Config("coordinated pair must name two different branches".into()));
    }
    let first_motor = |id: usize| -> Result<usize> {
        branches
            .get(id)?
            .motors
            .first()
            .copied()
            .ok_or_else(|| DemosError::Config(format!("coordinated branch B{} has no motors", id + 1)))
    };
    let hips = [first_motor(pair[0])?, first_motor(pair[1])?];
    let swing = branches
        .branches
        .iter()
        .filter(|b| !pair.contains(&b.id))
        .filter_map(|b| b.motors.first().map(|&m| (b.id, m)))
        .collect();
    Ok(TaskRoles { pair, hips, swing })
}

impl BranchWorld {
    pub fn new(tree: &KinematicTree, branches: &BranchSet, config: EnvConfig, envs: usize) -> Result<Self> {
        config.validate()?;
        if envs == 0 {
            return Err(DemosError::Config("need at least one environment".into()));
        }
        let joints = JointParams::from_tree(tree, &config);
        if joints.len() != branches.motor_count() {
            return Err(DemosError::Dimension { expected: joints.len(), got: branches.motor_count() });
        }
        let roles = derive_roles(branches, &config)?;
        let motors = joints.len();
        let mut world = Self {
            layout: ObservationLayout::new(branches),
            config,
            roles,
            joints,
            envs,
            motors,
            q: vec![0.0; envs * motors],
            qd: vec![0.0; envs * motors],
            last_action: vec![0.0; envs * motors],
            steps: vec![0; envs],
            disturbance: vec![Disturbance::default(); envs],
            malfunction: None,
            rngs: Vec::new(),
            noise_rngs: Vec::new(),
        };
        world.reseed(0);
        Ok(world)
    }

    fn reseed(&mut self, seed: u64) {
        self.rngs = (0..self.envs)
            .map(|e| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(2 * e as u64);
                r
            })
            .collect();
        self.noise_rngs = (0..self.envs)
            .map(|e| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(2 * e as u64 + 1);
                r
            })
            .collect();
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn roles(&self) -> &TaskRoles {
        &self.roles
    }

    pub fn joints(&self) -> &[JointParams] {
        &self.joints
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn num_envs(&self) -> usize {
        self.envs
    }

    pub fn motor_count(&self) -> usize {
        self.motors
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.global_dim()
    }

    pub fn q(&self, env: usize) -> &[f64] {
        &self.q[env * self.motors..(env + 1) * self.motors]
    }

    pub fn qd(&self, env: usize) -> &[f64] {
        &self.qd[env * self.motors..(env + 1) * self.motors]
    }

    pub fn last_action(&self, env: usize) -> &[f64] {
        &self.last_action[env * self.motors..(env + 1) * self.motors]
    }

    pub fn time(&self, env: usize) -> f64 {
        self.steps[env] as f64 * self.config.policy_dt()
    }

    pub fn disturbance(&self, env: usize) -> Disturbance {
        self.disturbance[env]
    }

    pub fn set_disturbance(&mut self, env: usize, d: Disturbance) -> Result<()> {
        if d.motor >= self.motors {
            return Err(DemosError::InvalidMotor { index: d.motor, count: self.motors });
        }
        self.disturbance[env] = d;
        Ok(())
    }

    /// Overwrites one env's joint state; stuck motors keep their angle.
    pub fn set_joint_state(&mut self, env: usize, q: &[f64], qd: &[f64]) -> Result<()> {
        if q.len() != self.motors || qd.len() != self.motors {
            return Err(DemosError::Dimension { expected: self.motors, got: q.len().min(qd.len()) });
        }
        let base = env * self.motors;
        self.q[base..base + self.motors].copy_from_slice(q);
        self.qd[base..base + self.motors].copy_from_slice(qd);
        self.apply_stuck(env);
        Ok(())
    }

    pub fn malfunction(&self) -> Option<MalfunctionSpec> {
        self.malfunction
    }

    pub fn set_malfunction(&mut self, spec: Option<MalfunctionSpec>) -> Result<()> {
        if let Some(s) = &spec {
            s.validate(&self.joints)?;
        }
        self.malfunction = spec;
        for e in 0..self.envs {
            self.apply_stuck(e);
        }
        Ok(())
    }

    fn apply_stuck(&mut self, env: usize) {
        if let Some(angle) = self.malfunction.and_then(|m| m.stuck_angle()) {
            let i = env * self.motors + self.malfunction.unwrap().motor;
            self.q[i] = angle;
            self.qd[i] = 0.0;
        }
    }

    /// Resets every env from `seed` and returns the initial observations.
    pub fn reset(&mut self, seed: u64) -> Array2<f64> {
        self.reseed(seed);
        for e in 0..self.envs {
            self.reset_env(e);
        }
        self.observe()
    }

    fn reset_env(&mut self, env: usize) {
        let base = env * self.motors;
        let rng = &mut self.rngs[env];
        for m in 0..self.motors {
            let j = &self.joints[m];
            let noise = self.config.init_noise;
            let v = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            self.q[base + m] = v.clamp(j.lower, j.upper);
            self.qd[base + m] = 0.0;
            self.last_action[base + m] = 0.0;
        }
        let side: usize = rng.random_range(0..2);
        let u: f64 = rng.random_range(-1.0..=1.0);
        self.disturbance[env] = Disturbance { motor: self.roles.hips[side], torque: u * self.config.disturbance_max };
        self.steps[env] = 0;
        self.apply_stuck(env);
    }

    /// Spreads envs uniformly over the episode so clock phases and episode
    /// ends are decorrelated across the batch.
    pub fn randomize_progress<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let len = self.config.steps_per_episode();
        for s in &mut self.steps {
            *s = rng.random_range(0..len);
        }
    }

    fn write_observation(&mut self, env: usize, out: &mut [f64]) {
        let m = self.motors;
        let base = env * m;
        let phase = clock_phase(&self.config, self.time(env));
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -1.0;
        out[3] = phase.sin();
        out[4] = phase.cos();
        let pos = self.layout.positions();
        let vel = self.layout.velocities();
        let last = self.layout.last_actions();
        out[pos.clone()].copy_from_slice(&self.q[base..base + m]);
        out[vel.clone()].copy_from_slice(&self.qd[base..base + m]);
        out[last].copy_from_slice(&self.last_action[base..base + m]);
        if let Some(MalfunctionSpec { motor, kind: crate::env::MalfunctionKind::Noise { std } }) = self.malfunction {
            if std > 0.0 {
                let rng = &mut self.noise_rngs[env];
                let zp: f64 = rng.sample(StandardNormal);
                let zv: f64 = rng.sample(StandardNormal);
                out[pos.start + motor] += std * zp;
                out[vel.start + motor] += std * zv;
            }
        }
        let scale = self.config.velocity_obs_scale;
        out[vel].iter_mut().for_each(|v| *v *= scale);
    }

    /// Global observations for every env.
    pub fn observe(&mut self) -> Array2<f64> {
        let mut obs = Array2::zeros((self.envs, self.obs_dim()));
        for e in 0..self.envs {
            let mut row = obs.row_mut(e);
            let slice = row.as_slice_mut().expect("standard layout");
            self.write_observation(e, slice);
        }
        obs
    }

    /// Runs `substeps` semi-implicit Euler steps of
    /// `I q̈ = τ_PD + τ_disturbance − d q̇` toward the given PD targets.
    pub fn integrate(&mut self, env: usize, targets: &[f64], substeps: usize) {
        let dt = self.config.sim_dt();
        let (kp, kd) = (self.config.kp, self.config.kd);
        let base = env * self.motors;
        let stuck = self.malfunction.and_then(|s| s.stuck_angle().map(|_| s.motor));
        let dist = self.disturbance[env];
        for _ in 0..substeps {
            for (m, &target) in targets.iter().enumerate().take(self.motors) {
                if stuck == Some(m) {
                    continue;
                }
                let j = &self.joints[m];
                let i = base + m;
                let (q, qd) = (self.q[i], self.qd[i]);
                let mut tau = pd_torque(q, qd, target, kp, kd, j.effort) - j.damping * qd;
                if dist.motor == m {
                    tau += dist.torque;
                }
                let mut v = (qd + tau / j.inertia * dt).clamp(-j.velocity, j.velocity);
                let mut p = q + v * dt;
                if p < j.lower {
                    p = j.lower;
                    v = v.max(0.0);
                } else if p > j.upper {
                    p = j.upper;
                    v = v.min(0.0);
                }
                self.q[i] = p;
                self.qd[i] = v;
            }
        }
    }

    /// Advances every env by one policy step.
    pub fn step(&mut self, actions: ArrayView2<'_, f64>) -> Result<StepResult> {
        if actions.nrows() != self.envs || actions.ncols() != self.motors {
            return Err(DemosError::Dimension {
                expected: self.envs * self.motors,
                got: actions.nrows() * actions.ncols(),
            });
        }
        let m = self.motors;
        let episode = self.config.steps_per_episode();
        let mut reward = Array1::zeros(self.envs);
        let mut terms = vec![RewardTerms::default(); self.envs];
        let mut done = vec![false; self.envs];
        let mut timeout = vec![false; self.envs];
        let mut terminal_obs = vec![None; self.envs];
        let mut targets = vec![0.0; m];
        for e in 0..self.envs {
            let row = actions.row(e);
            let action: Vec<f64> = row.iter().copied().collect();
            if action.iter().any(|a| !a.is_finite()) {
                reward[e] = FAILURE_REWARD;
                done[e] = true;
                let mut o = vec![0.0; self.obs_dim()];
                self.write_observation(e, &mut o);
                terminal_obs[e] = Some(Array1::from(o));
                self.reset_env(e);
                continue;
            }
            for (t, a) in targets.iter_mut().zip(&action) {
                *t = a * self.config.action_scale;
            }
            self.integrate(e, &targets, self.config.substeps);
            self.steps[e] += 1;
            let base = e * m;
            let tr = reward_terms(
                &self.config,
                &self.roles,
                &self.q[base..base + m],
                self.time(e),
                &action,
                &self.last_action[base..base + m],
            );
            self.last_action[base..base + m].copy_from_slice(&action);
            reward[e] = tr.total();
            terms[e] = tr;
            if self.steps[e] >= episode {
                done[e] = true;
                timeout[e] = true;
                let mut o = vec![0.0; self.obs_dim()];
                self.write_observation(e, &mut o);
                terminal_obs[e] = Some(Array1::from(o));
                self.reset_env(e);
            }
        }
        let obs = self.observe();
        Ok(StepResult { obs, reward, terms, done, timeout, terminal_obs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MalfunctionKind;
    use crate::fixtures;
    use crate::kinematics::extract_branches;

    fn humanoid(envs: usize, config: EnvConfig) -> BranchWorld {
        let tree = KinematicTree::from_urdf(fixtures::HUMANOID_URDF).unwrap();
        let branches = extract_branches(&tree);
        BranchWorld::new(&tree, &branches, config, envs).unwrap()
    }

    #[test]
    fn pd_torque_examples() {
        assert_eq!(pd_torque(0.0, 0.0, 1.0, 40.0, 1.0, 100.0), 40.0);
        assert_eq!(pd_torque(0.7, 0.0, 0.7, 40.0, 1.0, 100.0), 0.0);
        assert_eq!(pd_torque(0.0, 40.0, 1.0, 40.0, 1.0, 100.0), 0.0);
        assert_eq!(pd_torque(0.0, 0.0, 1.0, 40.0, 1.0, 6.0), 6.0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = humanoid(8, EnvConfig::default());
        let mut b = humanoid(8, EnvConfig::default());
        assert_eq!(a.reset(0), b.reset(0));
        assert_ne!(a.reset(1), b.reset(0));
    }

    #[test]
    fn reset_observation_contents() {
        let mut w = humanoid(4, EnvConfig::default());
        let obs = w.reset(3);
        for e in 0..4 {
            assert_eq!(obs[[e, 2]], -1.0);
            assert_eq!((obs[[e, 3]], obs[[e, 4]]), (0.0, 1.0));
            assert!(w.q(e).iter().all(|q| q.abs() <= 0.1));
            assert!(w.qd(e).iter().all(|v| *v == 0.0));
            let d = w.disturbance(e);
            assert!(w.roles().hips.contains(&d.motor));
            assert!(d.torque.abs() <= 12.0);
        }
        assert_eq!(obs.ncols(), 53);
    }

    #[test]
    fn zero_disturbance_max() {
        let mut w = humanoid(16, EnvConfig { disturbance_max: 0.0, ..EnvConfig::default() });
        w.reset(5);
        assert!((0..16).all(|e| w.disturbance(e).torque == 0.0));
    }

    #[test]
    fn zero_action_equilibrium() {
        let cfg = EnvConfig { disturbance_max: 0.0, init_noise: 0.0, ..EnvConfig::default() };
        let mut w = humanoid(1, cfg);
        w.reset(0);
        let zeros = Array2::zeros((1, 16));
        for _ in 0..10 {
            let r = w.step(zeros.view()).unwrap();
            assert!(w.q(0).iter().all(|q| *q == 0.0));
            assert_eq!(r.terms[0].balance, 1.0);
        }
    }

    #[test]
    fn stuck_motor_never_moves() {
        let mut w = humanoid(2, EnvConfig::default());
        w.reset(0);
        w.set_malfunction(Some(MalfunctionSpec { motor: 0, kind: MalfunctionKind::Stuck { angle: 0.3 } })).unwrap();
        let acts = Array2::from_elem((2, 16), 2.0);
        for _ in 0..20 {
            w.step(acts.view()).unwrap();
            assert_eq!(w.q(0)[0], 0.3);
            assert_eq!(w.q(1)[0], 0.3);
        }
    }

    #[test]
    fn stuck_angle_outside_limits_rejected() {
        let mut w = humanoid(1, EnvConfig::default());
        let bad = MalfunctionSpec { motor: 6, kind: MalfunctionKind::Stuck { angle: 2.0 } };
        assert!(w.set_malfunction(Some(bad)).is_err());
        let bad = MalfunctionSpec { motor: 99, kind: MalfunctionKind::Noise { std: 0.1 } };
        assert!(w.set_malfunction(Some(bad)).is_err());
    }

    #[test]
    fn noise_touches_only_two_entries() {
        let mut clean = humanoid(3, EnvConfig::default());
        let mut noisy = humanoid(3, EnvConfig::default());
        let spec = MalfunctionSpec { motor: 4, kind: MalfunctionKind::Noise { std: 0.2 } };
        noisy.set_malfunction(Some(spec)).unwrap();
        let a = clean.reset(2);
        let b = noisy.reset(2);
        let l = clean.layout().clone();
        for e in 0..3 {
            for c in 0..a.ncols() {
                let touched = c == l.positions().start + 4 || c == l.velocities().start + 4;
                assert_eq!(a[[e, c]] != b[[e, c]], touched, "env {e} col {c}");
            }
        }
        // Dynamics are unaffected.
        let acts = Array2::from_elem((3, 16), 0.3);
        clean.step(acts.view()).unwrap();
        noisy.step(acts.view()).unwrap();
        for e in 0..3 {
            assert_eq!(clean.q(e), noisy.q(e));
        }
    }

    #[test]
    fn zero_noise_is_clean() {
        let mut clean = humanoid(2, EnvConfig::default());
        let mut noisy = humanoid(2, EnvConfig::default());
        noisy.set_malfunction(Some(MalfunctionSpec { motor: 1, kind: MalfunctionKind::Noise { std: 0.0 } })).unwrap();
        assert_eq!(clean.reset(4), noisy.reset(4));
    }

    #[test]
    fn rejects_bad_action_shape_and_flags_non_finite() {
        let mut w = humanoid(2, EnvConfig::default());
        w.reset(0);
        assert!(w.step(Array2::zeros((2, 15)).view()).is_err());
        let mut acts = Array2::zeros((2, 16));
        acts[[1, 3]] = f64::NAN;
        let r = w.step(acts.view()).unwrap();
        assert!(r.done[1] && !r.timeout[1]);
        assert_eq!(r.reward[1], FAILURE_REWARD);
        assert!(!r.done[0]);
    }

    #[test]
    fn episode_times_out_after_twenty_seconds() {
        let mut w = humanoid(1, EnvConfig::default());
        w.reset(0);
        let zeros = Array2::zeros((1, 16));
        for k in 1..=1000 {
            let r = w.step(zeros.view()).unwrap();
            assert_eq!(r.done[0], k == 1000);
            if k == 1000 {
                assert!(r.timeout[0]);
                let term = r.terminal_obs[0].as_ref().unwrap();
                // Terminal clock at t = 20 s, new episode back at t = 0.
                assert!((term[3] - (2.0 * std::f64::consts::PI * 20.0).sin()).abs() < 1e-9);
                assert_eq!(r.obs[[0, 4]], 1.0);
            }
        }
    }

    #[test]
    fn limits_hold_under_large_targets() {
        let mut w = humanoid(2, EnvConfig::default());
        w.reset(1);
        let acts = Array2::from_elem((2, 16), 50.0);
        for _ in 0..100 {
            w.step(acts.view()).unwrap();
            for e in 0..2 {
                for (m, j) in w.joints().iter().enumerate() {
                    assert!(w.q(e)[m] >= j.lower && w.q(e)[m] <= j.upper);
                    assert!(w.qd(e)[m].abs() <= j.velocity);
                }
            }
        }
    }

    #[test]
    fn parse_malfunction_grammar() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let s = MalfunctionSpec::parse("stuck:b:0.3", &names).unwrap();
        assert_eq!(s, MalfunctionSpec { motor: 1, kind: MalfunctionKind::Stuck { angle: 0.3 } });
        assert!(MalfunctionSpec::parse("noise:c:0.1", &names).is_err());
        assert!(MalfunctionSpec::parse("melt:a:0.1", &names).is_err());
        assert!(MalfunctionSpec::parse("noise:a", &names).is_err());
    }

    #[test]
    fn constant_action_follows_second_order_solution() {
        let cfg = EnvConfig { disturbance_max: 0.0, init_noise: 0.0, ..EnvConfig::default() };
        let mut w = humanoid(1, cfg.clone());
        w.reset(0);
        let (i, d) = (w.joints()[0].inertia, w.joints()[0].damping);
        let target = 0.4 * cfg.action_scale;
        // I q'' + (kd + d) q' + kp q = kp target, q(0) = q'(0) = 0.
        let wn = (cfg.kp / i).sqrt();
        let zeta = (cfg.kd + d) / (2.0 * (cfg.kp * i).sqrt());
        assert!(zeta < 1.0);
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let exact =
            |t: f64| target * (1.0 - (-zeta * wn * t).exp() * ((wd * t).cos() + zeta * wn / wd * (wd * t).sin()));
        let mut acts = Array2::zeros((1, 16));
        acts[[0, 0]] = 0.4;
        let mut overshoot = false;
        for k in 1..=100 {
            w.step(acts.view()).unwrap();
            let t = k as f64 * cfg.policy_dt();
            let q = w.q(0)[0];
            // Semi-implicit Euler error is O(ωn·dt) = O(0.02) relative.
            assert!((q - exact(t)).abs() < 2e-2 * target, "t={t}: {q} vs {}", exact(t));
            overshoot |= q > target;
            assert!(w.q(0)[1..].iter().all(|v| *v == 0.0));
        }
        assert!(overshoot, "underdamped response should overshoot");
        assert!((w.q(0)[0] - target).abs() < 1e-6);
    }

    #[test]
    fn first_substep_disturbance_is_local() {
        let cfg = EnvConfig { disturbance_max: 0.0, init_noise: 0.0, ..EnvConfig::default() };
        let mut pushed = humanoid(1, cfg.clone());
        let mut calm = humanoid(1, cfg.clone());
        pushed.reset(0);
        calm.reset(0);
        let hip = pushed.roles().hips[0];
        pushed.set_disturbance(0, Disturbance { motor: hip, torque: 5.0 }).unwrap();
        let zeros = vec![0.0; 16];
        pushed.integrate(0, &zeros, 1);
        calm.integrate(0, &zeros, 1);
        // One semi-implicit Euler substep from rest: q = dt² τ / I.
        let dt = cfg.sim_dt();
        let expected = dt * dt * 5.0 / pushed.joints()[hip].inertia;
        assert!((pushed.q(0)[hip] - expected).abs() < 1e-15);
        let a = pushed.observe();
        let b = calm.observe();
        let layout = pushed.layout().clone();
        let [left, right] = pushed.roles().pair;
        assert_ne!(layout.slice_local(a.view(), left).unwrap(), layout.slice_local(b.view(), left).unwrap());
        for br in (0..4).filter(|&br| br != left) {
            assert_eq!(layout.slice_local(a.view(), br).unwrap(), layout.slice_local(b.view(), br).unwrap());
        }
        assert_ne!(left, right);
    }

    #[test]
    fn reward_matches_scalar_formula() {
        let cfg = EnvConfig::default();
        let w = humanoid(1, cfg.clone());
        let roles = w.roles().clone();
        let mut q = vec![0.0; 16];
        q[roles.hips[0]] = 0.7;
        q[roles.hips[1]] = 0.3;
        q[0] = 0.2;
        q[3] = -0.1;
        let t = 0.13;
        let action: Vec<f64> = (0..16).map(|k| 0.05 * k as f64 - 0.3).collect();
        let last: Vec<f64> = (0..16).map(|k| 0.02 * k as f64).collect();
        let r = reward_terms(&cfg, &roles, &q, t, &action, &last);

        let phi = 2.0 * std::f64::consts::PI * t;
        let b: f64 = 1.0;
        let mut expected = (-b * b).exp();
        expected += 0.5 * (-(0.7 - 0.5 * phi.sin()).powi(2)).exp();
        expected += 0.5 * (-(0.3 - 0.5 * (phi + std::f64::consts::PI).sin()).powi(2)).exp();
        expected += 0.25 * (-(0.2 - 0.5 * phi.sin()).powi(2)).exp();
        expected += 0.25 * (-(-0.1 - 0.5 * phi.sin()).powi(2)).exp();
        let mut a2 = 0.0;
        let mut s2 = 0.0;
        for k in 0..16 {
            a2 += action[k] * action[k];
            s2 += (action[k] - last[k]) * (action[k] - last[k]);
        }
        expected -= 1e-3 * a2 + 1e-2 * s2;
        assert!((r.total() - expected).abs() < 1e-12, "{} vs {expected}", r.total());
    }

    #[test]
    fn perfect_tracking_reward_is_maximal() {
        let cfg = EnvConfig::default();
        let w = humanoid(1, cfg.clone());
        let roles = w.roles().clone();
        let q = vec![0.0; 16];
        let zeros = vec![0.0; 16];
        // At t = 0 every sine target is 0, so all exponentials sit at 1.
        let r = reward_terms(&cfg, &roles, &q, 0.0, &zeros, &zeros);
        assert!((r.total() - (1.0 + 0.5 * 2.0 + 0.25 * 2.0)).abs() < 1e-12);
        let mut far = q.clone();
        far[roles.hips[0]] = 40.0;
        let r = reward_terms(&cfg, &roles, &far, 0.0, &zeros, &zeros);
        assert!(r.balance < 1e-300);
    }
}
