use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask::DecouplingMask;
use crate::env::ObservationLayout;
use crate::error::{DemosError, Result};
use crate::kinematics::{Branch, BranchSet};
use crate::nn::{GaussianHead, Mlp};

/// How a policy was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// One local-input/global-output net per branch.
    Demos,
    /// A single net over the full observation.
    Centralized,
    /// One net per branch, fixed block-diagonal mask.
    LocalActors,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Demos => "demos",
            PolicyKind::Centralized => "centralized",
            PolicyKind::LocalActors => "local_actors",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = DemosError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demos" => Ok(PolicyKind::Demos),
            "centralized" => Ok(PolicyKind::Centralized),
            "local_actors" => Ok(PolicyKind::LocalActors),
            other => Err(DemosError::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hand-written controller standing in for a branch network. It only drives
/// the first motor of its own branch and holds the rest at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedController {
    /// PD target fixed at `angle`.
    HoldPose { angle: f64, action_scale: f64 },
    /// PD target `amplitude · sin φ`, read from the clock input.
    Track { amplitude: f64, action_scale: f64 },
}

impl ScriptedController {
    fn write(&self, branch: &Branch, local: ArrayView2<'_, f64>, out: &mut Array2<f64>) {
        let Some(&first) = branch.motors.first() else { return };
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row[first] = match *self {
                ScriptedController::HoldPose { angle, action_scale } => angle / action_scale,
                ScriptedController::Track { amplitude, action_scale } => amplitude * local[[k, 3]] / action_scale,
            };
        }
    }
}

/// Network sizes and initial exploration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyInit {
    pub hidden: Vec<usize>,
    pub init_std: f64,
    pub output_gain: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self { hidden: vec![64, 64], init_std: 1.0, output_gain: 0.01 }
    }
}

/// Output of [`DecentralizedPolicy::act`].
#[derive(Debug, Clone)]
pub struct ActOutput {
    /// Masked per-branch contributions `mask_i ⊙ net_i(o_i)`.
    pub branch_actions: Vec<Array2<f64>>,
    pub mean: Array2<f64>,
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub entropy: f64,
}

/// Branch networks with summed, masked outputs and a shared Gaussian head.
#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedPolicy {
    kind: PolicyKind,
    branches: BranchSet,
    layout: ObservationLayout,
    nets: Vec<Mlp>,
    pub head: GaussianHead,
    mask: DecouplingMask,
    replacements: Vec<Option<ScriptedController>>,
}

impl DecentralizedPolicy {
    /// A DEMOS policy with a full mask over the robot's branches.
    pub fn new<R: Rng + ?Sized>(branches: &BranchSet, init: &PolicyInit, rng: &mut R) -> Result<Self> {
        Self::build(PolicyKind::Demos, branches.clone(), init, rng)
    }

    fn build<R: Rng + ?Sized>(kind: PolicyKind, branches: BranchSet, init: &PolicyInit, rng: &mut R) -> Result<Self> {
        if branches.is_empty() {
            return Err(DemosError::InvalidArgument("policy needs at least one branch".into()));
        }
        if !(init.init_std > 0.0) {
            return Err(DemosError::InvalidArgument("init_std must be positive".into()));
        }
        let layout = ObservationLayout::new(&branches);
        let motors = branches.motor_count();
        let nets = (0..branches.len())
            .map(|i| {
                let mut sizes = vec![layout.local_dim(i)?];
                sizes.extend(&init.hidden);
                sizes.push(motors);
                Ok(Mlp::orthogonal(&sizes, init.output_gain, rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = match kind {
            PolicyKind::LocalActors => DecouplingMask::block_diagonal(&branches),
            _ => DecouplingMask::full(&branches),
        };
        Ok(Self {
            kind,
            replacements: vec![None; branches.len()],
            head: GaussianHead::new(motors, init.init_std),
            branches,
            layout,
            nets,
            mask,
        })
    }

    /// Reassembles a policy from stored parts.
    pub fn from_parts(
        kind: PolicyKind,
        branches: BranchSet,
        nets: Vec<Mlp>,
        head: GaussianHead,
        mask: DecouplingMask,
        replacements: Vec<Option<ScriptedController>>,
    ) -> Result<Self> {
        let layout = ObservationLayout::new(&branches);
        let motors = branches.motor_count();
        if nets.len() != branches.len() || replacements.len() != branches.len() {
            return Err(DemosError::Dimension { expected: branches.len(), got: nets.len() });
        }
        for (i, net) in nets.iter().enumerate() {
            let local = layout.local_dim(i)?;
            if net.input_dim() != local {
                return Err(DemosError::Dimension { expected: local, got: net.input_dim() });
            }
            if net.output_dim() != motors {
                return Err(DemosError::Dimension { expected: motors, got: net.output_dim() });
            }
        }
        if head.dim() != motors {
            return Err(DemosError::Dimension { expected: motors, got: head.dim() });
        }
        mask.validate(&branches)?;
        Ok(Self { kind, branches, layout, nets, head, mask, replacements })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn branches(&self) -> &BranchSet {
        &self.branches
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub fn mask(&self) -> &DecouplingMask {
        &self.mask
    }

    /// Replaces the mask. Fails if it cuts a branch from its own motors or if
    /// the policy's mask is fixed.
    pub fn set_mask(&mut self, mask: DecouplingMask) -> Result<()> {
        mask.validate(&self.branches)?;
        if self.kind == PolicyKind::LocalActors && mask != self.mask {
            return Err(DemosError::InvalidArgument("local_actors masks are fixed".into()));
        }
        self.mask = mask;
        Ok(())
    }

    pub fn replacements(&self) -> &[Option<ScriptedController>] {
        &self.replacements
    }

    pub(crate) fn set_replacement(&mut self, branch: usize, controller: ScriptedController) {
        self.replacements[branch] = Some(controller);
    }

    pub fn motor_count(&self) -> usize {
        self.branches.motor_count()
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.global_dim()
    }

    /// Splits global observations into per-branch local inputs.
    pub fn local_inputs(&self, obs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        (0..self.branches.len()).map(|i| self.layout.slice_local(obs, i)).collect()
    }

    fn check_locals(&self, locals: &[Array2<f64>]) -> Result<usize> {
        if locals.len() != self.branches.len() {
            return Err(DemosError::Dimension { expected: self.branches.len(), got: locals.len() });
        }
        let batch = locals[0].nrows();
        for (i, o) in locals.iter().enumerate() {
            let d = self.layout.local_dim(i)?;
            if o.ncols() != d || o.nrows() != batch {
                return Err(DemosError::Dimension { expected: d, got: o.ncols() });
            }
        }
        Ok(batch)
    }

    /// Unmasked outputs `net_i(o_i)`; replaced branches report their
    /// controller's output.
    pub fn raw_outputs(&self, locals: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let batch = self.check_locals(locals)?;
        (0..self.branches.len())
            .map(|i| match &self.replacements[i] {
                Some(ctrl) => {
                    let mut out = Array2::zeros((batch, self.motor_count()));
                    ctrl.write(&self.branches.branches[i], locals[i].view(), &mut out);
                    Ok(out)
                }
                None => self.nets[i].predict(locals[i].view()),
            })
            .collect()
    }

    /// Applies the mask row of each branch to its raw output in place.
    pub fn apply_mask(&self, raw: &mut [Array2<f64>]) {
        for (i, out) in raw.iter_mut().enumerate() {
            let row = Array1::from(self.mask.row(i));
            *out *= &row;
        }
    }

    /// `μ = Σ_i mask_i ⊙ raw_i`.
    pub fn mean_from_raw(&self, raw: &[Array2<f64>]) -> Array2<f64> {
        let mut mu = Array2::zeros(raw[0].raw_dim());
        for (i, out) in raw.iter().enumerate() {
            let row = Array1::from(self.mask.row(i));
            Zip::from(mu.rows_mut()).and(out.rows()).for_each(|mut m, o| {
                Zip::from(&mut m).and(&o).and(&row).for_each(|m, &o, &k| *m += o * k);
            });
        }
        mu
    }

    /// Masked per-branch contributions.
    pub fn branch_actions(&self, locals: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let mut raw = self.raw_outputs(locals)?;
        self.apply_mask(&mut raw);
        Ok(raw)
    }

    /// Deterministic action `μ` from global observations.
    pub fn mean_action(&self, obs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let raw = self.raw_outputs(&self.local_inputs(obs)?)?;
        Ok(self.mean_from_raw(&raw))
    }

    /// Acts from local observations. With `rng` the action is sampled from
    /// `N(μ, σ²)`; without it the action is `μ`.
    pub fn act<R: Rng + ?Sized>(&self, locals: &[Array2<f64>], rng: Option<&mut R>) -> Result<ActOutput> {
        let branch_actions = self.branch_actions(locals)?;
        let mut mean = Array2::zeros(branch_actions[0].raw_dim());
        for a in &branch_actions {
            mean += a;
        }
        let action = match rng {
            Some(rng) => self.head.sample(mean.view(), rng),
            None => mean.clone(),
        };
        let log_prob = self.head.log_prob(mean.view(), action.view())?;
        Ok(ActOutput { branch_actions, mean, action, log_prob, entropy: self.head.entropy() })
    }

    /// [`Self::act`] on global observations.
    pub fn act_global<R: Rng + ?Sized>(&self, obs: ArrayView2<'_, f64>, rng: Option<&mut R>) -> Result<ActOutput> {
        self.act(&self.local_inputs(obs)?, rng)
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(Mlp::param_count).sum::<usize>() + self.head.dim()
    }

    /// Appends all parameters: each net in branch order, then `log σ`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for net in &self.nets {
            net.write_params(out);
        }
        out.extend(self.head.log_std.iter());
    }

    /// Reads parameters in [`Self::write_params`] order.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let mut off = 0;
        for net in &mut self.nets {
            off += net.read_params(&src[off..])?;
        }
        let d = self.head.dim();
        if src.len() < off + d {
            return Err(DemosError::Dimension { expected: off + d, got: src.len() });
        }
        self.head.log_std.assign(&Array1::from(src[off..off + d].to_vec()));
        Ok(off + d)
    }

    pub fn is_finite(&self) -> bool {
        self.nets.iter().all(Mlp::is_finite) && self.head.log_std.iter().all(|v| v.is_finite())
    }
}

/// Builds a baseline policy over the robot's branch set: `Centralized` uses a
/// single pseudo-branch reading the full observation, `LocalActors` a fixed
/// block-diagonal mask. `Demos` gives the regular decentralized policy.
pub fn make_baseline<R: Rng + ?Sized>(
    kind: PolicyKind,
    branches: &BranchSet,
    init: &PolicyInit,
    rng: &mut R,
) -> Result<DecentralizedPolicy> {
    let set = match kind {
        PolicyKind::Centralized => BranchSet::single(branches.motor_names.clone()),
        _ => branches.clone(),
    };
    DecentralizedPolicy::build(kind, set, init, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kinematics::{extract_branches, KinematicTree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(urdf: &str) -> BranchSet {
        extract_branches(&KinematicTree::from_urdf(urdf).unwrap())
    }

    fn random_obs(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_nets_give_zero_action() {
        let s = set(fixtures::HUMANOID_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = DecentralizedPolicy::new(&s, &PolicyInit::default(), &mut rng).unwrap();
        let zeros = vec![0.0; p.param_count()];
        p.read_params(&zeros).unwrap();
        let out = p.act_global::<ChaCha8Rng>(random_obs(5, 53, 1).view(), None).unwrap();
        assert!(out.mean.iter().all(|v| *v == 0.0));
        assert_eq!(out.action, out.mean);
    }

    #[test]
    fn centralized_baseline_shapes() {
        let s = set(fixtures::QUADRUPED_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = make_baseline(PolicyKind::Centralized, &s, &PolicyInit::default(), &mut rng).unwrap();
        assert_eq!(p.nets().len(), 1);
        assert_eq!(p.nets()[0].input_dim(), 41);
        assert_eq!(p.nets()[0].output_dim(), 12);
    }

    #[test]
    fn single_branch_equals_plain_network() {
        let s = set(fixtures::QUADRUPED_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = make_baseline(PolicyKind::Centralized, &s, &PolicyInit::default(), &mut rng).unwrap();
        let obs = random_obs(7, 41, 2);
        let mu = p.mean_action(obs.view()).unwrap();
        assert_eq!(mu, p.nets()[0].predict(obs.view()).unwrap());
    }

    #[test]
    fn masked_motor_ignores_branch_input() {
        let s = set(fixtures::HUMANOID_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p =
            DecentralizedPolicy::new(&s, &PolicyInit { output_gain: 1.0, ..Default::default() }, &mut rng).unwrap();
        let mut mask = p.mask().clone();
        mask.clear(&s, 1, 6).unwrap();
        p.set_mask(mask).unwrap();
        let obs = random_obs(6, 53, 5);
        let mut locals = p.local_inputs(obs.view()).unwrap();
        let before = p.act::<ChaCha8Rng>(&locals, None).unwrap().mean;
        locals[1].mapv_inplace(|v| v * 7.0 - 3.0);
        let after = p.act::<ChaCha8Rng>(&locals, None).unwrap().mean;
        for r in 0..6 {
            assert_eq!(before[[r, 6]].to_bits(), after[[r, 6]].to_bits());
            assert_ne!(before[[r, 3]], after[[r, 3]]);
        }
    }

    #[test]
    fn local_actor_mask_is_fixed() {
        let s = set(fixtures::HUMANOID_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = make_baseline(PolicyKind::LocalActors, &s, &PolicyInit::default(), &mut rng).unwrap();
        assert_eq!(p.mask(), &DecouplingMask::block_diagonal(&s));
        assert!(p.set_mask(DecouplingMask::full(&s)).is_err());
    }

    #[test]
    fn params_round_trip() {
        let s = set(fixtures::OVERLAP_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = DecentralizedPolicy::new(&s, &PolicyInit::default(), &mut rng).unwrap();
        let mut flat = Vec::new();
        p.write_params(&mut flat);
        assert_eq!(flat.len(), p.param_count());
        let mut q = DecentralizedPolicy::new(&s, &PolicyInit::default(), &mut rng).unwrap();
        assert_ne!(p, q);
        assert_eq!(q.read_params(&flat).unwrap(), flat.len());
        assert_eq!(p, q);
    }

    #[test]
    fn stochastic_log_prob_matches_head() {
        let s = set(fixtures::HUMANOID_URDF);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DecentralizedPolicy::new(&s, &PolicyInit::default(), &mut rng).unwrap();
        let obs = random_obs(4, 53, 8);
        let out = p.act_global(obs.view(), Some(&mut rng)).unwrap();
        assert_ne!(out.action, out.mean);
        let lp = p.head.log_prob(out.mean.view(), out.action.view()).unwrap();
        assert_eq!(lp, out.log_prob);
    }
}
