//! Shared setup for the benchmarks: default-sized networks on the humanoid
//! fixture and a synthetic minibatch.

use demos_core::demos::{DecentralizedPolicy, PolicyInit};
use demos_core::fixtures;
use demos_core::kinematics::{extract_branches, KinematicTree};
use demos_core::nn::Mlp;
use demos_core::training::{Minibatch, TrainConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn humanoid() -> KinematicTree {
    KinematicTree::from_urdf(fixtures::HUMANOID_URDF).expect("fixture parses")
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

/// Policy and critic with the default hidden sizes.
pub fn networks(rng: &mut ChaCha8Rng) -> (DecentralizedPolicy, Mlp) {
    let set = extract_branches(&humanoid());
    let policy = DecentralizedPolicy::new(&set, &PolicyInit::default(), rng).expect("valid init");
    let mut sizes = vec![policy.obs_dim()];
    sizes.extend(TrainConfig::default().critic_hidden);
    sizes.push(1);
    let critic = Mlp::orthogonal(&sizes, 1.0, rng);
    (policy, critic)
}

pub fn observations(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..1.0))
}

/// A default-sized minibatch with actions sampled from `policy`.
pub fn minibatch(policy: &DecentralizedPolicy, rng: &mut ChaCha8Rng) -> Minibatch {
    let cfg = TrainConfig::default();
    let n = cfg.minibatch_size();
    let obs = observations(n, policy.obs_dim(), rng);
    let out = policy.act_global(obs.view(), Some(&mut *rng)).expect("shapes agree");
    Minibatch {
        obs,
        actions: out.action,
        old_log_prob: out.log_prob,
        advantages: Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
        returns: Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
    }
}
