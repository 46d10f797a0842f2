//! Binary policy checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset      | size | content                                   |
//! |-------------|------|-------------------------------------------|
//! | 0           | 8    | magic `DEMOSCKP`                          |
//! | 8           | 4    | format version (`u32`, currently 1)       |
//! | 12          | 8    | header length `H` in bytes (`u64`)        |
//! | 20          | H    | UTF-8 JSON header                         |
//! | 20 + H      | 8    | number of parameters `N` (`u64`)          |
//! | 28 + H      | 8 N  | parameters as `f64`, little-endian        |
//!
//! The header carries the robot description and its SHA-256, the branch
//! set, observation layout, network shapes, mask, scripted replacements,
//! the full run configuration, seed, iteration and an optional recorded
//! evaluation. Its `arrays` list names consecutive runs of the parameter
//! block: `branch{i}` for each branch network (per layer: weight row-major
//! `in x out`, then bias), `log_std`, and `critic` when present.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demos::{DecentralizedPolicy, DecouplingMask, PolicyKind, ScriptedController};
use crate::env::{BranchWorld, MalfunctionSpec, ObservationLayout};
use crate::error::{DemosError, Result};
use crate::kinematics::{extract_branches, BranchSet, KinematicTree};
use crate::nn::{GaussianHead, Mlp};
use crate::training::{EvalReport, RunConfig};

pub const MAGIC: &[u8; 8] = b"DEMOSCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Evaluation result stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub episodes: usize,
    pub malfunction: Option<MalfunctionSpec>,
    pub mean_return: f64,
}

impl EvalRecord {
    pub fn from_report(report: &EvalReport, seed: u64) -> Self {
        Self { seed, episodes: report.episodes, malfunction: report.malfunction, mean_return: report.mean_return }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RobotHeader {
    name: String,
    sha256: String,
    urdf: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    robot: RobotHeader,
    kind: PolicyKind,
    branches: BranchSet,
    layout: ObservationLayout,
    mask: DecouplingMask,
    replacements: Vec<Option<ScriptedController>>,
    policy_sizes: Vec<Vec<usize>>,
    critic_sizes: Option<Vec<usize>>,
    run: RunConfig,
    seed: u64,
    iteration: usize,
    eval: Option<EvalRecord>,
    arrays: Vec<ArraySpec>,
}

/// A policy together with everything needed to rebuild its environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub urdf: String,
    pub run: RunConfig,
    pub iteration: usize,
    pub eval: Option<EvalRecord>,
    pub policy: DecentralizedPolicy,
    pub critic: Option<Mlp>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn corrupt(msg: impl Into<String>) -> DemosError {
    DemosError::Checkpoint(msg.into())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated file"))?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

impl Checkpoint {
    pub fn robot_hash(&self) -> String {
        sha256_hex(&self.urdf)
    }

    pub fn tree(&self) -> Result<KinematicTree> {
        KinematicTree::from_urdf(&self.urdf)
    }

    /// Fails unless `urdf` is the robot description the policy was trained on.
    pub fn check_robot(&self, urdf: &str) -> Result<()> {
        let (want, got) = (self.robot_hash(), sha256_hex(urdf));
        if want != got {
            return Err(corrupt(format!("robot description hash {got} does not match checkpoint {want}")));
        }
        Ok(())
    }

    /// A fresh environment with the stored environment configuration.
    pub fn make_env(&self, envs: usize) -> Result<BranchWorld> {
        let tree = self.tree()?;
        BranchWorld::new(&tree, &extract_branches(&tree), self.run.env.clone(), envs)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tree = self.tree()?;
        let policy = &self.policy;
        let mut params = Vec::new();
        let mut arrays = Vec::new();
        for (i, net) in policy.nets().iter().enumerate() {
            let before = params.len();
            net.write_params(&mut params);
            arrays.push(ArraySpec { name: format!("branch{i}"), len: params.len() - before });
        }
        params.extend(policy.head.log_std.iter());
        arrays.push(ArraySpec { name: "log_std".into(), len: policy.head.dim() });
        if let Some(critic) = &self.critic {
            let before = params.len();
            critic.write_params(&mut params);
            arrays.push(ArraySpec { name: "critic".into(), len: params.len() - before });
        }
        let header = Header {
            robot: RobotHeader { name: tree.model().name.clone(), sha256: self.robot_hash(), urdf: self.urdf.clone() },
            kind: policy.kind(),
            branches: policy.branches().clone(),
            layout: policy.layout().clone(),
            mask: policy.mask().clone(),
            replacements: policy.replacements().to_vec(),
            policy_sizes: policy.nets().iter().map(Mlp::sizes).collect(),
            critic_sizes: self.critic.as_ref().map(Mlp::sizes),
            run: self.run.clone(),
            seed: self.run.seed,
            iteration: self.iteration,
            eval: self.eval.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(36 + json.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut at = 0;
        if take(bytes, &mut at, 8)? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes"));
        let json = take(bytes, &mut at, usize::try_from(len).map_err(|_| corrupt("header too large"))?)?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let count = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
        let data = take(bytes, &mut at, count.checked_mul(8).ok_or_else(|| corrupt("parameter count overflow"))?)?;
        if at != bytes.len() {
            return Err(corrupt("trailing bytes after parameters"));
        }
        let params: Vec<f64> =
            data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::from_header(header, &params)
    }

    fn from_header(h: Header, params: &[f64]) -> Result<Self> {
        if sha256_hex(&h.robot.urdf) != h.robot.sha256 {
            return Err(corrupt("robot description does not match its recorded hash"));
        }
        let tree = KinematicTree::from_urdf(&h.robot.urdf)?;
        if h.branches.motor_names != tree.motor_names() {
            return Err(corrupt("branch set does not match the robot's motors"));
        }
        if ObservationLayout::new(&h.branches) != h.layout {
            return Err(corrupt("observation layout does not match the branch set"));
        }
        if h.arrays.iter().map(|a| a.len).sum::<usize>() != params.len() {
            return Err(corrupt("array lengths do not add up to the parameter count"));
        }
        let mut at = 0;
        let mut next = |name: &str| -> Result<&[f64]> {
            let spec =
                h.arrays.iter().find(|a| a.name == name).ok_or_else(|| corrupt(format!("missing array `{name}`")))?;
            let start: usize = h.arrays.iter().take_while(|a| a.name != name).map(|a| a.len).sum();
            if start != at {
                return Err(corrupt(format!("array `{name}` is out of order")));
            }
            at += spec.len;
            Ok(&params[start..start + spec.len])
        };
        let mut nets = Vec::with_capacity(h.policy_sizes.len());
        for (i, sizes) in h.policy_sizes.iter().enumerate() {
            nets.push(read_mlp(sizes, next(&format!("branch{i}"))?)?);
        }
        let log_std = next("log_std")?;
        let head = GaussianHead { log_std: log_std.to_vec().into() };
        let critic = match &h.critic_sizes {
            Some(sizes) => Some(read_mlp(sizes, next("critic")?)?),
            None => None,
        };
        let policy = DecentralizedPolicy::from_parts(h.kind, h.branches, nets, head, h.mask, h.replacements)?;
        Ok(Self { urdf: h.robot.urdf, run: h.run, iteration: h.iteration, eval: h.eval, policy, critic })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_mlp(sizes: &[usize], params: &[f64]) -> Result<Mlp> {
    if sizes.len() < 2 {
        return Err(corrupt("network needs at least two layer sizes"));
    }
    let mut net = Mlp::zeros(sizes);
    if net.param_count() != params.len() {
        return Err(DemosError::Dimension { expected: net.param_count(), got: params.len() });
    }
    net.read_params(params)?;
    Ok(net)
}
