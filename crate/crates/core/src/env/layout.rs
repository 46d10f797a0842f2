use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DemosError, Result};
use crate::kinematics::BranchSet;

/// Size of the shared root segment: projected gravity (3) + clock (2).
pub const ROOT_DIM: usize = 5;

/// Global observation schema and per-branch local slices.
///
/// Global order: projected gravity (3), clock sin/cos (2), joint positions,
/// joint velocities, last actions. A branch sees the root segment plus the
/// position, velocity and last-action entries of its own motors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    motors: usize,
    slices: Vec<Vec<usize>>,
}

impl ObservationLayout {
    pub fn new(branches: &BranchSet) -> Self {
        let motors = branches.motor_count();
        let slices = branches
            .branches
            .iter()
            .map(|b| {
                let mut idx: Vec<usize> = (0..ROOT_DIM).collect();
                for seg in 0..3 {
                    idx.extend(b.motors.iter().map(|m| ROOT_DIM + seg * motors + m));
                }
                idx
            })
            .collect();
        Self { motors, slices }
    }

    pub fn motor_count(&self) -> usize {
        self.motors
    }

    pub fn branch_count(&self) -> usize {
        self.slices.len()
    }

    pub fn global_dim(&self) -> usize {
        ROOT_DIM + 3 * self.motors
    }

    pub fn gravity(&self) -> Range<usize> {
        0..3
    }

    pub fn clock(&self) -> Range<usize> {
        3..5
    }

    pub fn positions(&self) -> Range<usize> {
        ROOT_DIM..ROOT_DIM + self.motors
    }

    pub fn velocities(&self) -> Range<usize> {
        ROOT_DIM + self.motors..ROOT_DIM + 2 * self.motors
    }

    pub fn last_actions(&self) -> Range<usize> {
        ROOT_DIM + 2 * self.motors..ROOT_DIM + 3 * self.motors
    }

    /// Global indices read by branch `i`.
    pub fn slice_indices(&self, i: usize) -> Result<&[usize]> {
        self.slices.get(i).map(Vec::as_slice).ok_or(DemosError::InvalidBranch { id: i, count: self.slices.len() })
    }

    pub fn local_dim(&self, i: usize) -> Result<usize> {
        Ok(self.slice_indices(i)?.len())
    }

    /// Extracts branch `i`'s local observations from a batch of global ones.
    pub fn slice_local(&self, obs: ArrayView2<'_, f64>, i: usize) -> Result<Array2<f64>> {
        if obs.ncols() != self.global_dim() {
            return Err(DemosError::Dimension { expected: self.global_dim(), got: obs.ncols() });
        }
        Ok(obs.select(Axis(1), self.slice_indices(i)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kinematics::{extract_branches, KinematicTree};
    use ndarray::Array1;

    fn layout(urdf: &str) -> ObservationLayout {
        ObservationLayout::new(&extract_branches(&KinematicTree::from_urdf(urdf).unwrap()))
    }

    #[test]
    fn global_dims() {
        assert_eq!(layout(fixtures::QUADRUPED_URDF).global_dim(), 41);
        assert_eq!(layout(fixtures::HUMANOID_URDF).global_dim(), 53);
        let names: Vec<String> = (0..15).map(|i| format!("m{i}")).collect();
        assert_eq!(ObservationLayout::new(&BranchSet::single(names)).global_dim(), 50);
    }

    #[test]
    fn arm_slice_is_fourteen_wide() {
        let l = layout(fixtures::HUMANOID_URDF);
        assert_eq!(l.local_dim(0).unwrap(), 14);
        assert_eq!(l.local_dim(2).unwrap(), 20);
        assert!(l.local_dim(4).is_err());
    }

    #[test]
    fn disjoint_slices_reconstruct_global() {
        let l = layout(fixtures::HUMANOID_URDF);
        let obs = Array1::from_iter((0..l.global_dim()).map(|v| v as f64 * 0.5 - 3.0));
        let batch = obs.clone().insert_axis(Axis(0));
        let mut rebuilt = vec![f64::NAN; l.global_dim()];
        for i in 0..l.branch_count() {
            let local = l.slice_local(batch.view(), i).unwrap();
            for (k, &g) in l.slice_indices(i).unwrap().iter().enumerate() {
                if k < ROOT_DIM && i > 0 {
                    assert_eq!(local[[0, k]], rebuilt[g]);
                }
                rebuilt[g] = local[[0, k]];
            }
        }
        assert_eq!(Array1::from(rebuilt), obs);
    }
}
