use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DemosError, Result};
use crate::kinematics::BranchSet;

/// Boolean `n × |A|` matrix; entry `(i, m)` allows branch `i` to drive motor `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecouplingMask {
    branches: usize,
    motors: usize,
    bits: Vec<bool>,
}

/// One cleared `(branch, motor)` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEdit {
    pub branch: usize,
    pub motor: usize,
}

impl DecouplingMask {
    /// Every branch may drive every motor.
    pub fn full(set: &BranchSet) -> Self {
        Self { branches: set.len(), motors: set.motor_count(), bits: vec![true; set.len() * set.motor_count()] }
    }

    /// Each branch drives only its own motors.
    pub fn block_diagonal(set: &BranchSet) -> Self {
        let mut mask = Self::full(set);
        for b in &set.branches {
            for &m in &b.complement {
                mask.bits[b.id * mask.motors + m] = false;
            }
        }
        mask
    }

    pub fn from_bits(set: &BranchSet, bits: Vec<bool>) -> Result<Self> {
        let expected = set.len() * set.motor_count();
        if bits.len() != expected {
            return Err(DemosError::Dimension { expected, got: bits.len() });
        }
        let mask = Self { branches: set.len(), motors: set.motor_count(), bits };
        mask.validate(set)?;
        Ok(mask)
    }

    pub fn validate(&self, set: &BranchSet) -> Result<()> {
        if self.branches != set.len() || self.motors != set.motor_count() {
            return Err(DemosError::Dimension { expected: set.len() * set.motor_count(), got: self.bits.len() });
        }
        for b in &set.branches {
            if let Some(&m) = b.motors.iter().find(|&&m| !self.get(b.id, m)) {
                return Err(DemosError::Validation(format!(
                    "{} is cut from its own motor `{}`",
                    b.label(),
                    set.motor_names[m]
                )));
            }
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        self.branches
    }

    pub fn motor_count(&self) -> usize {
        self.motors
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, branch: usize, motor: usize) -> bool {
        self.bits[branch * self.motors + motor]
    }

    /// Clears `(branch, motor)` unless the branch owns the motor. Returns
    /// whether the entry changed.
    pub fn clear(&mut self, set: &BranchSet, branch: usize, motor: usize) -> Result<bool> {
        let b = set.get(branch)?;
        if motor >= self.motors {
            return Err(DemosError::InvalidMotor { index: motor, count: self.motors });
        }
        if b.owns(motor) {
            return Ok(false);
        }
        let bit = &mut self.bits[branch * self.motors + motor];
        let changed = *bit;
        *bit = false;
        Ok(changed)
    }

    /// Mask row of branch `i` as 0/1 floats.
    pub fn row(&self, branch: usize) -> Vec<f64> {
        self.bits[branch * self.motors..(branch + 1) * self.motors].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.branches, self.motors), |(i, m)| if self.get(i, m) { 1.0 } else { 0.0 })
    }

    /// Entries allowed here but cleared in `other`.
    pub fn diff(&self, other: &DecouplingMask) -> Vec<MaskEdit> {
        let mut out = Vec::new();
        for i in 0..self.branches {
            for m in 0..self.motors {
                if self.get(i, m) && !other.get(i, m) {
                    out.push(MaskEdit { branch: i, motor: m });
                }
            }
        }
        out
    }

    /// Human-readable report: per branch, the foreign motors it may still drive
    /// and the ones that were cut.
    pub fn report(&self, set: &BranchSet) -> String {
        let mut out = String::new();
        for b in &set.branches {
            let (kept, cut): (Vec<usize>, Vec<usize>) = b.complement.iter().partition(|&&m| self.get(b.id, m));
            let names = |v: &[usize]| v.iter().map(|&m| set.motor_names[m].as_str()).collect::<Vec<_>>().join(", ");
            out.push_str(&format!("{} ({}): {} own motors\n", b.label(), b.leaf, b.motors.len()));
            out.push_str(&format!("  drives foreign: [{}]\n", names(&kept)));
            out.push_str(&format!("  pruned:         [{}]\n", names(&cut)));
        }
        out
    }
}
