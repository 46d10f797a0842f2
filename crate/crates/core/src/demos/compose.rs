use std::collections::BTreeMap;

use super::policy::{DecentralizedPolicy, ScriptedController};
use crate::error::{DemosError, Result};

/// Surviving connection from branch `from` to any motor of `to` outside
/// `from`'s own group.
fn connected(policy: &DecentralizedPolicy, from: usize, to: usize) -> bool {
    let set = policy.branches();
    let own = &set.branches[from];
    set.branches[to].motors.iter().any(|&m| !own.owns(m) && policy.mask().get(from, m))
}

/// Builds a composite policy from branch fragments of `policy` plus scripted
/// replacements. Each fragment keeps its networks and mask untouched; every
/// branch not in a fragment must be replaced. With no fragments, all
/// non-replaced branches form one fragment.
///
/// Fails, naming the edge, if a retained branch still drives motors owned by
/// a branch outside its fragment.
pub fn compose(
    policy: &DecentralizedPolicy,
    fragments: &[Vec<usize>],
    replacements: &BTreeMap<usize, ScriptedController>,
) -> Result<DecentralizedPolicy> {
    let n = policy.branches().len();
    let mut group = vec![None; n];
    for &b in replacements.keys() {
        policy.branches().get(b)?;
        group[b] = Some(usize::MAX - b);
    }
    let implicit: Vec<Vec<usize>>;
    let fragments = if fragments.is_empty() {
        implicit = vec![(0..n).filter(|b| !replacements.contains_key(b)).collect()];
        &implicit[..]
    } else {
        fragments
    };
    for (g, frag) in fragments.iter().enumerate() {
        for &b in frag {
            policy.branches().get(b)?;
            if group[b].is_some() {
                return Err(DemosError::Compose(format!(
                    "B{} appears in more than one fragment or replacement",
                    b + 1
                )));
            }
            group[b] = Some(g);
        }
    }
    if let Some(b) = group.iter().position(Option::is_none) {
        return Err(DemosError::Compose(format!("B{} is neither retained nor replaced", b + 1)));
    }
    for i in 0..n {
        if replacements.contains_key(&i) {
            continue;
        }
        for j in 0..n {
            if group[i] != group[j] && connected(policy, i, j) {
                return Err(DemosError::Compose(format!(
                    "cannot separate B{} from B{}: connection B{}→B{} survived pruning",
                    i + 1,
                    j + 1,
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let mut out = policy.clone();
    for (&b, ctrl) in replacements {
        out.set_replacement(b, *ctrl);
    }
    Ok(out)
}
