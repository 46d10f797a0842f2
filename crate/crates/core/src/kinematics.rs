//! Robot description parsing and branch division.
//!
//! A robot is read from a URDF subset into a [`RobotModel`], validated into a
//! [`KinematicTree`], and split into root-to-leaf [`Branch`]es. Motor indices
//! follow a depth-first traversal that visits child joints in file order, so
//! re-parsing the same document always produces the same motor numbering.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DemosError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Continuous,
    Prismatic,
    Fixed,
}

impl JointKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "revolute" => Some(Self::Revolute),
            "continuous" => Some(Self::Continuous),
            "prismatic" => Some(Self::Prismatic),
            "fixed" => Some(Self::Fixed),
            _ => None,
        }
    }

    pub fn is_actuated(self) -> bool {
        self != Self::Fixed
    }
}

impl fmt::Display for JointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Revolute => "revolute",
            Self::Continuous => "continuous",
            Self::Prismatic => "prismatic",
            Self::Fixed => "fixed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    /// Unit rotation/translation axis.
    pub axis: [f64; 3],
    /// Position limits in radians (or meters for prismatic joints). Continuous
    /// joints are unbounded.
    pub lower: f64,
    pub upper: f64,
    pub effort: f64,
    pub velocity: f64,
    /// Rotor inertia from the `inertia` extension attribute on `<dynamics>`.
    pub inertia: Option<f64>,
    /// Viscous damping from `<dynamics damping=...>`.
    pub damping: Option<f64>,
}

/// A parsed robot description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
}

fn xml_line(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn attr_f64(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>, name: &str) -> Result<Option<f64>> {
    match node.attribute(name) {
        None => Ok(None),
        Some(raw) => raw.trim().parse::<f64>().map(Some).map_err(|_| {
            DemosError::Validation(format!("line {}: attribute `{name}` is not a number: {raw:?}", xml_line(doc, node)))
        }),
    }
}

fn child_elem<'a, 'input>(node: roxmltree::Node<'a, 'input>, tag: &str) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.is_element() && c.has_tag_name(tag))
}

/// Parses a URDF document into a validated [`RobotModel`].
///
/// Visual, collision, inertial and other unknown elements are ignored.
pub fn parse_urdf(text: &str) -> Result<RobotModel> {
    let doc =
        roxmltree::Document::parse(text).map_err(|e| DemosError::Xml { line: e.pos().row, message: e.to_string() })?;
    let root = doc.root_element();
    if !root.has_tag_name("robot") {
        return Err(DemosError::Xml {
            line: xml_line(&doc, root),
            message: format!("expected <robot> root element, found <{}>", root.tag_name().name()),
        });
    }
    let name = root.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut joints = Vec::new();
    for node in root.children().filter(|n| n.is_element()) {
        let line = xml_line(&doc, node);
        match node.tag_name().name() {
            "link" => {
                let name = node
                    .attribute("name")
                    .ok_or_else(|| DemosError::Validation(format!("line {line}: <link> without a name")))?;
                links.push(Link { name: name.to_string() });
            }
            "joint" => joints.push(parse_joint(&doc, node)?),
            _ => {}
        }
    }

    let model = RobotModel { name, links, joints };
    model.validate()?;
    Ok(model)
}

fn parse_joint(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> Result<Joint> {
    let line = xml_line(doc, node);
    let name = node
        .attribute("name")
        .ok_or_else(|| DemosError::Validation(format!("line {line}: <joint> without a name")))?
        .to_string();
    let kind_raw = node
        .attribute("type")
        .ok_or_else(|| DemosError::Validation(format!("line {line}: joint `{name}` has no type")))?;
    let kind = JointKind::parse(kind_raw).ok_or_else(|| {
        DemosError::Validation(format!("line {line}: joint `{name}` has unsupported type `{kind_raw}`"))
    })?;
    let link_ref = |tag: &str| -> Result<String> {
        child_elem(node, tag)
            .and_then(|n| n.attribute("link"))
            .map(str::to_string)
            .ok_or_else(|| DemosError::Validation(format!("line {line}: joint `{name}` is missing <{tag} link=...>")))
    };
    let parent = link_ref("parent")?;
    let child = link_ref("child")?;

    let mut axis = [1.0, 0.0, 0.0];
    if let Some(ax) = child_elem(node, "axis").and_then(|n| n.attribute("xyz")) {
        let parts: Vec<f64> = ax
            .split_whitespace()
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| DemosError::Validation(format!("line {line}: bad axis {ax:?}")))?;
        if parts.len() != 3 {
            return Err(DemosError::Validation(format!("line {line}: axis needs 3 components")));
        }
        let norm = parts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(DemosError::Validation(format!("line {line}: joint `{name}` has a zero axis")));
        }
        axis = [parts[0] / norm, parts[1] / norm, parts[2] / norm];
    }

    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut effort, mut velocity) = (f64::INFINITY, f64::INFINITY);
    match child_elem(node, "limit") {
        Some(lim) => {
            effort = attr_f64(doc, lim, "effort")?.unwrap_or(f64::INFINITY);
            velocity = attr_f64(doc, lim, "velocity")?.unwrap_or(f64::INFINITY);
            if matches!(kind, JointKind::Revolute | JointKind::Prismatic) {
                lower = attr_f64(doc, lim, "lower")?.unwrap_or(0.0);
                upper = attr_f64(doc, lim, "upper")?.unwrap_or(0.0);
            }
        }
        None if matches!(kind, JointKind::Revolute | JointKind::Prismatic) => {
            return Err(DemosError::Validation(format!(
                "line {line}: {kind} joint `{name}` requires a <limit> element"
            )));
        }
        None => {}
    }
    if lower > upper {
        return Err(DemosError::Validation(format!("line {line}: joint `{name}` has lower limit above upper limit")));
    }
    if !(effort > 0.0) || !(velocity > 0.0) {
        return Err(DemosError::Validation(format!(
            "line {line}: joint `{name}` needs positive effort and velocity limits"
        )));
    }

    let dynamics = child_elem(node, "dynamics");
    let damping = dynamics.map(|d| attr_f64(doc, d, "damping")).transpose()?.flatten();
    let inertia = dynamics.map(|d| attr_f64(doc, d, "inertia")).transpose()?.flatten();
    if let Some(i) = inertia {
        if !(i > 0.0) {
            return Err(DemosError::Validation(format!("line {line}: joint `{name}` inertia must be > 0")));
        }
    }
    if let Some(d) = damping {
        if d < 0.0 {
            return Err(DemosError::Validation(format!("line {line}: joint `{name}` damping must be >= 0")));
        }
    }

    Ok(Joint { name, kind, parent, child, axis, lower, upper, effort, velocity, inertia, damping })
}

impl RobotModel {
    /// Checks link references, uniqueness, single root and acyclicity.
    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(DemosError::Validation("robot has no links".into()));
        }
        let mut index = HashMap::new();
        for (i, link) in self.links.iter().enumerate() {
            if index.insert(link.name.as_str(), i).is_some() {
                return Err(DemosError::Validation(format!("duplicate link `{}`", link.name)));
            }
        }
        let mut joint_names = BTreeSet::new();
        let mut parent_of: Vec<Option<usize>> = vec![None; self.links.len()];
        for joint in &self.joints {
            if !joint_names.insert(joint.name.as_str()) {
                return Err(DemosError::Validation(format!("duplicate joint `{}`", joint.name)));
            }
            let parent = *index.get(joint.parent.as_str()).ok_or_else(|| {
                DemosError::Validation(format!(
                    "joint `{}` references undeclared parent link `{}`",
                    joint.name, joint.parent
                ))
            })?;
            let child = *index.get(joint.child.as_str()).ok_or_else(|| {
                DemosError::Validation(format!(
                    "joint `{}` references undeclared child link `{}`",
                    joint.name, joint.child
                ))
            })?;
            if parent == child {
                return Err(DemosError::Topology(format!("joint `{}` connects a link to itself", joint.name)));
            }
            if parent_of[child].replace(parent).is_some() {
                return Err(DemosError::Topology(format!("link `{}` has more than one parent joint", joint.child)));
            }
        }
        let roots: Vec<&str> = parent_of
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| self.links[i].name.as_str())
            .collect();
        match roots.len() {
            0 => return Err(DemosError::Topology("kinematic graph has a cycle (no root link)".into())),
            1 => {}
            _ => return Err(DemosError::Topology(format!("multiple root links: {}", roots.join(", ")))),
        }
        // Every link must reach the root by following parents.
        for start in 0..self.links.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent_of[cur] {
                cur = p;
                steps += 1;
                if steps > self.links.len() {
                    return Err(DemosError::Topology(format!("cycle through link `{}`", self.links[start].name)));
                }
            }
        }
        Ok(())
    }

    pub fn actuated_count(&self) -> usize {
        self.joints.iter().filter(|j| j.kind.is_actuated()).count()
    }
}

/// Validated tree view of a [`RobotModel`] with a fixed motor numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    model: RobotModel,
    root: usize,
    child_joints: Vec<Vec<usize>>,
    parent_joint: Vec<Option<usize>>,
    actuated: Vec<usize>,
}

impl KinematicTree {
    pub fn new(model: RobotModel) -> Result<Self> {
        model.validate()?;
        let index: HashMap<&str, usize> = model.links.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        let mut child_joints = vec![Vec::new(); model.links.len()];
        let mut parent_joint = vec![None; model.links.len()];
        for (j, joint) in model.joints.iter().enumerate() {
            child_joints[index[joint.parent.as_str()]].push(j);
            parent_joint[index[joint.child.as_str()]] = Some(j);
        }
        let root = parent_joint.iter().position(Option::is_none).expect("validated single root");

        let mut actuated = Vec::new();
        let mut stack = vec![root];
        while let Some(link) = stack.pop() {
            if let Some(j) = parent_joint[link] {
                if model.joints[j].kind.is_actuated() {
                    actuated.push(j);
                }
            }
            // Reverse so the first child in file order is visited first.
            for &j in child_joints[link].iter().rev() {
                stack.push(index[model.joints[j].child.as_str()]);
            }
        }
        drop(index);
        Ok(Self { model, root, child_joints, parent_joint, actuated })
    }

    pub fn from_urdf(text: &str) -> Result<Self> {
        Self::new(parse_urdf(text)?)
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn root_link(&self) -> &str {
        &self.model.links[self.root].name
    }

    /// Number of edges (joints) in the tree.
    pub fn edge_count(&self) -> usize {
        self.model.joints.len()
    }

    pub fn node_count(&self) -> usize {
        self.model.links.len()
    }

    pub fn motor_count(&self) -> usize {
        self.actuated.len()
    }

    /// Actuated joints in motor order.
    pub fn motors(&self) -> impl Iterator<Item = &Joint> + '_ {
        self.actuated.iter().map(move |&j| &self.model.joints[j])
    }

    pub fn motor_names(&self) -> Vec<String> {
        self.motors().map(|j| j.name.clone()).collect()
    }

    fn link_index(&self, name: &str) -> usize {
        self.model.links.iter().position(|l| l.name == name).expect("link exists")
    }

    /// Leaf links in depth-first order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(link) = stack.pop() {
            if self.child_joints[link].is_empty() {
                out.push(link);
            }
            for &j in self.child_joints[link].iter().rev() {
                stack.push(self.link_index(&self.model.joints[j].child));
            }
        }
        out
    }

    /// Actuated motor indices on the root-to-`link` path, root first.
    fn path_motors(&self, link: usize) -> Vec<usize> {
        let mut motors = Vec::new();
        let mut cur = link;
        while let Some(j) = self.parent_joint[cur] {
            if let Some(m) = self.actuated.iter().position(|&a| a == j) {
                motors.push(m);
            }
            cur = self.link_index(&self.model.joints[j].parent);
        }
        motors.reverse();
        motors
    }
}

/// One root-to-leaf branch and its motor group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Name of the leaf link the branch terminates at.
    pub leaf: String,
    /// Motor indices on the branch, ordered root to leaf.
    pub motors: Vec<usize>,
    /// Motors not on the branch, ascending.
    pub complement: Vec<usize>,
}

impl Branch {
    pub fn owns(&self, motor: usize) -> bool {
        self.motors.contains(&motor)
    }

    /// Label used in reports, numbered from one.
    pub fn label(&self) -> String {
        format!("B{}", self.id + 1)
    }
}

/// The branch decomposition of a robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSet {
    pub branches: Vec<Branch>,
    pub motor_names: Vec<String>,
}

impl BranchSet {
    /// Builds a branch set from explicit motor groups; complements are derived.
    pub fn from_groups(motor_names: Vec<String>, groups: Vec<(String, Vec<usize>)>) -> Result<Self> {
        let motor_count = motor_names.len();
        let mut branches = Vec::with_capacity(groups.len());
        for (id, (leaf, motors)) in groups.into_iter().enumerate() {
            if let Some(&bad) = motors.iter().find(|&&m| m >= motor_count) {
                return Err(DemosError::InvalidMotor { index: bad, count: motor_count });
            }
            let own: BTreeSet<usize> = motors.iter().copied().collect();
            let complement = (0..motor_count).filter(|m| !own.contains(m)).collect();
            branches.push(Branch { id, leaf, motors, complement });
        }
        let set = Self { branches, motor_names };
        for m in 0..motor_count {
            if set.owners(m).next().is_none() {
                return Err(DemosError::Validation(format!("motor `{}` belongs to no branch", set.motor_names[m])));
            }
        }
        Ok(set)
    }

    /// A single pseudo-branch owning every motor.
    pub fn single(motor_names: Vec<String>) -> Self {
        let motors = (0..motor_names.len()).collect();
        Self::from_groups(motor_names, vec![("all".into(), motors)]).expect("covers every motor")
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn motor_count(&self) -> usize {
        self.motor_names.len()
    }

    pub fn get(&self, id: usize) -> Result<&Branch> {
        self.branches.get(id).ok_or(DemosError::InvalidBranch { id, count: self.branches.len() })
    }

    /// Branches whose motor group contains `motor`.
    pub fn owners(&self, motor: usize) -> impl Iterator<Item = &Branch> + '_ {
        self.branches.iter().filter(move |b| b.owns(motor))
    }

    pub fn motor_index(&self, name: &str) -> Option<usize> {
        self.motor_names.iter().position(|n| n == name)
    }

    /// Resolves `B3`-style labels, leaf link names, or zero-based ids.
    pub fn resolve(&self, key: &str) -> Result<usize> {
        let key = key.trim();
        if let Some(b) = self.branches.iter().find(|b| b.leaf == key || b.label() == key) {
            return Ok(b.id);
        }
        key.parse::<usize>()
            .ok()
            .filter(|&id| id < self.len())
            .ok_or_else(|| DemosError::InvalidArgument(format!("unknown branch `{key}`")))
    }

    /// Human-readable report: one line per branch with its joint names.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for b in &self.branches {
            let names: Vec<&str> = b.motors.iter().map(|&m| self.motor_names[m].as_str()).collect();
            out.push_str(&format!("{} ({}): [{}]\n", b.label(), b.leaf, names.join(", ")));
        }
        out
    }
}

/// Divides the tree into one branch per leaf link.
pub fn extract_branches(tree: &KinematicTree) -> BranchSet {
    let groups =
        tree.leaves().into_iter().map(|leaf| (tree.model.links[leaf].name.clone(), tree.path_motors(leaf))).collect();
    BranchSet::from_groups(tree.motor_names(), groups).expect("every actuated joint lies on a root-to-leaf path")
}

/// Motors not on branch `id`.
pub fn complement_motors(branches: &BranchSet, id: usize) -> Result<Vec<usize>> {
    Ok(branches.get(id)?.complement.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn single_link_robot() {
        let tree = KinematicTree::from_urdf(r#"<robot name="r"><link name="base"/></robot>"#).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.edge_count(), 0);
        let set = extract_branches(&tree);
        assert_eq!(set.len(), 1);
        assert!(set.branches[0].motors.is_empty());
        assert!(complement_motors(&set, 0).unwrap().is_empty());
    }

    #[test]
    fn quadruped_has_four_disjoint_branches() {
        let tree = KinematicTree::from_urdf(fixtures::QUADRUPED_URDF).unwrap();
        assert_eq!(tree.node_count(), 13);
        assert_eq!(tree.edge_count(), 12);
        assert_eq!(tree.motor_count(), 12);
        let set = extract_branches(&tree);
        assert_eq!(set.len(), 4);
        for b in &set.branches {
            assert_eq!(b.motors.len(), 3);
        }
        for (i, a) in set.branches.iter().enumerate() {
            for b in &set.branches[i + 1..] {
                assert!(a.motors.iter().all(|m| !b.owns(*m)));
            }
        }
        let comp = complement_motors(&set, 0).unwrap();
        assert_eq!(comp, (3..12).collect::<Vec<_>>());
    }

    #[test]
    fn humanoid_branches() {
        let tree = KinematicTree::from_urdf(fixtures::HUMANOID_URDF).unwrap();
        let set = extract_branches(&tree);
        assert_eq!(set.len(), 4);
        assert_eq!(set.motor_count(), 16);
        let sizes: Vec<usize> = set.branches.iter().map(|b| b.motors.len()).collect();
        assert_eq!(sizes, vec![3, 3, 5, 5]);
        assert_eq!(set.motor_names[set.branches[0].motors[0]], "l_shoulder_pitch");
        assert_eq!(set.motor_names[set.branches[2].motors[0]], "l_hip_pitch");
    }

    #[test]
    fn overlapping_branches_share_trunk() {
        let tree = KinematicTree::from_urdf(fixtures::OVERLAP_URDF).unwrap();
        let set = extract_branches(&tree);
        assert_eq!(set.len(), 2);
        let shared: Vec<usize> = set.branches[0].motors.iter().copied().filter(|m| set.branches[1].owns(*m)).collect();
        assert_eq!(shared, vec![0, 1]);
        let comp = complement_motors(&set, 0).unwrap();
        assert!(!comp.contains(&0) && !comp.contains(&1));
        assert_eq!(comp.len() + set.branches[0].motors.len(), set.motor_count());
    }

    #[test]
    fn undeclared_child_is_validation_error() {
        let text = r#"<robot name="r"><link name="a"/>
            <joint name="j" type="revolute"><parent link="a"/><child link="ghost"/>
            <limit lower="-1" upper="1" effort="1" velocity="1"/></joint></robot>"#;
        assert!(matches!(parse_urdf(text), Err(DemosError::Validation(_))));
    }

    #[test]
    fn malformed_xml_reports_line() {
        let text = "<robot name=\"r\">\n<link name=\"a\">\n</robot>";
        match parse_urdf(text) {
            Err(DemosError::Xml { line, .. }) => assert!(line >= 2),
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn cycles_and_multiple_roots_are_topology_errors() {
        let two_roots = r#"<robot name="r"><link name="a"/><link name="b"/></robot>"#;
        assert!(matches!(parse_urdf(two_roots), Err(DemosError::Topology(_))));

        let cycle = r#"<robot name="r"><link name="root"/><link name="a"/><link name="b"/>
            <joint name="j0" type="fixed"><parent link="root"/><child link="a"/></joint>
            <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
            <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint></robot>"#;
        assert!(matches!(parse_urdf(cycle), Err(DemosError::Topology(_))));

        let loop_only = r#"<robot name="r"><link name="a"/><link name="b"/>
            <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
            <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint></robot>"#;
        assert!(matches!(parse_urdf(loop_only), Err(DemosError::Topology(_))));
    }

    #[test]
    fn fixed_joints_shape_tree_without_motors() {
        let text = r#"<robot name="r"><link name="base"/><link name="a"/><link name="tip"/>
            <joint name="j" type="revolute"><parent link="base"/><child link="a"/>
              <limit lower="-1" upper="1" effort="5" velocity="10"/></joint>
            <joint name="f" type="fixed"><parent link="a"/><child link="tip"/></joint>
            <visual><geometry/></visual></robot>"#;
        let tree = KinematicTree::from_urdf(text).unwrap();
        assert_eq!(tree.edge_count(), 2);
        assert_eq!(tree.motor_count(), 1);
        let set = extract_branches(&tree);
        assert_eq!(set.branches[0].leaf, "tip");
        assert_eq!(set.branches[0].motors, vec![0]);
    }

    #[test]
    fn out_of_range_branch() {
        let tree = KinematicTree::from_urdf(fixtures::QUADRUPED_URDF).unwrap();
        let set = extract_branches(&tree);
        assert!(matches!(complement_motors(&set, 4), Err(DemosError::InvalidBranch { .. })));
    }

    #[test]
    fn resolve_labels() {
        let set = extract_branches(&KinematicTree::from_urdf(fixtures::HUMANOID_URDF).unwrap());
        assert_eq!(set.resolve("B3").unwrap(), 2);
        assert_eq!(set.resolve("r_foot").unwrap(), 3);
        assert_eq!(set.resolve("1").unwrap(), 1);
        assert!(set.resolve("B9").is_err());
    }
}
