//! Kinematic tree definition, pose/camera parameter vectors, and their
//! validation and packing.
//!
//! The skeleton is a single-rooted tree of named joints. Four joints play a
//! special role and must exist by name: `pelvis` (the root, pinned at the
//! origin), `neck` (pinned on the +z axis at the trunk-chain length) and
//! `left_hip`/`right_hip` (placed by the trunk-to-hip-line angle). Every
//! other non-root joint consumes one unit direction vector from
//! [`LocalKinematicParams`], in depth-first order from the pelvis.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm tolerance for a direction vector to count as unit length.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Below this norm a direction block is considered degenerate.
pub const ZERO_NORM_TOL: f64 = 1e-12;
/// Renormalization beyond this deviation is reported to the caller.
pub const RENORM_REPORT_TOL: f64 = 1e-6;

const EMBEDDED_H36M_TREE: &str = include_str!("../data/h36m_tree.json");

/// One joint of a [`KinematicTree`]: bone from `parent` to this joint.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Bone length in canonical units; unused for the root.
    pub length: f64,
    /// Unit rest direction of the bone in the canonical frame.
    pub rest_offset: Vector3<f64>,
}

/// Indices of the joints placed by the canonical root rule.
#[derive(Debug, Clone, Copy)]
pub struct RuleJoints {
    pub pelvis: usize,
    pub neck: usize,
    pub left_hip: usize,
    pub right_hip: usize,
}

/// Immutable, validated skeleton: connectivity, canonical bone lengths,
/// left/right mirror map and affinity-map limb list.
#[derive(Debug, Clone)]
pub struct KinematicTree {
    joints: Vec<Joint>,
    mirror: Vec<usize>,
    limbs: Vec<(usize, usize)>,
    topo: Vec<usize>,
    directed: Vec<usize>,
    directed_slot: Vec<Option<usize>>,
    rule: RuleJoints,
}

/// On-disk tree description (JSON). Joints reference parents by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeConfig {
    #[serde(default)]
    pub version: u32,
    pub joints: Vec<JointConfig>,
    pub mirror_pairs: Vec<(String, String)>,
    pub limbs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointConfig {
    pub name: String,
    pub parent: Option<String>,
    pub length: f64,
    pub rest_offset: [f64; 3],
}

/// A single violated tree invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeViolation {
    #[error("duplicate joint name `{0}`")]
    DuplicateJointName(String),
    #[error("joint `{joint}` references unknown parent `{parent}`")]
    UnknownParent { joint: String, parent: String },
    #[error("cycle through joints {0:?}")]
    Cycle(Vec<String>),
    #[error("expected exactly one root joint, found {0:?}")]
    RootCount(Vec<String>),
    #[error("root joint must be `pelvis`, found `{0}`")]
    RootNotPelvis(String),
    #[error("required joint `{0}` is missing")]
    MissingRuleJoint(String),
    #[error("non-root joint `{0}` has non-positive bone length")]
    NonPositiveBoneLength(String),
    #[error("joint `{0}` has a near-zero rest offset")]
    ZeroRestOffset(String),
    #[error("mirror pair references unknown joint `{0}`")]
    UnknownMirrorJoint(String),
    #[error("joint `{0}` appears in more than one mirror pair")]
    DuplicateMirrorEntry(String),
    #[error("limb references unknown joint `{0}`")]
    UnknownLimbJoint(String),
}

/// Outcome of [`TreeConfig::validate`]: pass, or the list of violations.
#[derive(Debug, Clone, Default)]
pub struct TreeValidation {
    pub violations: Vec<TreeViolation>,
}

impl TreeValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid tree config: {0:?}")]
    Invalid(Vec<TreeViolation>),
    #[error("failed to parse tree config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read tree config: {0}")]
    Io(#[from] std::io::Error),
}

impl TreeConfig {
    pub fn from_json_str(json: &str) -> Result<Self, TreeError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self, TreeError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> TreeValidation {
        let mut v = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, j) in self.joints.iter().enumerate() {
            if index.insert(j.name.as_str(), i).is_some() {
                v.push(TreeViolation::DuplicateJointName(j.name.clone()));
            }
        }

        let mut roots = Vec::new();
        let mut parent_idx: Vec<Option<usize>> = vec![None; self.joints.len()];
        for (i, j) in self.joints.iter().enumerate() {
            match &j.parent {
                None => roots.push(j.name.clone()),
                Some(p) => match index.get(p.as_str()) {
                    Some(&pi) => parent_idx[i] = Some(pi),
                    None => v.push(TreeViolation::UnknownParent {
                        joint: j.name.clone(),
                        parent: p.clone(),
                    }),
                },
            }
            if j.parent.is_some() && j.length <= 0.0 {
                v.push(TreeViolation::NonPositiveBoneLength(j.name.clone()));
            }
            let n = Vector3::from(j.rest_offset).norm();
            if !n.is_finite() || n < ZERO_NORM_TOL {
                v.push(TreeViolation::ZeroRestOffset(j.name.clone()));
            }
        }

        if roots.len() != 1 {
            v.push(TreeViolation::RootCount(roots.clone()));
        } else if roots[0] != "pelvis" {
            v.push(TreeViolation::RootNotPelvis(roots[0].clone()));
        }
        for required in ["pelvis", "neck", "left_hip", "right_hip"] {
            if !index.contains_key(required) {
                v.push(TreeViolation::MissingRuleJoint(required.to_string()));
            }
        }

        if let Some(stuck) = topological_order(&parent_idx).err() {
            let names = stuck.iter().map(|&i| self.joints[i].name.clone()).collect();
            v.push(TreeViolation::Cycle(names));
        }

        let mut seen = vec![false; self.joints.len()];
        for (a, b) in &self.mirror_pairs {
            for name in [a, b] {
                match index.get(name.as_str()) {
                    Some(&i) => {
                        if seen[i] {
                            v.push(TreeViolation::DuplicateMirrorEntry(name.clone()));
                        }
                        seen[i] = true;
                    }
                    None => v.push(TreeViolation::UnknownMirrorJoint(name.clone())),
                }
            }
        }
        for (a, b) in &self.limbs {
            for name in [a, b] {
                if !index.contains_key(name.as_str()) {
                    v.push(TreeViolation::UnknownLimbJoint(name.clone()));
                }
            }
        }

        TreeValidation { violations: v }
    }
}

/// Kahn's algorithm over parent pointers. Returns the visit order (parents
/// before children) or the set of joints stuck on a cycle.
fn topological_order(parent: &[Option<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = parent.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut stack = Vec::new();
    for (i, p) in parent.iter().enumerate() {
        match p {
            Some(pi) if *pi < n => children[*pi].push(i),
            Some(_) => {}
            None => stack.push(i),
        }
    }
    // Children are pushed in reverse so lower joint indices pop first,
    // making the order a deterministic depth-first traversal.
    let mut visited = vec![false; n];
    while let Some(i) = stack.pop() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        order.push(i);
        for &c in children[i].iter().rev() {
            stack.push(c);
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| !visited[i]).collect())
    }
}

impl KinematicTree {
    /// Builds a validated tree from a config; all violations are reported.
    pub fn from_config(config: &TreeConfig) -> Result<Self, TreeError> {
        let report = config.validate();
        if !report.is_valid() {
            return Err(TreeError::Invalid(report.violations));
        }

        let index: BTreeMap<&str, usize> = config
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.as_str(), i))
            .collect();
        let joints: Vec<Joint> = config
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                parent: j.parent.as_ref().map(|p| index[p.as_str()]),
                length: j.length,
                rest_offset: Vector3::from(j.rest_offset).normalize(),
            })
            .collect();

        let mut mirror: Vec<usize> = (0..joints.len()).collect();
        for (a, b) in &config.mirror_pairs {
            let (ia, ib) = (index[a.as_str()], index[b.as_str()]);
            mirror[ia] = ib;
            mirror[ib] = ia;
        }
        let limbs: Vec<(usize, usize)> = config
            .limbs
            .iter()
            .map(|(a, b)| (index[a.as_str()], index[b.as_str()]))
            .collect();

        let parent_idx: Vec<Option<usize>> = joints.iter().map(|j| j.parent).collect();
        let topo = topological_order(&parent_idx).expect("validated tree is acyclic");

        let rule = RuleJoints {
            pelvis: index["pelvis"],
            neck: index["neck"],
            left_hip: index["left_hip"],
            right_hip: index["right_hip"],
        };

        let is_rule_placed = |i: usize| {
            i == rule.pelvis || i == rule.neck || i == rule.left_hip || i == rule.right_hip
        };
        let directed: Vec<usize> = topo
            .iter()
            .copied()
            .filter(|&i| !is_rule_placed(i))
            .collect();
        let mut directed_slot = vec![None; joints.len()];
        for (slot, &j) in directed.iter().enumerate() {
            directed_slot[j] = Some(slot);
        }

        Ok(Self {
            joints,
            mirror,
            limbs,
            topo,
            directed,
            directed_slot,
            rule,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, TreeError> {
        Self::from_config(&TreeConfig::from_json_str(json)?)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self, TreeError> {
        Self::from_config(&TreeConfig::from_json_file(path)?)
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.joints[i].name
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    pub fn bone_length(&self, i: usize) -> f64 {
        self.joints[i].length
    }

    pub fn rest_offset(&self, i: usize) -> Vector3<f64> {
        self.joints[i].rest_offset
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn mirror(&self, i: usize) -> usize {
        self.mirror[i]
    }

    pub fn mirror_map(&self) -> &[usize] {
        &self.mirror
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    /// Depth-first visit order from the pelvis; parents precede children.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Joints that consume a direction vector, in depth-first order. This is
    /// the packing order of [`LocalKinematicParams::bone_dirs`].
    pub fn directed_joints(&self) -> &[usize] {
        &self.directed
    }

    /// Position of joint `i` inside the packed direction blocks, if any.
    pub fn directed_slot(&self, i: usize) -> Option<usize> {
        self.directed_slot[i]
    }

    pub fn rule_joints(&self) -> RuleJoints {
        self.rule
    }

    pub fn is_rule_placed(&self, i: usize) -> bool {
        let r = self.rule;
        i == r.pelvis || i == r.neck || i == r.left_hip || i == r.right_hip
    }

    /// Length of the pelvis-to-neck chain (the canonical trunk).
    pub fn trunk_length(&self) -> f64 {
        let mut len = 0.0;
        let mut at = self.rule.neck;
        while let Some(p) = self.joints[at].parent {
            len += self.joints[at].length;
            at = p;
        }
        len
    }

    /// Packed parameter-vector length: 1 angle + 3 per directed joint.
    pub fn packed_len(&self) -> usize {
        1 + 3 * self.directed.len()
    }

    /// Re-validates the built tree (always passes for trees produced by
    /// [`KinematicTree::from_config`]).
    pub fn validate(&self) -> TreeValidation {
        self.to_config().validate()
    }

    pub fn to_config(&self) -> TreeConfig {
        TreeConfig {
            version: 1,
            joints: self
                .joints
                .iter()
                .map(|j| JointConfig {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| self.joints[p].name.clone()),
                    length: j.length,
                    rest_offset: [j.rest_offset.x, j.rest_offset.y, j.rest_offset.z],
                })
                .collect(),
            mirror_pairs: self
                .mirror
                .iter()
                .enumerate()
                .filter(|&(i, &m)| i < m)
                .map(|(i, &m)| (self.joints[i].name.clone(), self.joints[m].name.clone()))
                .collect(),
            limbs: self
                .limbs
                .iter()
                .map(|&(a, b)| (self.joints[a].name.clone(), self.joints[b].name.clone()))
                .collect(),
        }
    }
}

/// The 17-joint Human3.6M skeleton shipped with the library: canonical
/// bone-length ratios (trunk chain = 1.0), left/right mirror map and the
/// 16 tree-edge limbs.
pub fn default_h36m_tree() -> KinematicTree {
    KinematicTree::from_json_str(EMBEDDED_H36M_TREE).expect("embedded tree config is valid")
}

/// Raw JSON of the shipped tree config, for writing out or overriding.
pub fn default_h36m_tree_json() -> &'static str {
    EMBEDDED_H36M_TREE
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("packed vector has length {got}, expected 1 + 3k")]
    BadPackedLength { got: usize },
    #[error("direction count {got} does not match tree ({expected})")]
    DirectionCount { got: usize, expected: usize },
    #[error("direction block {block} has near-zero norm")]
    ZeroNormDirection { block: usize },
    #[error("direction block {block} is not unit length (norm {norm})")]
    NotUnit { block: usize, norm: f64 },
    #[error("non-finite value in parameters")]
    NonFinite,
}

/// Local kinematic parameters: one trunk-to-hip-line angle plus one unit
/// direction per directed joint (13 for the default tree, packing to R^40).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalKinematicParams {
    pub trunk_hipline_angle: f64,
    pub bone_dirs: Vec<Vector3<f64>>,
}

impl LocalKinematicParams {
    /// Validating constructor: every direction must already be unit length.
    pub fn new(trunk_hipline_angle: f64, bone_dirs: Vec<Vector3<f64>>) -> Result<Self, ParamError> {
        if !trunk_hipline_angle.is_finite() {
            return Err(ParamError::NonFinite);
        }
        for (block, d) in bone_dirs.iter().enumerate() {
            let n = d.norm();
            if !n.is_finite() {
                return Err(ParamError::NonFinite);
            }
            if n < ZERO_NORM_TOL {
                return Err(ParamError::ZeroNormDirection { block });
            }
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(ParamError::NotUnit { block, norm: n });
            }
        }
        Ok(Self {
            trunk_hipline_angle,
            bone_dirs,
        })
    }

    /// The canonical rest pose of a tree: zero angle, all directions at
    /// their rest offsets.
    pub fn rest_pose(tree: &KinematicTree) -> Self {
        Self {
            trunk_hipline_angle: 0.0,
            bone_dirs: tree
                .directed_joints()
                .iter()
                .map(|&j| tree.rest_offset(j))
                .collect(),
        }
    }

    pub fn dir_count(&self) -> usize {
        self.bone_dirs.len()
    }

    /// Flat layout: `[angle, d0.x, d0.y, d0.z, d1.x, ...]`.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 3 * self.bone_dirs.len());
        out.push(self.trunk_hipline_angle);
        for d in &self.bone_dirs {
            out.extend_from_slice(&[d.x, d.y, d.z]);
        }
        out
    }

    /// Inverse of [`pack`](Self::pack). Direction blocks are renormalized to
    /// unit length; the returned flag is true when any block deviated from
    /// unit norm by more than [`RENORM_REPORT_TOL`]. Blocks already unit
    /// within [`UNIT_NORM_TOL`] are passed through bit-for-bit.
    pub fn unpack(values: &[f64]) -> Result<(Self, bool), ParamError> {
        if values.is_empty() || (values.len() - 1) % 3 != 0 {
            return Err(ParamError::BadPackedLength { got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite);
        }
        let angle = values[0];
        let mut dirs = Vec::with_capacity((values.len() - 1) / 3);
        let mut renormalized = false;
        for (block, chunk) in values[1..].chunks_exact(3).enumerate() {
            let d = Vector3::new(chunk[0], chunk[1], chunk[2]);
            let n = d.norm();
            if n < ZERO_NORM_TOL {
                return Err(ParamError::ZeroNormDirection { block });
            }
            if (n - 1.0).abs() > RENORM_REPORT_TOL {
                renormalized = true;
            }
            let d = if (n - 1.0).abs() > UNIT_NORM_TOL {
                d / n
            } else {
                d
            };
            dirs.push(d);
        }
        Ok((
            Self {
                trunk_hipline_angle: angle,
                bone_dirs: dirs,
            },
            renormalized,
        ))
    }

    /// Builds params from a flat vector without validation or
    /// renormalization; direction blocks are consumed as free vectors.
    /// Intended for finite-difference probes and optimizer internals.
    pub fn from_packed_raw(values: &[f64]) -> Self {
        let angle = values[0];
        let dirs = values[1..]
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self {
            trunk_hipline_angle: angle,
            bone_dirs: dirs,
        }
    }
}

/// Camera extrinsics: three rotation angles, each as an unnormalized
/// (sin, cos) pair, plus a translation in canonical units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    /// Per axis x, y, z: the (sin, cos) pair. Normalized to the unit circle
    /// on use; each pair must satisfy sin^2 + cos^2 > 1e-12.
    pub angles_sincos: [[f64; 2]; 3],
    pub translation: Vector3<f64>,
}

impl CameraParams {
    pub fn from_angles(alpha: f64, beta: f64, gamma: f64, translation: Vector3<f64>) -> Self {
        Self {
            angles_sincos: [
                [alpha.sin(), alpha.cos()],
                [beta.sin(), beta.cos()],
                [gamma.sin(), gamma.cos()],
            ],
            translation,
        }
    }

    /// Flat layout `[sx, cx, sy, cy, sz, cz, tx, ty, tz]`.
    pub fn pack(&self) -> [f64; 9] {
        let a = &self.angles_sincos;
        let t = &self.translation;
        [
            a[0][0], a[0][1], a[1][0], a[1][1], a[2][0], a[2][1], t.x, t.y, t.z,
        ]
    }

    pub fn from_packed(v: &[f64; 9]) -> Self {
        Self {
            angles_sincos: [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]],
            translation: Vector3::new(v[6], v[7], v[8]),
        }
    }
}

impl Default for CameraParams {
    /// Identity rotation, subject 5 canonical units in front of the camera.
    fn default() -> Self {
        Self {
            angles_sincos: [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]],
            translation: Vector3::new(0.0, 0.0, 5.0),
        }
    }
}

/// 3D joint positions in the canonical frame (pelvis at the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: Vec<Vector3<f64>>,
}

impl Pose3D {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
}

/// 2D landmarks in normalized image coordinates. Values outside [0, 1]^2
/// are permitted; [`Landmarks2D::out_of_frame`] flags them.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    pub points: Vec<nalgebra::Vector2<f64>>,
}

impl Landmarks2D {
    pub fn joint_count(&self) -> usize {
        self.points.len()
    }

    /// Indices of landmarks outside the unit square.
    pub fn out_of_frame(&self) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y))
            .map(|(i, _)| i)
            .collect()
    }

    /// Landmarks flattened as `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_tree_has_17_joints_and_16_limbs() {
        let tree = default_h36m_tree();
        assert_eq!(tree.joint_count(), 17);
        assert_eq!(tree.limb_count(), 16);
        assert_eq!(tree.packed_len(), 40);
        assert_eq!(tree.directed_joints().len(), 13);
    }

    #[test]
    fn default_tree_mirror_pairs() {
        let tree = default_h36m_tree();
        let lh = tree.index_of("left_hip").unwrap();
        let rh = tree.index_of("right_hip").unwrap();
        let pelvis = tree.index_of("pelvis").unwrap();
        assert_eq!(tree.mirror(lh), rh);
        assert_eq!(tree.mirror(rh), lh);
        assert_eq!(tree.mirror(pelvis), pelvis);
        for j in 0..tree.joint_count() {
            assert_eq!(
                tree.mirror(tree.mirror(j)),
                j,
                "mirror must be an involution"
            );
        }
    }

    #[test]
    fn default_tree_validates() {
        let tree = default_h36m_tree();
        assert!(tree.validate().is_valid());
    }

    #[test]
    fn topological_order_visits_parents_first() {
        let tree = default_h36m_tree();
        let order = tree.topological_order();
        assert_eq!(order.len(), tree.joint_count());
        let mut pos = vec![0usize; tree.joint_count()];
        for (k, &j) in order.iter().enumerate() {
            pos[j] = k;
        }
        for j in 0..tree.joint_count() {
            if let Some(p) = tree.parent(j) {
                assert!(
                    pos[p] < pos[j],
                    "parent of {} must come first",
                    tree.name(j)
                );
            }
        }
    }

    #[test]
    fn self_parent_is_a_cycle_violation() {
        let mut config = TreeConfig::from_json_str(default_h36m_tree_json()).unwrap();
        let name = config.joints[3].name.clone();
        config.joints[3].parent = Some(name);
        let report = config.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, TreeViolation::Cycle(_))));
    }

    #[test]
    fn zero_bone_length_is_a_violation() {
        let mut config = TreeConfig::from_json_str(default_h36m_tree_json()).unwrap();
        config.joints[5].length = 0.0;
        let report = config.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, TreeViolation::NonPositiveBoneLength(_))));
    }

    #[test]
    fn trunk_length_is_spine_plus_neck() {
        let tree = default_h36m_tree();
        let spine = tree.index_of("spine").unwrap();
        let neck = tree.index_of("neck").unwrap();
        let expect = tree.bone_length(spine) + tree.bone_length(neck);
        assert_eq!(tree.trunk_length(), expect);
    }

    #[test]
    fn pack_layout_is_angle_then_blocks() {
        let tree = default_h36m_tree();
        let dirs = vec![Vector3::new(0.0, 0.0, -1.0); 13];
        let params = LocalKinematicParams::new(0.3, dirs).unwrap();
        let packed = params.pack();
        assert_eq!(packed.len(), 40);
        assert_eq!(packed[0], 0.3);
        assert_eq!(&packed[1..4], &[0.0, 0.0, -1.0]);
        assert_eq!(tree.packed_len(), packed.len());
    }

    #[test]
    fn unpack_renormalizes_and_flags() {
        let mut packed = vec![0.0; 40];
        for b in 0..13 {
            packed[1 + 3 * b + 2] = 1.0;
        }
        packed[3] = 2.0; // first block (0, 0, 2)
        let (params, flagged) = LocalKinematicParams::unpack(&packed).unwrap();
        assert!(flagged);
        assert_eq!(params.bone_dirs[0], Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unpack_rejects_zero_block() {
        let mut packed = vec![0.0; 40];
        for b in 1..13 {
            packed[1 + 3 * b] = 1.0;
        }
        // first block stays (0, 0, 0)
        let err = LocalKinematicParams::unpack(&packed).unwrap_err();
        assert!(matches!(err, ParamError::ZeroNormDirection { block: 0 }));
    }

    #[test]
    fn unpack_rejects_bad_length() {
        let err = LocalKinematicParams::unpack(&[0.0; 39]).unwrap_err();
        assert!(matches!(err, ParamError::BadPackedLength { got: 39 }));
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip_is_bit_exact(seed in 0u64..5000) {
            let tree = default_h36m_tree();
            let (params, _) = crate::synth::synth_pose(seed, &tree);
            let (back, flagged) = LocalKinematicParams::unpack(&params.pack()).unwrap();
            prop_assert!(!flagged);
            prop_assert_eq!(back, params);
        }

        #[test]
        fn mirror_involution_holds_for_default_tree(j in 0usize..17) {
            let tree = default_h36m_tree();
            prop_assert_eq!(tree.mirror(tree.mirror(j)), j);
        }
    }
}
