//! Forward kinematics: local kinematic parameters to 3D joint positions,
//! with the analytic Jacobian of the whole placement.
//!
//! The canonical root rule pins the pelvis at the origin and the neck on
//! the +z axis at the trunk-chain length; the two hips are the rest hip
//! offsets rotated about the x-axis by the trunk-to-hip-line angle. Every
//! other joint follows the recursion `p(j) = p(Pa(j)) + len(j) * dir(j)`
//! in depth-first order, with directions read in the canonical frame.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::skeleton::{KinematicTree, LocalKinematicParams, Pose3D};

#[derive(Debug, Error)]
pub enum FkError {
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("parameter has {got} directions, tree expects {expected}")]
    DirectionCount { got: usize, expected: usize },
}

/// Positions assigned by the canonical root rule (pelvis is the origin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootPlacement {
    pub left_hip: Vector3<f64>,
    pub right_hip: Vector3<f64>,
    pub neck: Vector3<f64>,
}

fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Derivative of `rot_x` with respect to the angle.
fn rot_x_dot(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// Places the three rule joints for a given trunk-to-hip-line angle.
pub fn root_joints(angle: f64, tree: &KinematicTree) -> RootPlacement {
    let rule = tree.rule_joints();
    let rot = rot_x(angle);
    let hip = |j: usize| rot * (tree.bone_length(j) * tree.rest_offset(j));
    RootPlacement {
        left_hip: hip(rule.left_hip),
        right_hip: hip(rule.right_hip),
        neck: Vector3::new(0.0, 0.0, tree.trunk_length()),
    }
}

fn place(angle: f64, dirs: &[Vector3<f64>], tree: &KinematicTree) -> Result<Pose3D, FkError> {
    let expected = tree.directed_joints().len();
    if dirs.len() != expected {
        return Err(FkError::DirectionCount {
            got: dirs.len(),
            expected,
        });
    }
    if !angle.is_finite()
        || dirs
            .iter()
            .any(|d| !(d.x.is_finite() && d.y.is_finite() && d.z.is_finite()))
    {
        return Err(FkError::NonFinite);
    }

    let rule = tree.rule_joints();
    let roots = root_joints(angle, tree);
    let mut joints = vec![Vector3::zeros(); tree.joint_count()];
    joints[rule.left_hip] = roots.left_hip;
    joints[rule.right_hip] = roots.right_hip;
    joints[rule.neck] = roots.neck;

    for &j in tree.topological_order() {
        if let Some(slot) = tree.directed_slot(j) {
            let parent = tree.parent(j).expect("directed joints are non-root");
            joints[j] = joints[parent] + tree.bone_length(j) * dirs[slot];
        }
    }
    Ok(Pose3D { joints })
}

/// Maps local kinematic parameters to 3D joint positions in the canonical
/// frame. Depends on no camera quantity; the output is view-invariant.
pub fn forward_kinematics(
    params: &LocalKinematicParams,
    tree: &KinematicTree,
) -> Result<Pose3D, FkError> {
    place(params.trunk_hipline_angle, &params.bone_dirs, tree)
}

/// Runs the placement recursion on a flat packed vector, consuming the
/// direction blocks as free (possibly non-unit) vectors. This is the
/// function that [`fk_jacobian`] differentiates, and the evaluation path
/// used by finite-difference probes.
pub fn forward_from_packed_raw(packed: &[f64], tree: &KinematicTree) -> Result<Pose3D, FkError> {
    if packed.len() != tree.packed_len() {
        return Err(FkError::DirectionCount {
            got: packed.len().saturating_sub(1) / 3,
            expected: tree.directed_joints().len(),
        });
    }
    let params = LocalKinematicParams::from_packed_raw(packed);
    place(params.trunk_hipline_angle, &params.bone_dirs, tree)
}

/// Analytic Jacobian of joint positions with respect to the packed
/// parameter vector: a `3J x (1 + 3k)` matrix, rows ordered `[x, y, z]`
/// per joint, columns in packed order (angle first, then direction
/// blocks in depth-first order).
///
/// A direction column block is `len(j) * I` on the joint itself and on
/// every descendant reached without passing a rule-placed joint; the
/// angle column covers the hips and everything below them.
pub fn fk_jacobian(
    params: &LocalKinematicParams,
    tree: &KinematicTree,
) -> Result<DMatrix<f64>, FkError> {
    let expected = tree.directed_joints().len();
    if params.bone_dirs.len() != expected {
        return Err(FkError::DirectionCount {
            got: params.bone_dirs.len(),
            expected,
        });
    }
    if !params.trunk_hipline_angle.is_finite() {
        return Err(FkError::NonFinite);
    }

    let cols = tree.packed_len();
    let rows = 3 * tree.joint_count();
    let mut jac = DMatrix::<f64>::zeros(rows, cols);
    let rule = tree.rule_joints();
    let rot_dot = rot_x_dot(params.trunk_hipline_angle);

    // Each joint's 3-row band is its parent's band plus its own local
    // term; rule-placed joints restart the accumulation.
    for &j in tree.topological_order() {
        if j == rule.left_hip || j == rule.right_hip {
            let d = rot_dot * (tree.bone_length(j) * tree.rest_offset(j));
            jac[(3 * j, 0)] = d.x;
            jac[(3 * j + 1, 0)] = d.y;
            jac[(3 * j + 2, 0)] = d.z;
            continue;
        }
        if j == rule.pelvis || j == rule.neck {
            continue;
        }
        let parent = tree.parent(j).expect("non-root");
        for c in 0..cols {
            let (px, py, pz) = (
                jac[(3 * parent, c)],
                jac[(3 * parent + 1, c)],
                jac[(3 * parent + 2, c)],
            );
            jac[(3 * j, c)] = px;
            jac[(3 * j + 1, c)] = py;
            jac[(3 * j + 2, c)] = pz;
        }
        let slot = tree.directed_slot(j).expect("non-rule joints are directed");
        let len = tree.bone_length(j);
        for axis in 0..3 {
            jac[(3 * j + axis, 1 + 3 * slot + axis)] += len;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_h36m_tree;
    use approx::assert_relative_eq;

    /// Straightforward reference recursion, written against a name-keyed
    /// map instead of the packed layout.
    fn oracle_fk(params: &LocalKinematicParams, tree: &KinematicTree) -> Vec<Vector3<f64>> {
        let mut pos = std::collections::HashMap::<String, Vector3<f64>>::new();
        let trunk = tree.trunk_length();
        let (s, c) = params.trunk_hipline_angle.sin_cos();
        let rotx = |v: Vector3<f64>| Vector3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z);
        pos.insert("pelvis".into(), Vector3::zeros());
        pos.insert("neck".into(), Vector3::new(0.0, 0.0, trunk));
        for hip in ["left_hip", "right_hip"] {
            let j = tree.index_of(hip).unwrap();
            pos.insert(hip.into(), rotx(tree.bone_length(j) * tree.rest_offset(j)));
        }
        // Iterate until every joint is resolved; order-free on purpose.
        while pos.len() < tree.joint_count() {
            for j in 0..tree.joint_count() {
                let name = tree.name(j).to_string();
                if pos.contains_key(&name) {
                    continue;
                }
                let parent = tree.name(tree.parent(j).unwrap()).to_string();
                if let Some(&base) = pos.get(&parent) {
                    let slot = tree.directed_slot(j).unwrap();
                    pos.insert(name, base + tree.bone_length(j) * params.bone_dirs[slot]);
                }
            }
        }
        (0..tree.joint_count()).map(|j| pos[tree.name(j)]).collect()
    }

    #[test]
    fn root_joints_at_zero_angle_are_rest_offsets() {
        let tree = default_h36m_tree();
        let roots = root_joints(0.0, &tree);
        let lh = tree.index_of("left_hip").unwrap();
        let expect = tree.bone_length(lh) * tree.rest_offset(lh);
        assert_relative_eq!(roots.left_hip, expect, epsilon = 0.0);
        assert_eq!(roots.neck, Vector3::new(0.0, 0.0, tree.trunk_length()));
    }

    #[test]
    fn root_joints_at_pi_negate_y_and_z() {
        let tree = default_h36m_tree();
        let at0 = root_joints(0.0, &tree);
        let at_pi = root_joints(std::f64::consts::PI, &tree);
        for (a, b) in [
            (at0.left_hip, at_pi.left_hip),
            (at0.right_hip, at_pi.right_hip),
        ] {
            assert_relative_eq!(a.x, b.x, epsilon = 1e-15);
            assert_relative_eq!(a.y, -b.y, epsilon = 1e-15);
            assert_relative_eq!(a.z, -b.z, epsilon = 1e-15);
        }
    }

    #[test]
    fn root_joints_match_rotation_oracle() {
        let tree = default_h36m_tree();
        let angle = 0.25f64;
        let roots = root_joints(angle, &tree);
        let (s, c) = (angle.sin(), angle.cos());
        for (name, got) in [("left_hip", roots.left_hip), ("right_hip", roots.right_hip)] {
            let j = tree.index_of(name).unwrap();
            let v = tree.bone_length(j) * tree.rest_offset(j);
            let expect = Vector3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z);
            assert_relative_eq!(got, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn rest_pose_accumulates_rest_offsets() {
        let tree = default_h36m_tree();
        let params = LocalKinematicParams::rest_pose(&tree);
        let pose = forward_kinematics(&params, &tree).unwrap();
        let head = tree.index_of("head_top").unwrap();
        let nose = tree.index_of("nose").unwrap();
        let expect_z = tree.trunk_length() + tree.bone_length(nose) + tree.bone_length(head);
        assert_relative_eq!(pose.joints[head].z, expect_z, epsilon = 1e-15);
        let wrist = tree.index_of("left_wrist").unwrap();
        let arm: f64 = ["left_shoulder", "left_elbow", "left_wrist"]
            .iter()
            .map(|n| tree.bone_length(tree.index_of(n).unwrap()))
            .sum();
        assert_relative_eq!(pose.joints[wrist].x, arm, epsilon = 1e-15);
    }

    #[test]
    fn single_recursion_step_offsets_from_parent() {
        let tree = default_h36m_tree();
        let mut params = LocalKinematicParams::rest_pose(&tree);
        let nose = tree.index_of("nose").unwrap();
        let slot = tree.directed_slot(nose).unwrap();
        params.bone_dirs[slot] = Vector3::new(0.0, 1.0, 0.0);
        let pose = forward_kinematics(&params, &tree).unwrap();
        let neck = tree.index_of("neck").unwrap();
        let expect = pose.joints[neck] + tree.bone_length(nose) * Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(pose.joints[nose], expect, epsilon = 0.0);
    }

    #[test]
    fn random_pose_matches_reference_recursion() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(7, &tree);
        let pose = forward_kinematics(&params, &tree).unwrap();
        let expect = oracle_fk(&params, &tree);
        for j in 0..tree.joint_count() {
            assert_relative_eq!(pose.joints[j], expect[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let tree = default_h36m_tree();
        let mut params = LocalKinematicParams::rest_pose(&tree);
        params.bone_dirs[4].x = f64::NAN;
        assert!(matches!(
            forward_kinematics(&params, &tree),
            Err(FkError::NonFinite)
        ));
    }

    #[test]
    fn jacobian_leaf_block_is_len_times_identity() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(2, &tree);
        let jac = fk_jacobian(&params, &tree).unwrap();
        let wrist = tree.index_of("right_wrist").unwrap();
        let slot = tree.directed_slot(wrist).unwrap();
        let len = tree.bone_length(wrist);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { len } else { 0.0 };
                assert_eq!(jac[(3 * wrist + r, 1 + 3 * slot + c)], expect);
            }
        }
    }

    #[test]
    fn jacobian_is_zero_off_the_ancestor_path() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(2, &tree);
        let jac = fk_jacobian(&params, &tree).unwrap();
        let wrist = tree.index_of("left_wrist").unwrap();
        let knee_slot = tree
            .directed_slot(tree.index_of("right_knee").unwrap())
            .unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(jac[(3 * wrist + r, 1 + 3 * knee_slot + c)], 0.0);
            }
        }
    }

    #[test]
    fn jacobian_sparsity_respects_ancestry() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(9, &tree);
        let jac = fk_jacobian(&params, &tree).unwrap();
        for j in 0..tree.joint_count() {
            for &k in tree.directed_joints() {
                let slot = tree.directed_slot(k).unwrap();
                let nonzero =
                    (0..3).any(|r| (0..3).any(|c| jac[(3 * j + r, 1 + 3 * slot + c)] != 0.0));
                if nonzero {
                    // k must be j or an ancestor of j.
                    let mut at = Some(j);
                    let mut found = false;
                    while let Some(i) = at {
                        if i == k {
                            found = true;
                            break;
                        }
                        at = tree.parent(i);
                    }
                    assert!(
                        found,
                        "dir of {} leaked into {}",
                        tree.name(k),
                        tree.name(j)
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(7, &tree);
        let jac = fk_jacobian(&params, &tree).unwrap();
        let packed = params.pack();
        let eps = 1e-6;
        let mut max_rel = 0.0f64;
        for c in 0..packed.len() {
            let mut plus = packed.clone();
            let mut minus = packed.clone();
            plus[c] += eps;
            minus[c] -= eps;
            let pp = forward_from_packed_raw(&plus, &tree).unwrap();
            let pm = forward_from_packed_raw(&minus, &tree).unwrap();
            for j in 0..tree.joint_count() {
                let fd = (pp.joints[j] - pm.joints[j]) / (2.0 * eps);
                for axis in 0..3 {
                    let a = jac[(3 * j + axis, c)];
                    let denom = a.abs().max(fd[axis].abs()).max(1e-8);
                    max_rel = max_rel.max((a - fd[axis]).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn bone_length_conservation_over_random_draws() {
        let tree = default_h36m_tree();
        let neck = tree.rule_joints().neck;
        for seed in 0..200 {
            let (params, _) = crate::synth::synth_pose(seed, &tree);
            let pose = forward_kinematics(&params, &tree).unwrap();
            for j in 0..tree.joint_count() {
                let Some(p) = tree.parent(j) else { continue };
                if j == neck {
                    continue; // placed by the root rule, not the recursion
                }
                let len = (pose.joints[j] - pose.joints[p]).norm();
                assert!(
                    (len - tree.bone_length(j)).abs() < 1e-9,
                    "bone {} length {} vs {}",
                    tree.name(j),
                    len,
                    tree.bone_length(j)
                );
            }
            assert_eq!(pose.joints[tree.rule_joints().pelvis], Vector3::zeros());
            assert_eq!(pose.joints[neck].x, 0.0);
            assert_eq!(pose.joints[neck].y, 0.0);
        }
    }
}
