//! Map local kinematic parameters to 3D joints and check bone lengths.
//!
//! Run with: `cargo run --example forward_kinematics`

use kinpose::skeleton::{default_h36m_tree, LocalKinematicParams};
use kinpose::{fk, synth};

pub fn main() {
    let tree = default_h36m_tree();
    println!(
        "tree: {} joints, {} limbs, trunk length {:.4} (canonical units)",
        tree.joint_count(),
        tree.limb_count(),
        tree.trunk_length()
    );

    // The rest pose: zero trunk angle, all bones at their rest offsets.
    let rest = LocalKinematicParams::rest_pose(&tree);
    let pose = fk::forward_kinematics(&rest, &tree).unwrap();
    println!("\nrest pose:");
    for j in 0..tree.joint_count() {
        let p = pose.joints[j];
        println!(
            "  {:>14}  ({:+.4}, {:+.4}, {:+.4})",
            tree.name(j),
            p.x,
            p.y,
            p.z
        );
    }

    // A random pose: unit directions drawn on the sphere.
    let (params, _) = synth::synth_pose(7, &tree);
    let pose = fk::forward_kinematics(&params, &tree).unwrap();
    println!(
        "\nrandom pose (seed 7): packed length {}",
        params.pack().len()
    );

    // Every recursion bone keeps its canonical length exactly.
    let neck = tree.rule_joints().neck;
    let mut worst: f64 = 0.0;
    for j in 0..tree.joint_count() {
        let Some(parent) = tree.parent(j) else {
            continue;
        };
        if j == neck {
            continue;
        }
        let len = (pose.joints[j] - pose.joints[parent]).norm();
        worst = worst.max((len - tree.bone_length(j)).abs());
    }
    println!("max bone-length deviation: {worst:.2e}");
    println!(
        "pelvis: {:?}  neck: {:?}",
        pose.joints[0], pose.joints[neck]
    );
}
