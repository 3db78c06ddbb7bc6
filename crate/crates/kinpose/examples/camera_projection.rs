//! Project a 3D pose to normalized 2D landmarks through a parameterized
//! camera, and differentiate the projection.
//!
//! Run with: `cargo run --example camera_projection`

use kinpose::camera::{project, projection_jacobian, rotation_from_sincos, PerspectiveCamera};
use kinpose::skeleton::default_h36m_tree;
use kinpose::{fk, synth};

pub fn main() {
    let tree = default_h36m_tree();
    let (params, mut camera) = synth::synth_pose(11, &tree);
    let pose = fk::forward_kinematics(&params, &tree).unwrap();
    let cam = PerspectiveCamera::default();

    let rot = rotation_from_sincos(&camera).unwrap();
    println!("rotation (R_z * R_y * R_x):\n{rot:.4}");
    println!("det R = {:.12}", rot.determinant());

    // Scaling a (sin, cos) pair never changes the rotation; a power-of-two
    // factor leaves it bit-identical.
    for pair in &mut camera.angles_sincos {
        pair[0] *= 4.0;
        pair[1] *= 4.0;
    }
    assert_eq!(rotation_from_sincos(&camera).unwrap(), rot);
    println!("pairs scaled by 4 -> bit-identical rotation");

    let landmarks = project(&pose, &camera, &cam).unwrap();
    println!("\nlandmarks (normalized image coordinates):");
    for j in 0..tree.joint_count() {
        let p = landmarks.points[j];
        println!("  {:>14}  ({:.4}, {:.4})", tree.name(j), p.x, p.y);
    }
    let out = landmarks.out_of_frame();
    println!("out-of-frame joints: {out:?}");

    let jac = projection_jacobian(&pose, &camera, &cam).unwrap();
    println!(
        "\njacobian blocks: {} per-joint 2x3 (pose), dense {}x{} (camera)",
        jac.wrt_pose.len(),
        jac.wrt_camera.nrows(),
        jac.wrt_camera.ncols()
    );
    println!("d landmark_0 / d p3D_0 =\n{:.4}", jac.wrt_pose[0]);
}
