//! The whole chain in one pass: parameters -> 3D pose -> 2D landmarks ->
//! spatial maps, plus the pulled-back gradient of a map-space objective.
//!
//! Run with: `cargo run --example full_pipeline`

use nalgebra::Vector2;

use kinpose::camera::PerspectiveCamera;
use kinpose::maps::{maps_vjp, MapConfig, MapStack};
use kinpose::pipeline;
use kinpose::skeleton::default_h36m_tree;
use kinpose::synth;

pub fn main() {
    let tree = default_h36m_tree();
    let cam = PerspectiveCamera::default();
    let map_config = MapConfig::default();

    let (params, camera) = synth::synth_pose(1, &tree);
    let out = pipeline::forward(&params, &camera, &tree, &cam, &map_config).unwrap();

    println!("chain outputs:");
    println!("  3D pose:    {} joints", out.pose.joint_count());
    println!(
        "  landmarks:  {} points, {} out of frame",
        out.landmarks.joint_count(),
        out.landmarks.out_of_frame().len()
    );
    println!(
        "  maps:       {} + {} channels on {}x{}",
        out.maps.heat.channel_count(),
        out.maps.affinity.channel_count(),
        map_config.lattice.height,
        map_config.lattice.width
    );

    // Gradient of a map-space objective (the x-weighted heat mass, i.e.
    // the numerator of a soft-argmax) with respect to every parameter,
    // via the chained pullback.
    let x_ramp: Vec<f64> = (0..map_config.lattice.pixels())
        .map(|i| (i % map_config.lattice.width) as f64 / 55.0)
        .collect();
    let cotangent = MapStack {
        lattice: map_config.lattice,
        channels: vec![x_ramp; tree.joint_count()],
    };
    let grad_landmarks: Vec<Vector2<f64>> = maps_vjp(
        &out.landmarks,
        tree.limbs(),
        &map_config,
        Some(&cotangent),
        None,
    )
    .unwrap();
    let proj_jac = kinpose::camera::projection_jacobian(&out.pose, &camera, &cam).unwrap();
    let grad = pipeline::pull_back_landmark_gradient(
        &grad_landmarks,
        &params,
        &out.pose,
        &proj_jac,
        &tree,
    )
    .unwrap();

    println!(
        "\ngradient of the x-weighted heat mass wrt the {} stacked parameters:",
        grad.len()
    );
    println!("  d/d trunk_angle = {:+.5}", grad[0]);
    let dir_norms: Vec<f64> = (0..tree.directed_joints().len())
        .map(|slot| grad.rows(1 + 3 * slot, 3).norm())
        .collect();
    let strongest = dir_norms
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    println!(
        "  strongest direction block: {} (|g| = {:.5})",
        tree.name(tree.directed_joints()[strongest.0]),
        strongest.1
    );
    println!(
        "  camera block |g| = {:.5}",
        grad.rows(tree.packed_len(), 9).norm()
    );
}
