//! Fit pose and camera directly to target heat-maps: the gradient flows
//! through the map renderer as a vector-Jacobian product.
//!
//! Run with: `cargo run --example fit_heatmaps`

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kinpose::camera::PerspectiveCamera;
use kinpose::ik::{fit_pose_to_heatmaps, FitConfig, Objective};
use kinpose::maps::{Lattice, MapConfig};
use kinpose::skeleton::default_h36m_tree;
use kinpose::{fk, pipeline, synth};

pub fn main() {
    let tree = default_h36m_tree();
    let cam = PerspectiveCamera::default();
    let map_config = MapConfig {
        lattice: Lattice::new(32, 32),
        ..Default::default()
    };

    let (truth, camera) = synth::synth_pose(4, &tree);
    let out = pipeline::forward(&truth, &camera, &tree, &cam, &map_config).unwrap();
    println!(
        "target: {} heat channels on {}x{}",
        out.maps.heat.channel_count(),
        map_config.lattice.height,
        map_config.lattice.width
    );

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut init = truth.clone();
    for d in &mut init.bone_dirs {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        *d = (Rotation3::from_axis_angle(&axis, rng.random_range(0.0..0.1)) * *d).normalize();
    }

    let config = FitConfig {
        objective: Objective::HeatmapL2,
        max_iters: 800,
        seed: 4,
        ..Default::default()
    };
    let result = fit_pose_to_heatmaps(
        &out.maps.heat,
        &tree,
        (&init, &camera),
        &cam,
        &map_config,
        &config,
    )
    .unwrap();

    println!("converged: {}", result.converged);
    println!("accepted steps: {}", result.objective_trace.len() - 1);
    println!(
        "reprojection error vs soft-argmax of the target: {:.4} px",
        result.final_reprojection_error_px
    );

    // compare against the generating landmarks directly
    let fitted = kinpose::camera::project(
        &fk::forward_kinematics(&result.params, &tree).unwrap(),
        &result.camera,
        &cam,
    )
    .unwrap();
    let err = kinpose::ik::mean_reprojection_error_px(&fitted, &out.landmarks);
    println!("reprojection error vs the generating landmarks: {err:.4} px");
}
