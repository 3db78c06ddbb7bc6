//! Every example stays runnable: each one is mounted as a module and its
//! entry point executed.

#[path = "../examples/forward_kinematics.rs"]
mod forward_kinematics;
#[path = "../examples/camera_projection.rs"]
mod camera_projection;
#[path = "../examples/render_maps.rs"]
mod render_maps;
#[path = "../examples/full_pipeline.rs"]
mod full_pipeline;
#[path = "../examples/fit_landmarks.rs"]
mod fit_landmarks;
#[path = "../examples/fit_heatmaps.rs"]
mod fit_heatmaps;
#[path = "../examples/gradient_check.rs"]
mod gradient_check;
#[path = "../examples/background_median.rs"]
mod background_median;
#[path = "../examples/clip_manifest.rs"]
mod clip_manifest;
#[path = "../examples/flip_consistency.rs"]
mod flip_consistency;

#[test]
fn forward_kinematics_runs() {
    forward_kinematics::main();
}

#[test]
fn camera_projection_runs() {
    camera_projection::main();
}

#[test]
fn render_maps_runs() {
    render_maps::main();
}

#[test]
fn full_pipeline_runs() {
    full_pipeline::main();
}

#[test]
fn fit_landmarks_runs() {
    fit_landmarks::main();
}

#[test]
fn fit_heatmaps_runs() {
    fit_heatmaps::main();
}

#[test]
fn gradient_check_runs() {
    gradient_check::main();
}

#[test]
fn background_median_runs() {
    background_median::main();
}

#[test]
fn clip_manifest_runs() {
    clip_manifest::main();
}

#[test]
fn flip_consistency_runs() {
    flip_consistency::main();
}
