//! Seeded synthetic pose and camera generation for demos and tests.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::skeleton::{CameraParams, KinematicTree, LocalKinematicParams};

/// Deterministic random pose/camera pair. Directions are uniform on the
/// unit sphere, the trunk angle uniform in [-pi/4, pi/4], camera angles
/// uniform in [-pi/6, pi/6], translation at the default. The same seed
/// always yields identical bytes.
///
/// Draw order: trunk angle, then one direction per directed joint in
/// depth-first order, then the three camera angles (x, y, z).
pub fn synth_pose(seed: u64, tree: &KinematicTree) -> (LocalKinematicParams, CameraParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter_pi = std::f64::consts::FRAC_PI_4;
    let sixth_pi = std::f64::consts::FRAC_PI_6;

    let angle = rng.random_range(-quarter_pi..quarter_pi);
    let dirs: Vec<Vector3<f64>> = (0..tree.directed_joints().len())
        .map(|_| unit_sphere(&mut rng))
        .collect();
    let params = LocalKinematicParams {
        trunk_hipline_angle: angle,
        bone_dirs: dirs,
    };

    let alpha = rng.random_range(-sixth_pi..sixth_pi);
    let beta = rng.random_range(-sixth_pi..sixth_pi);
    let gamma = rng.random_range(-sixth_pi..sixth_pi);
    let camera = CameraParams::from_angles(alpha, beta, gamma, CameraParams::default().translation);
    (params, camera)
}

/// Uniform sample on the unit sphere via the cylinder map, renormalized.
fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z).normalize()
}
