//! Composition of the three transformations: parameters to 3D pose to 2D
//! landmarks to spatial maps, with the chained pullback used by fitting
//! and gradient checking.

use nalgebra::{DVector, Vector2};
use thiserror::Error;

use crate::camera::{self, PerspectiveCamera, ProjectionJacobian};
use crate::fk;
use crate::maps::{self, MapConfig, SpatialMaps};
use crate::skeleton::{CameraParams, KinematicTree, Landmarks2D, LocalKinematicParams, Pose3D};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Fk(#[from] fk::FkError),
    #[error(transparent)]
    Project(#[from] camera::ProjectError),
    #[error(transparent)]
    Map(#[from] maps::MapError),
}

/// Every intermediate of the forward chain.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pose: Pose3D,
    pub landmarks: Landmarks2D,
    pub maps: SpatialMaps,
}

/// Runs parameters through the full chain.
pub fn forward(
    params: &LocalKinematicParams,
    camera_params: &CameraParams,
    tree: &KinematicTree,
    cam: &PerspectiveCamera,
    map_config: &MapConfig,
) -> Result<PipelineOutput, PipelineError> {
    let pose = fk::forward_kinematics(params, tree)?;
    let landmarks = camera::project(&pose, camera_params, cam)?;
    let maps = maps::render_spatial_maps(&landmarks, tree, map_config)?;
    Ok(PipelineOutput {
        pose,
        landmarks,
        maps,
    })
}

/// Pulls a landmark-space gradient back to the packed parameter space:
/// given `d objective / d p_2D` (one 2-vector per joint), returns the
/// gradient with respect to `[packed params (1+3k) | camera (9)]`.
pub fn pull_back_landmark_gradient(
    grad_landmarks: &[Vector2<f64>],
    params: &LocalKinematicParams,
    pose: &Pose3D,
    proj_jac: &ProjectionJacobian,
    tree: &KinematicTree,
) -> Result<DVector<f64>, PipelineError> {
    let fk_jac = fk::fk_jacobian(params, tree)?;
    let joints = pose.joints.len();

    // d objective / d p_3D through the block-diagonal projection Jacobian
    let mut grad_pose = DVector::<f64>::zeros(3 * joints);
    for j in 0..joints {
        let g = proj_jac.wrt_pose[j].transpose() * grad_landmarks[j];
        for axis in 0..3 {
            grad_pose[3 * j + axis] = g[axis];
        }
    }
    let grad_params = fk_jac.transpose() * &grad_pose;

    let mut flat = DVector::<f64>::zeros(2 * joints);
    for j in 0..joints {
        flat[2 * j] = grad_landmarks[j].x;
        flat[2 * j + 1] = grad_landmarks[j].y;
    }
    let grad_camera = proj_jac.wrt_camera.transpose() * flat;

    let n = grad_params.len();
    let mut out = DVector::<f64>::zeros(n + 9);
    out.rows_mut(0, n).copy_from(&grad_params);
    out.rows_mut(n, 9).copy_from(&grad_camera);
    Ok(out)
}
