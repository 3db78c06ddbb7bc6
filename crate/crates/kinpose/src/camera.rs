//! Perspective camera projection of canonical 3D joints to normalized 2D
//! landmarks, with analytic Jacobians.
//!
//! Extrinsics come from [`CameraParams`]: three rotation angles encoded as
//! unnormalized (sin, cos) pairs plus a translation. Each pair is
//! normalized to the unit circle on use, so the rotation is exactly
//! invariant to positive scaling of a pair. The composition order is
//! `R = R_z * R_y * R_x` (fixed here; the parameterization does not
//! dictate one). Projection is a fixed pinhole:
//!
//! ```text
//! q = R * p + T
//! landmark = principal_point + focal * (q_x / q_z, q_y / q_z)
//! ```
//!
//! Any joint with `q_z <= z_min` is behind the near plane and projection
//! fails naming that joint.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{CameraParams, Landmarks2D, Pose3D};

/// Fixed pinhole intrinsics in normalized-image units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveCamera {
    pub focal: f64,
    pub principal_point: (f64, f64),
    pub z_min: f64,
}

impl Default for PerspectiveCamera {
    fn default() -> Self {
        Self {
            focal: 1.1,
            principal_point: (0.5, 0.5),
            z_min: 0.1,
        }
    }
}

impl PerspectiveCamera {
    pub fn validate(&self) -> Result<(), ProjectError> {
        if self.focal > 0.0 && self.z_min > 0.0 {
            Ok(())
        } else {
            Err(ProjectError::BadIntrinsics {
                focal: self.focal,
                z_min: self.z_min,
            })
        }
    }
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("degenerate (sin, cos) pair on axis {axis}: sin^2 + cos^2 <= 1e-12")]
    DegenerateSinCos { axis: usize },
    #[error("joint {joint} is behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },
    #[error("invalid intrinsics: focal = {focal}, z_min = {z_min}")]
    BadIntrinsics { focal: f64, z_min: f64 },
}

fn normalized_pairs(params: &CameraParams) -> Result<[[f64; 2]; 3], ProjectError> {
    let mut out = [[0.0; 2]; 3];
    for (axis, pair) in params.angles_sincos.iter().enumerate() {
        let n2 = pair[0] * pair[0] + pair[1] * pair[1];
        if n2.is_nan() || n2 <= 1e-12 {
            return Err(ProjectError::DegenerateSinCos { axis });
        }
        let n = n2.sqrt();
        out[axis] = [pair[0] / n, pair[1] / n];
    }
    Ok(out)
}

fn rx(s: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(s: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(s: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation matrix from the (sin, cos) pairs: `R_z * R_y * R_x` after
/// normalizing each pair to the unit circle.
pub fn rotation_from_sincos(params: &CameraParams) -> Result<Matrix3<f64>, ProjectError> {
    let p = normalized_pairs(params)?;
    Ok(rz(p[2][0], p[2][1]) * ry(p[1][0], p[1][1]) * rx(p[0][0], p[0][1]))
}

/// Projects canonical 3D joints to normalized 2D landmarks.
pub fn project(
    pose: &Pose3D,
    params: &CameraParams,
    cam: &PerspectiveCamera,
) -> Result<Landmarks2D, ProjectError> {
    cam.validate()?;
    let rot = rotation_from_sincos(params)?;
    let mut points = Vec::with_capacity(pose.joints.len());
    for (j, p) in pose.joints.iter().enumerate() {
        let q = rot * p + params.translation;
        if q.z <= cam.z_min {
            return Err(ProjectError::BehindCamera { joint: j, z: q.z });
        }
        points.push(Vector2::new(
            cam.principal_point.0 + cam.focal * q.x / q.z,
            cam.principal_point.1 + cam.focal * q.y / q.z,
        ));
    }
    Ok(Landmarks2D { points })
}

/// Analytic derivatives of the projection.
///
/// `wrt_pose[j]` is the 2x3 block `d landmark_j / d p3D_j` (the full
/// pose Jacobian is block-diagonal over joints). `wrt_camera` is the
/// dense `2J x 9` matrix over the packed camera layout
/// `[sx, cx, sy, cy, sz, cz, tx, ty, tz]`, including the derivative of
/// the (sin, cos) normalization.
#[derive(Debug, Clone)]
pub struct ProjectionJacobian {
    pub wrt_pose: Vec<Matrix2x3<f64>>,
    pub wrt_camera: DMatrix<f64>,
}

impl ProjectionJacobian {
    /// Assembles the block-diagonal pose Jacobian as a dense `2J x 3J`.
    pub fn pose_jacobian_dense(&self) -> DMatrix<f64> {
        let j = self.wrt_pose.len();
        let mut out = DMatrix::zeros(2 * j, 3 * j);
        for (i, block) in self.wrt_pose.iter().enumerate() {
            for r in 0..2 {
                for c in 0..3 {
                    out[(2 * i + r, 3 * i + c)] = block[(r, c)];
                }
            }
        }
        out
    }
}

/// Derivatives of each normalized pair entry with respect to the raw pair:
/// rows (d sin_hat, d cos_hat), columns (d s, d c).
fn pair_normalization_jacobian(raw: [f64; 2]) -> [[f64; 2]; 2] {
    let (s, c) = (raw[0], raw[1]);
    let r2 = s * s + c * c;
    let r3 = r2 * r2.sqrt();
    [[c * c / r3, -s * c / r3], [-s * c / r3, s * s / r3]]
}

pub fn projection_jacobian(
    pose: &Pose3D,
    params: &CameraParams,
    cam: &PerspectiveCamera,
) -> Result<ProjectionJacobian, ProjectError> {
    cam.validate()?;
    let p = normalized_pairs(params)?;
    let mx = rx(p[0][0], p[0][1]);
    let my = ry(p[1][0], p[1][1]);
    let mz = rz(p[2][0], p[2][1]);
    let rot = mz * my * mx;

    // dR / d normalized pair entries; the axis matrices are linear in
    // (sin, cos), so these are constant structure matrices.
    let dx_s = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let dx_c = Matrix3::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let dy_s = Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
    let dy_c = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let dz_s = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let dz_c = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
    let d_rot_hat = [
        mz * my * dx_s,
        mz * my * dx_c,
        mz * dy_s * mx,
        mz * dy_c * mx,
        dz_s * my * mx,
        dz_c * my * mx,
    ];

    // Chain through the pair normalization to raw (s, c) coordinates.
    let mut d_rot_raw = Vec::with_capacity(6);
    for axis in 0..3 {
        let nj = pair_normalization_jacobian(params.angles_sincos[axis]);
        let ds_hat = &d_rot_hat[2 * axis];
        let dc_hat = &d_rot_hat[2 * axis + 1];
        d_rot_raw.push(ds_hat * nj[0][0] + dc_hat * nj[1][0]); // d / d s_raw
        d_rot_raw.push(ds_hat * nj[0][1] + dc_hat * nj[1][1]); // d / d c_raw
    }

    let j_count = pose.joints.len();
    let mut wrt_pose = Vec::with_capacity(j_count);
    let mut wrt_camera = DMatrix::<f64>::zeros(2 * j_count, 9);
    for (j, point) in pose.joints.iter().enumerate() {
        let q = rot * point + params.translation;
        if q.z <= cam.z_min {
            return Err(ProjectError::BehindCamera { joint: j, z: q.z });
        }
        let f = cam.focal;
        // d landmark / d q
        let dl_dq = Matrix2x3::new(
            f / q.z,
            0.0,
            -f * q.x / (q.z * q.z),
            0.0,
            f / q.z,
            -f * q.y / (q.z * q.z),
        );
        wrt_pose.push(dl_dq * rot);

        for (col, d_rot) in d_rot_raw.iter().enumerate() {
            let dq = d_rot * point;
            let dl = dl_dq * dq;
            wrt_camera[(2 * j, col)] = dl.x;
            wrt_camera[(2 * j + 1, col)] = dl.y;
        }
        for axis in 0..3 {
            let mut dq = Vector3::zeros();
            dq[axis] = 1.0;
            let dl = dl_dq * dq;
            wrt_camera[(2 * j, 6 + axis)] = dl.x;
            wrt_camera[(2 * j + 1, 6 + axis)] = dl.y;
        }
    }
    Ok(ProjectionJacobian {
        wrt_pose,
        wrt_camera,
    })
}
