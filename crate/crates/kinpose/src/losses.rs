//! Loss terms for paired, unpaired and prior supervision, the spatial
//! transform pair used for flip/rotation consistency, and the pluggable
//! energy-model interface standing in for frozen encoder/decoder networks.
//!
//! Every `|.|` term is the mean absolute error over all elements, which
//! keeps the lambda weights scale-free across joint counts and feature
//! lengths.

use nalgebra::Vector2;
use thiserror::Error;

use crate::skeleton::Landmarks2D;
use crate::video::Frame;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {left} vs {right} elements")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
}

/// Abstract appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean absolute difference over two equal-length slices.
pub fn mean_abs(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Paired-sample loss: `image_diff + l1 * |p - p_hat| + l2 * |f - f_hat|`.
/// The image term is an injected scalar (mean absolute pixel difference),
/// so the loss stays independent of any learned decoder; pass 0 when no
/// image pair is available.
pub fn loss_paired(
    image_diff: f64,
    p: &Landmarks2D,
    p_hat: &Landmarks2D,
    f: &FeatureVector,
    f_hat: &FeatureVector,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64, LossError> {
    let pose = mean_abs(&p.flat(), &p_hat.flat())?;
    let feat = mean_abs(&f.0, &f_hat.0)?;
    Ok(image_diff + lambda1 * pose + lambda2 * feat)
}

/// Unpaired-sample loss: `|p - p_tilde| + l2 * |f - f_tilde|`. No image
/// term, by construction.
pub fn loss_unpaired(
    p: &Landmarks2D,
    p_tilde: &Landmarks2D,
    f: &FeatureVector,
    f_tilde: &FeatureVector,
    lambda2: f64,
) -> Result<f64, LossError> {
    let pose = mean_abs(&p.flat(), &p_tilde.flat())?;
    let feat = mean_abs(&f.0, &f_tilde.0)?;
    Ok(pose + lambda2 * feat)
}

/// Direct supervision on 3D and 2D coordinates:
/// `w3 * |p3 - p3_gt| + w2 * |p2 - p2_gt|`.
pub fn loss_prior(
    p3: &crate::skeleton::Pose3D,
    p3_gt: &crate::skeleton::Pose3D,
    p2: &Landmarks2D,
    p2_gt: &Landmarks2D,
    w3: f64,
    w2: f64,
) -> Result<f64, LossError> {
    let flat3 = |p: &crate::skeleton::Pose3D| -> Vec<f64> {
        p.joints.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    };
    let t3 = mean_abs(&flat3(p3), &flat3(p3_gt))?;
    let t2 = mean_abs(&p2.flat(), &p2_gt.flat())?;
    Ok(w3 * t3 + w2 * t2)
}

/// A differentiable spatial transformation with an exact inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialTransform {
    /// Mirror about the vertical image axis. On landmarks this exchanges
    /// left/right joint channels as well as flipping x.
    HorizontalFlip,
    /// Rotation about the image center (0.5, 0.5), radians.
    InPlaneRotation(f64),
}

impl SpatialTransform {
    /// The inverse transform.
    pub fn inverse(&self) -> SpatialTransform {
        match self {
            SpatialTransform::HorizontalFlip => SpatialTransform::HorizontalFlip,
            SpatialTransform::InPlaneRotation(a) => SpatialTransform::InPlaneRotation(-a),
        }
    }
}

/// Applies the transform to landmarks. Flip sends `x` to `1 - x` and then
/// relabels channels by the mirror permutation; rotation turns every
/// landmark about the image center.
pub fn apply_transform(
    p: &Landmarks2D,
    transform: &SpatialTransform,
    mirror: &[usize],
) -> Landmarks2D {
    match transform {
        SpatialTransform::HorizontalFlip => {
            let flipped: Vec<Vector2<f64>> = p
                .points
                .iter()
                .map(|q| Vector2::new(1.0 - q.x, q.y))
                .collect();
            let points = (0..p.points.len()).map(|j| flipped[mirror[j]]).collect();
            Landmarks2D { points }
        }
        SpatialTransform::InPlaneRotation(a) => {
            let (s, c) = a.sin_cos();
            let points = p
                .points
                .iter()
                .map(|q| {
                    let (dx, dy) = (q.x - 0.5, q.y - 0.5);
                    Vector2::new(0.5 + c * dx - s * dy, 0.5 + s * dx + c * dy)
                })
                .collect();
            Landmarks2D { points }
        }
    }
}

/// Applies the inverse transform; `invert_transform(apply_transform(p))`
/// is the identity.
pub fn invert_transform(
    p: &Landmarks2D,
    transform: &SpatialTransform,
    mirror: &[usize],
) -> Landmarks2D {
    apply_transform(p, &transform.inverse(), mirror)
}

/// Applies the transform to an image. Flip mirrors each row exactly;
/// rotation resamples nearest-neighbor about the image center (out-of-frame
/// pixels become black). Rotation by 0 is an exact identity.
pub fn transform_image(frame: &Frame, transform: &SpatialTransform) -> Frame {
    match transform {
        SpatialTransform::HorizontalFlip => {
            let mut out = frame.clone();
            for y in 0..frame.height {
                for x in 0..frame.width {
                    out.set_pixel(frame.width - 1 - x, y, frame.pixel(x, y));
                }
            }
            out
        }
        SpatialTransform::InPlaneRotation(a) => {
            if *a == 0.0 {
                return frame.clone();
            }
            let (s, c) = a.sin_cos();
            let (cx, cy) = (
                (frame.width - 1) as f64 / 2.0,
                (frame.height - 1) as f64 / 2.0,
            );
            let mut out = Frame::filled(frame.width, frame.height, [0, 0, 0]);
            for y in 0..frame.height {
                for x in 0..frame.width {
                    // inverse mapping: rotate the output pixel back
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let sx = (c * dx + s * dy + cx).round();
                    let sy = (-s * dx + c * dy + cy).round();
                    if sx >= 0.0
                        && sy >= 0.0
                        && (sx as usize) < frame.width
                        && (sy as usize) < frame.height
                    {
                        out.set_pixel(x, y, frame.pixel(sx as usize, sy as usize));
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Error)]
#[error("energy model: {0}")]
pub struct EnergyError(pub String);

/// Interface standing in for the frozen decoder and encoders: reconstructs
/// an image from pose maps, appearance and background, and re-encodes pose
/// and appearance from images. Implementations must be deterministic for
/// fixed inputs.
pub trait EnergyModel {
    fn reconstruct(
        &self,
        maps: &crate::maps::SpatialMaps,
        appearance: &FeatureVector,
        background: &Frame,
    ) -> Result<Frame, EnergyError>;

    fn encode_pose(&self, image: &Frame) -> Result<Landmarks2D, EnergyError>;

    fn encode_appearance(&self, image: &Frame) -> Result<FeatureVector, EnergyError>;
}

/// Encodings and their transform-consistency counterparts, ready to feed
/// [`loss_unpaired`].
#[derive(Debug, Clone)]
pub struct ConsistencyResidual {
    pub pose: Landmarks2D,
    pub pose_tilde: Landmarks2D,
    pub appearance: FeatureVector,
    pub appearance_tilde: FeatureVector,
}

impl ConsistencyResidual {
    /// Euclidean pose residual per joint.
    pub fn per_joint_pose_residual(&self) -> Vec<f64> {
        self.pose
            .points
            .iter()
            .zip(&self.pose_tilde.points)
            .map(|(a, b)| (a - b).norm())
            .collect()
    }

    pub fn unpaired_loss(&self, lambda2: f64) -> Result<f64, LossError> {
        loss_unpaired(
            &self.pose,
            &self.pose_tilde,
            &self.appearance,
            &self.appearance_tilde,
            lambda2,
        )
    }
}

/// Measures how far a model's pose encoding is from transform-equivariance
/// (and its appearance encoding from transform-invariance):
/// `pose_tilde = T^-1(encode_pose(T(image)))` against
/// `pose = encode_pose(image)`. For an exactly equivariant model the
/// residual is zero.
pub fn unpaired_consistency_residual(
    image: &Frame,
    transform: &SpatialTransform,
    mirror: &[usize],
    model: &dyn EnergyModel,
) -> Result<ConsistencyResidual, EnergyError> {
    let pose = model.encode_pose(image)?;
    let appearance = model.encode_appearance(image)?;
    let transformed = transform_image(image, transform);
    let pose_tilde = invert_transform(&model.encode_pose(&transformed)?, transform, mirror);
    let appearance_tilde = model.encode_appearance(&transformed)?;
    Ok(ConsistencyResidual {
        pose,
        pose_tilde,
        appearance,
        appearance_tilde,
    })
}
