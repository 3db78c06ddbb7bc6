//! Differentiable kinematic-structure-preserving pose pipeline.
//!
//! The pipeline maps local kinematic parameters of a 17-joint human
//! skeleton through three transformations, each with analytic gradients:
//!
//! 1. [`fk`] — forward kinematics: a trunk-to-hip-line angle plus 13
//!    parent-relative unit bone directions to 3D joints in a canonical,
//!    view-invariant frame (pelvis at the origin, neck on the +z axis).
//! 2. [`camera`] — perspective projection through extrinsics encoded as
//!    (sin, cos) pairs plus translation, to normalized 2D landmarks.
//! 3. [`maps`] — rasterization of landmarks into per-joint Gaussian
//!    heat-maps and per-limb rotated-Gaussian affinity maps.
//!
//! On top of the chain sit the [`ik`] fitter (projected gradient descent
//! with backtracking line search, plus a finite-difference gradient
//! checker), the [`losses`] for paired/unpaired/prior supervision with
//! flip-consistency machinery, and the [`video`] preprocessing that
//! separates static-background clips (paired, with a temporal-median
//! background estimate) from dynamic ones (unpaired).
//!
//! Start with the runnable examples (`cargo run --example fit_landmarks`)
//! or the `kinpose` binary, which exposes every stage on files.
//!
//! ```
//! use kinpose::{default_h36m_tree, forward, synth_pose, MapConfig, PerspectiveCamera};
//!
//! let tree = default_h36m_tree();
//! let (params, camera) = synth_pose(0, &tree);
//! let out = forward(&params, &camera, &tree, &PerspectiveCamera::default(), &MapConfig::default())
//!     .unwrap();
//! assert_eq!(out.pose.joint_count(), 17);
//! assert_eq!(out.maps.heat.channel_count(), 17);
//! assert_eq!(out.maps.affinity.channel_count(), 16);
//! ```

pub mod camera;
pub mod fk;
pub mod ik;
pub mod io;
pub mod losses;
pub mod maps;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod video;

pub use camera::{project, projection_jacobian, rotation_from_sincos, PerspectiveCamera};
pub use fk::{fk_jacobian, forward_kinematics, root_joints};
pub use ik::{
    fit_multi_start, fit_pose_to_heatmaps, fit_pose_to_landmarks, gradcheck, FitConfig, FitResult,
    GradStage, Objective,
};
pub use losses::{
    apply_transform, invert_transform, loss_paired, loss_prior, loss_unpaired,
    unpaired_consistency_residual, EnergyModel, FeatureVector, SpatialTransform,
};
pub use maps::{
    maps_jvp, maps_vjp, render_affinity, render_heatmaps, render_spatial_maps, soft_argmax,
    Lattice, MapConfig, MapStack, SpatialMaps,
};
pub use pipeline::{forward, PipelineOutput};
pub use skeleton::{
    default_h36m_tree, CameraParams, KinematicTree, Landmarks2D, LocalKinematicParams, Pose3D,
    TreeConfig,
};
pub use synth::synth_pose;
pub use video::{
    build_manifest, classify_clip, clip_motion_score, clip_motion_stats, median_background, Clip,
    ClipClass, Frame, ManifestConfig, MotionStats, TupleManifest,
};
