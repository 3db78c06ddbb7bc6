//! Inverse fitting through the full differentiable chain: recover local
//! kinematic parameters and camera extrinsics from target 2D landmarks or
//! target heat-maps by projected gradient descent, plus the finite-
//! difference gradient checker.
//!
//! The optimizer works on the stacked vector `[packed params | camera]`
//! (49 entries for the default tree). After every update each bone
//! direction is projected back onto the unit sphere and each (sin, cos)
//! pair onto the unit circle. A backtracking line search halves the step
//! until the objective strictly decreases (at most 20 halvings); an
//! evaluation that puts a joint behind the camera counts as an infinite
//! objective. Monocular depth is not recoverable, so success is measured
//! in 2D reprojection error only.

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{self, PerspectiveCamera};
use crate::fk;
use crate::maps::{self, MapConfig, MapStack};
use crate::pipeline;
use crate::skeleton::{CameraParams, KinematicTree, Landmarks2D, LocalKinematicParams};

/// Reference lattice size for reporting reprojection error in pixels.
pub const REPROJ_LATTICE_UNITS: f64 = 256.0;

const MAX_HALVINGS: usize = 20;
const ZERO_GRAD_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("objective {0:?} is not valid for this fit entry point")]
    WrongObjective(Objective),
    #[error("invalid fit config: {0}")]
    BadConfig(String),
    #[error("initial point cannot be evaluated (behind camera or non-finite)")]
    BadInitialPoint,
    #[error("gradient became non-finite")]
    NonFiniteGradient,
    #[error("target heat stack has {got} channels, tree has {expected} joints")]
    TargetChannels { got: usize, expected: usize },
    #[error("eps {0} outside [1e-8, 1e-3]")]
    BadEps(f64),
    #[error(transparent)]
    Fk(#[from] fk::FkError),
    #[error(transparent)]
    Project(#[from] camera::ProjectError),
    #[error(transparent)]
    Map(#[from] maps::MapError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    LandmarkL2,
    LandmarkL1,
    HeatmapL2,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Initial line-search step, reset every iteration.
    pub step_size: f64,
    pub objective: Objective,
    /// Convergence threshold on the objective decrease of an accepted step.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 0.5,
            objective: Objective::LandmarkL2,
            tol: 1e-12,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<(), FitError> {
        if self.max_iters == 0 {
            return Err(FitError::BadConfig("max_iters must be positive".into()));
        }
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(FitError::BadConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(FitError::BadConfig(format!(
                "tol must be nonnegative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: LocalKinematicParams,
    pub camera: CameraParams,
    /// Objective at the initial point and after every accepted step;
    /// strictly decreasing past the first entry.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// True when the line search exhausted its halvings on a step with a
    /// non-negligible gradient.
    pub line_search_failed: bool,
    /// Mean per-joint reprojection error against the target, in pixels on
    /// a 256-unit lattice.
    pub final_reprojection_error_px: f64,
    pub seed: u64,
}

/// Mean Euclidean landmark error in pixels on the reference lattice.
pub fn mean_reprojection_error_px(a: &Landmarks2D, b: &Landmarks2D) -> f64 {
    let n = a.points.len().max(1);
    let sum: f64 = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p - q).norm())
        .sum();
    sum / n as f64 * REPROJ_LATTICE_UNITS
}

enum Target<'a> {
    Landmarks(&'a Landmarks2D),
    Heatmaps {
        stack: &'a MapStack,
        map_config: &'a MapConfig,
        reference: Landmarks2D,
    },
}

struct Problem<'a> {
    tree: &'a KinematicTree,
    cam: &'a PerspectiveCamera,
    target: Target<'a>,
    objective: Objective,
    packed_len: usize,
}

impl Problem<'_> {
    fn split(&self, x: &[f64]) -> (LocalKinematicParams, CameraParams) {
        let params = LocalKinematicParams::from_packed_raw(&x[..self.packed_len]);
        let mut cam9 = [0.0; 9];
        cam9.copy_from_slice(&x[self.packed_len..]);
        (params, CameraParams::from_packed(&cam9))
    }

    /// Objective value, or None when the point is not evaluable (behind
    /// the camera or non-finite); the line search treats that as infinity.
    fn eval(&self, x: &[f64]) -> Option<f64> {
        let (params, camera_params) = self.split(x);
        let pose = fk::forward_kinematics(&params, self.tree).ok()?;
        let lm = camera::project(&pose, &camera_params, self.cam).ok()?;
        let value: f64 = match (&self.target, self.objective) {
            (Target::Landmarks(t), Objective::LandmarkL2) => lm
                .points
                .iter()
                .zip(&t.points)
                .map(|(p, q)| (p - q).norm_squared())
                .sum(),
            (Target::Landmarks(t), Objective::LandmarkL1) => lm
                .points
                .iter()
                .zip(&t.points)
                .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs())
                .sum(),
            (
                Target::Heatmaps {
                    stack, map_config, ..
                },
                Objective::HeatmapL2,
            ) => {
                let heat = maps::render_heatmaps(
                    &lm,
                    map_config.lattice,
                    map_config.sigma,
                    map_config.window_sigmas,
                )
                .ok()?;
                heat.channels
                    .iter()
                    .flatten()
                    .zip(stack.channels.iter().flatten())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            }
            _ => return None,
        };
        value.is_finite().then_some(value)
    }

    /// Analytic gradient at an evaluable point.
    fn grad(&self, x: &[f64]) -> Result<DVector<f64>, FitError> {
        let (params, camera_params) = self.split(x);
        let pose = fk::forward_kinematics(&params, self.tree)?;
        let lm = camera::project(&pose, &camera_params, self.cam)?;
        let proj_jac = camera::projection_jacobian(&pose, &camera_params, self.cam)?;

        let grad_lm: Vec<Vector2<f64>> = match (&self.target, self.objective) {
            (Target::Landmarks(t), Objective::LandmarkL2) => lm
                .points
                .iter()
                .zip(&t.points)
                .map(|(p, q)| 2.0 * (p - q))
                .collect(),
            (Target::Landmarks(t), Objective::LandmarkL1) => lm
                .points
                .iter()
                .zip(&t.points)
                .map(|(p, q)| Vector2::new((p.x - q.x).signum(), (p.y - q.y).signum()))
                .collect(),
            (
                Target::Heatmaps {
                    stack, map_config, ..
                },
                Objective::HeatmapL2,
            ) => {
                let heat = maps::render_heatmaps(
                    &lm,
                    map_config.lattice,
                    map_config.sigma,
                    map_config.window_sigmas,
                )?;
                let mut cot = MapStack::zeros(map_config.lattice, heat.channel_count());
                for (c, channel) in heat.channels.iter().enumerate() {
                    for (i, v) in channel.iter().enumerate() {
                        cot.channels[c][i] = 2.0 * (v - stack.channels[c][i]);
                    }
                }
                maps::maps_vjp(&lm, &[], map_config, Some(&cot), None)?
            }
            (_, obj) => return Err(FitError::WrongObjective(obj)),
        };

        let g =
            pipeline::pull_back_landmark_gradient(&grad_lm, &params, &pose, &proj_jac, self.tree)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFiniteGradient);
        }
        Ok(g)
    }

    fn reprojection_error(&self, x: &[f64]) -> f64 {
        let (params, camera_params) = self.split(x);
        let Ok(pose) = fk::forward_kinematics(&params, self.tree) else {
            return f64::INFINITY;
        };
        let Ok(lm) = camera::project(&pose, &camera_params, self.cam) else {
            return f64::INFINITY;
        };
        match &self.target {
            Target::Landmarks(t) => mean_reprojection_error_px(&lm, t),
            Target::Heatmaps { reference, .. } => mean_reprojection_error_px(&lm, reference),
        }
    }
}

/// Renormalizes direction blocks to the unit sphere and (sin, cos) pairs
/// to the unit circle. Returns false when a block has collapsed.
fn project_onto_constraints(x: &mut [f64], packed_len: usize) -> bool {
    for block in x[1..packed_len].chunks_exact_mut(3) {
        let n = (block[0] * block[0] + block[1] * block[1] + block[2] * block[2]).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return false;
        }
        block.iter_mut().for_each(|v| *v /= n);
    }
    for pair in x[packed_len..packed_len + 6].chunks_exact_mut(2) {
        let n = (pair[0] * pair[0] + pair[1] * pair[1]).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return false;
        }
        pair.iter_mut().for_each(|v| *v /= n);
    }
    x.iter().all(|v| v.is_finite())
}

fn run_descent(
    problem: &Problem,
    init_x: Vec<f64>,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    config.check()?;
    let packed_len = problem.packed_len;
    let mut x = init_x;
    if !project_onto_constraints(&mut x, packed_len) {
        return Err(FitError::BadInitialPoint);
    }
    let mut current = problem.eval(&x).ok_or(FitError::BadInitialPoint)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut line_search_failed = false;

    for _ in 0..config.max_iters {
        let grad = problem.grad(&x)?;
        let grad_norm = grad.norm();
        if grad_norm < ZERO_GRAD_TOL {
            converged = true;
            break;
        }

        let mut step = config.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate: Vec<f64> = x
                .iter()
                .zip(grad.iter())
                .map(|(xi, gi)| xi - step * gi)
                .collect();
            if project_onto_constraints(&mut candidate, packed_len) {
                if let Some(value) = problem.eval(&candidate) {
                    if value < current {
                        accepted = Some((candidate, value));
                        break;
                    }
                }
            }
            step /= 2.0;
        }

        match accepted {
            Some((candidate, value)) => {
                let decrease = current - value;
                x = candidate;
                current = value;
                trace.push(current);
                if decrease < config.tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No strict decrease available: either we sit at a critical
                // point, or the step was rejected outright.
                if grad_norm < 1e-8 {
                    converged = true;
                } else {
                    line_search_failed = true;
                }
                break;
            }
        }
    }

    let (params, camera_params) = problem.split(&x);
    Ok(FitResult {
        final_reprojection_error_px: problem.reprojection_error(&x),
        params,
        camera: camera_params,
        objective_trace: trace,
        converged,
        line_search_failed,
        seed: config.seed,
    })
}

fn stack_init(params: &LocalKinematicParams, camera_params: &CameraParams) -> Vec<f64> {
    let mut x = params.pack();
    x.extend_from_slice(&camera_params.pack());
    x
}

/// Fits parameters and camera to target landmarks with the configured
/// landmark objective.
pub fn fit_pose_to_landmarks(
    target: &Landmarks2D,
    tree: &KinematicTree,
    init: (&LocalKinematicParams, &CameraParams),
    cam: &PerspectiveCamera,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    if config.objective == Objective::HeatmapL2 {
        return Err(FitError::WrongObjective(config.objective));
    }
    if target.joint_count() != tree.joint_count() {
        return Err(FitError::TargetChannels {
            got: target.joint_count(),
            expected: tree.joint_count(),
        });
    }
    let problem = Problem {
        tree,
        cam,
        target: Target::Landmarks(target),
        objective: config.objective,
        packed_len: tree.packed_len(),
    };
    run_descent(&problem, stack_init(init.0, init.1), config)
}

/// Fits parameters and camera to target heat-maps (one channel per joint)
/// with the heat-map L2 objective; gradients flow through the map renderer
/// as Jacobian-vector products. Reprojection error is reported against the
/// soft-argmax of the target channels.
pub fn fit_pose_to_heatmaps(
    target: &MapStack,
    tree: &KinematicTree,
    init: (&LocalKinematicParams, &CameraParams),
    cam: &PerspectiveCamera,
    map_config: &MapConfig,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    if target.channel_count() != tree.joint_count() {
        return Err(FitError::TargetChannels {
            got: target.channel_count(),
            expected: tree.joint_count(),
        });
    }
    let reference = Landmarks2D {
        points: target
            .channels
            .iter()
            .map(|ch| maps::soft_argmax(ch, target.lattice))
            .collect::<Result<_, _>>()?,
    };
    // dense rendering so the objective and its gradient agree exactly
    let map_config = MapConfig {
        lattice: target.lattice,
        window_sigmas: None,
        ..*map_config
    };
    let problem = Problem {
        tree,
        cam,
        target: Target::Heatmaps {
            stack: target,
            map_config: &map_config,
            reference,
        },
        objective: Objective::HeatmapL2,
        packed_len: tree.packed_len(),
    };
    run_descent(&problem, stack_init(init.0, init.1), config)
}

/// Multi-start wrapper: runs `restarts` independent fits from seeded
/// random initializations (seeds `config.seed + k`) in parallel and keeps
/// the best final objective, breaking ties by lowest seed.
pub fn fit_multi_start(
    target: &Landmarks2D,
    tree: &KinematicTree,
    cam: &PerspectiveCamera,
    config: &FitConfig,
    restarts: usize,
) -> Result<FitResult, FitError> {
    if restarts == 0 {
        return Err(FitError::BadConfig("restarts must be positive".into()));
    }
    let results: Vec<FitResult> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let seed = config.seed + k as u64;
            let (params, camera_params) = crate::synth::synth_pose(seed, tree);
            let run_config = FitConfig {
                seed,
                ..config.clone()
            };
            fit_pose_to_landmarks(target, tree, (&params, &camera_params), cam, &run_config)
        })
        .collect::<Result<_, _>>()?;
    Ok(results
        .into_iter()
        .min_by(|a, b| {
            let fa = a.objective_trace.last().copied().unwrap_or(f64::INFINITY);
            let fb = b.objective_trace.last().copied().unwrap_or(f64::INFINITY);
            fa.partial_cmp(&fb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.seed.cmp(&b.seed))
        })
        .expect("restarts > 0"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradStage {
    Fk,
    Project,
    Maps,
    FullChain,
}

impl GradStage {
    pub const ALL: [GradStage; 4] = [
        GradStage::Fk,
        GradStage::Project,
        GradStage::Maps,
        GradStage::FullChain,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GradStage::Fk => "fk",
            GradStage::Project => "project",
            GradStage::Maps => "maps",
            GradStage::FullChain => "full_chain",
        }
    }
}

impl std::str::FromStr for GradStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fk" => Ok(GradStage::Fk),
            "project" => Ok(GradStage::Project),
            "maps" => Ok(GradStage::Maps),
            "full_chain" => Ok(GradStage::FullChain),
            other => Err(format!(
                "unknown stage `{other}` (fk|project|maps|full_chain)"
            )),
        }
    }
}

/// Result of one gradient check: the worst discrepancy between the
/// analytic gradient of a seeded scalar objective and central finite
/// differences. Errors are relative with the denominator floored at 1e-8;
/// when both sides are below 1e-6 the absolute difference is reported
/// instead (critical points).
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub stage: GradStage,
    pub seed: u64,
    pub eps: f64,
    pub coordinates: usize,
    pub max_error: f64,
    pub worst_coordinate: usize,
}

fn fd_error(analytic: f64, fd: f64) -> f64 {
    let abs = (analytic - fd).abs();
    let scale = analytic.abs().max(fd.abs());
    if scale < 1e-6 {
        abs
    } else {
        abs / scale.max(1e-8)
    }
}

fn central_diff(mut eval: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = eval(&probe);
        probe[i] = x[i] - eps;
        let minus = eval(&probe);
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

fn report(stage: GradStage, seed: u64, eps: f64, analytic: &[f64], fd: &[f64]) -> GradcheckReport {
    let mut max_error = 0.0;
    let mut worst = 0;
    for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
        let e = fd_error(a, f);
        if e > max_error {
            max_error = e;
            worst = i;
        }
    }
    GradcheckReport {
        stage,
        seed,
        eps,
        coordinates: analytic.len(),
        max_error,
        worst_coordinate: worst,
    }
}

/// Checks the analytic gradient of one pipeline stage (or the whole chain)
/// against central finite differences at a seeded random point. The scalar
/// objective is a fixed random weighting of the stage outputs.
pub fn gradcheck(
    stage: GradStage,
    seed: u64,
    eps: f64,
    tree: &KinematicTree,
    cam: &PerspectiveCamera,
    map_config: &MapConfig,
) -> Result<GradcheckReport, FitError> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(FitError::BadEps(eps));
    }
    let (params, camera_params) = crate::synth::synth_pose(seed, tree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut weights =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let joints = tree.joint_count();

    match stage {
        GradStage::Fk => {
            let w = weights(3 * joints);
            let x = params.pack();
            let eval = |p: &[f64]| {
                let pose = fk::forward_from_packed_raw(p, tree).expect("finite probe");
                pose.joints
                    .iter()
                    .enumerate()
                    .map(|(j, q)| w[3 * j] * q.x + w[3 * j + 1] * q.y + w[3 * j + 2] * q.z)
                    .sum()
            };
            let jac = fk::fk_jacobian(&params, tree)?;
            let analytic: Vec<f64> = (0..x.len())
                .map(|c| (0..3 * joints).map(|r| w[r] * jac[(r, c)]).sum())
                .collect();
            let fd = central_diff(eval, &x, eps);
            Ok(report(stage, seed, eps, &analytic, &fd))
        }
        GradStage::Project => {
            let w = weights(2 * joints);
            let pose = fk::forward_kinematics(&params, tree)?;
            let mut x: Vec<f64> = pose.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
            x.extend_from_slice(&camera_params.pack());
            let eval = |v: &[f64]| {
                let pose = crate::skeleton::Pose3D {
                    joints: v[..3 * joints]
                        .chunks_exact(3)
                        .map(|c| nalgebra::Vector3::new(c[0], c[1], c[2]))
                        .collect(),
                };
                let mut cam9 = [0.0; 9];
                cam9.copy_from_slice(&v[3 * joints..]);
                let lm = camera::project(&pose, &CameraParams::from_packed(&cam9), cam)
                    .expect("probe stays in front of the camera");
                lm.points
                    .iter()
                    .enumerate()
                    .map(|(j, p)| w[2 * j] * p.x + w[2 * j + 1] * p.y)
                    .sum()
            };
            let jac = camera::projection_jacobian(&pose, &camera_params, cam)?;
            let mut analytic = vec![0.0; x.len()];
            for j in 0..joints {
                for axis in 0..3 {
                    analytic[3 * j + axis] = w[2 * j] * jac.wrt_pose[j][(0, axis)]
                        + w[2 * j + 1] * jac.wrt_pose[j][(1, axis)];
                }
            }
            for col in 0..9 {
                analytic[3 * joints + col] = (0..2 * joints)
                    .map(|r| w[r] * jac.wrt_camera[(r, col)])
                    .sum();
            }
            let fd = central_diff(eval, &x, eps);
            Ok(report(stage, seed, eps, &analytic, &fd))
        }
        GradStage::Maps => {
            let pose = fk::forward_kinematics(&params, tree)?;
            let lm = camera::project(&pose, &camera_params, cam)?;
            let pixels = map_config.lattice.pixels();
            let heat_w = weights(joints * pixels);
            let aff_w = weights(tree.limb_count() * pixels);
            let x = lm.flat();
            let eval = |v: &[f64]| {
                let lm = Landmarks2D {
                    points: v
                        .chunks_exact(2)
                        .map(|c| Vector2::new(c[0], c[1]))
                        .collect(),
                };
                let maps = maps::render_spatial_maps(&lm, tree, map_config).expect("valid config");
                let heat: f64 = maps
                    .heat
                    .channels
                    .iter()
                    .flatten()
                    .zip(&heat_w)
                    .map(|(v, w)| v * w)
                    .sum();
                let aff: f64 = maps
                    .affinity
                    .channels
                    .iter()
                    .flatten()
                    .zip(&aff_w)
                    .map(|(v, w)| v * w)
                    .sum();
                heat + aff
            };
            let analytic_vec = {
                let mut cot_heat = MapStack::zeros(map_config.lattice, joints);
                let mut cot_aff = MapStack::zeros(map_config.lattice, tree.limb_count());
                for (c, ch) in cot_heat.channels.iter_mut().enumerate() {
                    ch.copy_from_slice(&heat_w[c * pixels..(c + 1) * pixels]);
                }
                for (c, ch) in cot_aff.channels.iter_mut().enumerate() {
                    ch.copy_from_slice(&aff_w[c * pixels..(c + 1) * pixels]);
                }
                maps::maps_vjp(
                    &lm,
                    tree.limbs(),
                    map_config,
                    Some(&cot_heat),
                    Some(&cot_aff),
                )?
            };
            let analytic: Vec<f64> = analytic_vec.iter().flat_map(|g| [g.x, g.y]).collect();
            let fd = central_diff(eval, &x, eps);
            Ok(report(stage, seed, eps, &analytic, &fd))
        }
        GradStage::FullChain => {
            let pixels = map_config.lattice.pixels();
            let heat_w = weights(joints * pixels);
            let aff_w = weights(tree.limb_count() * pixels);
            let packed_len = tree.packed_len();
            let mut x = params.pack();
            x.extend_from_slice(&camera_params.pack());
            let eval = |v: &[f64]| {
                let pose =
                    fk::forward_from_packed_raw(&v[..packed_len], tree).expect("finite probe");
                let mut cam9 = [0.0; 9];
                cam9.copy_from_slice(&v[packed_len..]);
                let lm = camera::project(&pose, &CameraParams::from_packed(&cam9), cam)
                    .expect("probe stays in front of the camera");
                let maps = maps::render_spatial_maps(&lm, tree, map_config).expect("valid config");
                let heat: f64 = maps
                    .heat
                    .channels
                    .iter()
                    .flatten()
                    .zip(&heat_w)
                    .map(|(v, w)| v * w)
                    .sum();
                let aff: f64 = maps
                    .affinity
                    .channels
                    .iter()
                    .flatten()
                    .zip(&aff_w)
                    .map(|(v, w)| v * w)
                    .sum();
                heat + aff
            };
            let analytic = {
                let pose = fk::forward_kinematics(&params, tree)?;
                let lm = camera::project(&pose, &camera_params, cam)?;
                let proj_jac = camera::projection_jacobian(&pose, &camera_params, cam)?;
                let mut cot_heat = MapStack::zeros(map_config.lattice, joints);
                let mut cot_aff = MapStack::zeros(map_config.lattice, tree.limb_count());
                for (c, ch) in cot_heat.channels.iter_mut().enumerate() {
                    ch.copy_from_slice(&heat_w[c * pixels..(c + 1) * pixels]);
                }
                for (c, ch) in cot_aff.channels.iter_mut().enumerate() {
                    ch.copy_from_slice(&aff_w[c * pixels..(c + 1) * pixels]);
                }
                let grad_lm = maps::maps_vjp(
                    &lm,
                    tree.limbs(),
                    map_config,
                    Some(&cot_heat),
                    Some(&cot_aff),
                )?;
                pipeline::pull_back_landmark_gradient(&grad_lm, &params, &pose, &proj_jac, tree)?
            };
            let fd = central_diff(eval, &x, eps);
            Ok(report(stage, seed, eps, analytic.as_slice(), &fd))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_h36m_tree;

    fn perturb_directions(
        params: &LocalKinematicParams,
        max_angle: f64,
        seed: u64,
    ) -> LocalKinematicParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = params.clone();
        for d in &mut out.bone_dirs {
            // rotate by a random angle <= max_angle about a random axis
            let axis = nalgebra::Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let angle = rng.random_range(0.0..max_angle);
            let rot =
                nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            *d = (rot * *d).normalize();
        }
        out
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let tree = default_h36m_tree();
        let (params, camera_params) = crate::synth::synth_pose(1, &tree);
        let cam = PerspectiveCamera::default();
        let pose = fk::forward_kinematics(&params, &tree).unwrap();
        let target = camera::project(&pose, &camera_params, &cam).unwrap();
        let result = fit_pose_to_landmarks(
            &target,
            &tree,
            (&params, &camera_params),
            &cam,
            &FitConfig::default(),
        )
        .unwrap();
        assert!(result.converged);
        assert_eq!(result.objective_trace[0], 0.0);
        assert!(result.final_reprojection_error_px < 1e-9);
    }

    #[test]
    fn perturbed_init_recovers_landmarks() {
        let tree = default_h36m_tree();
        let (truth, camera_params) = crate::synth::synth_pose(3, &tree);
        let cam = PerspectiveCamera::default();
        let pose = fk::forward_kinematics(&truth, &tree).unwrap();
        let target = camera::project(&pose, &camera_params, &cam).unwrap();
        let init = perturb_directions(&truth, 0.2, 3);
        let result = fit_pose_to_landmarks(
            &target,
            &tree,
            (&init, &camera_params),
            &cam,
            &FitConfig {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            result.final_reprojection_error_px < 2.0,
            "reprojection error {} px",
            result.final_reprojection_error_px
        );
    }

    #[test]
    fn trace_is_strictly_decreasing_and_constraints_hold() {
        let tree = default_h36m_tree();
        let (truth, camera_params) = crate::synth::synth_pose(8, &tree);
        let cam = PerspectiveCamera::default();
        let pose = fk::forward_kinematics(&truth, &tree).unwrap();
        let target = camera::project(&pose, &camera_params, &cam).unwrap();
        let init = perturb_directions(&truth, 0.3, 8);
        let result = fit_pose_to_landmarks(
            &target,
            &tree,
            (&init, &camera_params),
            &cam,
            &FitConfig {
                max_iters: 50,
                tol: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for w in result.objective_trace.windows(2) {
            assert!(w[1] < w[0], "trace must strictly decrease: {w:?}");
        }
        for d in &result.params.bone_dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
        }
        for pair in result.camera.angles_sincos {
            let n = (pair[0] * pair[0] + pair[1] * pair[1]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_target_terminates_without_error() {
        let tree = default_h36m_tree();
        let (init, camera_params) = crate::synth::synth_pose(4, &tree);
        let cam = PerspectiveCamera::default();
        let target = Landmarks2D {
            points: vec![nalgebra::Vector2::new(0.5, 0.5); tree.joint_count()],
        };
        let result = fit_pose_to_landmarks(
            &target,
            &tree,
            (&init, &camera_params),
            &cam,
            &FitConfig {
                max_iters: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(result.objective_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn heatmap_fixed_point_is_zero_objective() {
        let tree = default_h36m_tree();
        let (params, camera_params) = crate::synth::synth_pose(2, &tree);
        let cam = PerspectiveCamera::default();
        let map_config = MapConfig {
            lattice: maps::Lattice::new(32, 32),
            ..Default::default()
        };
        let out = pipeline::forward(&params, &camera_params, &tree, &cam, &map_config).unwrap();
        let result = fit_pose_to_heatmaps(
            &out.maps.heat,
            &tree,
            (&params, &camera_params),
            &cam,
            &map_config,
            &FitConfig {
                objective: Objective::HeatmapL2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(result.converged);
        assert_eq!(result.objective_trace[0], 0.0);
    }

    #[test]
    fn heatmap_fit_recovers_from_perturbation() {
        let tree = default_h36m_tree();
        let (truth, camera_params) = crate::synth::synth_pose(4, &tree);
        let cam = PerspectiveCamera::default();
        let map_config = MapConfig {
            lattice: maps::Lattice::new(32, 32),
            ..Default::default()
        };
        let out = pipeline::forward(&truth, &camera_params, &tree, &cam, &map_config).unwrap();
        let init = perturb_directions(&truth, 0.1, 4);
        let result = fit_pose_to_heatmaps(
            &out.maps.heat,
            &tree,
            (&init, &camera_params),
            &cam,
            &map_config,
            &FitConfig {
                objective: Objective::HeatmapL2,
                max_iters: 800,
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let final_lm = camera::project(
            &fk::forward_kinematics(&result.params, &tree).unwrap(),
            &result.camera,
            &cam,
        )
        .unwrap();
        let truth_lm = camera::project(
            &fk::forward_kinematics(&truth, &tree).unwrap(),
            &camera_params,
            &cam,
        )
        .unwrap();
        let err = mean_reprojection_error_px(&final_lm, &truth_lm);
        assert!(err < 3.0, "landmark error {err} px");
    }

    #[test]
    fn heatmap_fit_tolerates_sigma_mismatch() {
        let tree = default_h36m_tree();
        let (truth, camera_params) = crate::synth::synth_pose(4, &tree);
        let cam = PerspectiveCamera::default();
        let lattice = maps::Lattice::new(32, 32);
        let target_cfg = MapConfig {
            lattice,
            sigma: 2.5,
            ..Default::default()
        };
        let model_cfg = MapConfig {
            lattice,
            sigma: 2.0,
            ..Default::default()
        };
        let out = pipeline::forward(&truth, &camera_params, &tree, &cam, &target_cfg).unwrap();
        let init = perturb_directions(&truth, 0.1, 14);
        let result = fit_pose_to_heatmaps(
            &out.maps.heat,
            &tree,
            (&init, &camera_params),
            &cam,
            &model_cfg,
            &FitConfig {
                objective: Objective::HeatmapL2,
                max_iters: 800,
                seed: 14,
                ..Default::default()
            },
        )
        .unwrap();
        let final_lm = camera::project(
            &fk::forward_kinematics(&result.params, &tree).unwrap(),
            &result.camera,
            &cam,
        )
        .unwrap();
        let truth_lm = camera::project(
            &fk::forward_kinematics(&truth, &tree).unwrap(),
            &camera_params,
            &cam,
        )
        .unwrap();
        let err = mean_reprojection_error_px(&final_lm, &truth_lm);
        assert!(err < 5.0, "landmark error {err} px");
    }

    #[test]
    fn gradcheck_passes_on_every_stage() {
        let tree = default_h36m_tree();
        let cam = PerspectiveCamera::default();
        let map_config = MapConfig {
            lattice: maps::Lattice::new(20, 20),
            ..Default::default()
        };
        for (stage, eps, bound) in [
            (GradStage::Fk, 1e-6, 1e-6),
            (GradStage::Project, 1e-6, 1e-5),
            (GradStage::Maps, 5e-7, 1e-5),
            (GradStage::FullChain, 1e-5, 1e-5),
        ] {
            let report = gradcheck(stage, 7, eps, &tree, &cam, &map_config).unwrap();
            assert!(
                report.max_error < bound,
                "{} max error {}",
                stage.name(),
                report.max_error
            );
        }
        // whole chain again at a second seed
        let report = gradcheck(GradStage::FullChain, 13, 1e-5, &tree, &cam, &map_config).unwrap();
        assert!(
            report.max_error < 1e-5,
            "full_chain seed 13: {}",
            report.max_error
        );
    }

    #[test]
    fn gradcheck_rejects_bad_eps() {
        let tree = default_h36m_tree();
        let cam = PerspectiveCamera::default();
        let cfg = MapConfig::default();
        assert!(matches!(
            gradcheck(GradStage::Fk, 0, 1e-2, &tree, &cam, &cfg),
            Err(FitError::BadEps(_))
        ));
    }

    #[test]
    fn gradcheck_handles_critical_points() {
        // A landmark exactly on a lattice pixel makes that pixel's
        // derivative vanish; the absolute fallback must keep the check
        // meaningful rather than dividing by ~0.
        assert_eq!(fd_error(0.0, 1e-9), 1e-9);
        assert!(fd_error(1.0, 1.0 + 1e-7) < 1e-6);
    }

    #[test]
    fn multi_start_picks_the_best_restart() {
        let tree = default_h36m_tree();
        let (truth, camera_params) = crate::synth::synth_pose(42, &tree);
        let cam = PerspectiveCamera::default();
        let pose = fk::forward_kinematics(&truth, &tree).unwrap();
        let target = camera::project(&pose, &camera_params, &cam).unwrap();
        let config = FitConfig {
            max_iters: 300,
            ..Default::default()
        };
        let best = fit_multi_start(&target, &tree, &cam, &config, 4).unwrap();
        let single = {
            let (params, camera_params) = crate::synth::synth_pose(config.seed, &tree);
            fit_pose_to_landmarks(&target, &tree, (&params, &camera_params), &cam, &config).unwrap()
        };
        let best_obj = best.objective_trace.last().unwrap();
        let single_obj = single.objective_trace.last().unwrap();
        assert!(best_obj <= single_obj);
    }
}
