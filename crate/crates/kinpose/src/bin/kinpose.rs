//! Command-line front end: every pipeline stage on files. All logic lives
//! in the library; this binary parses arguments, merges configuration
//! (flags > config file > defaults), moves bytes and sets the exit code
//! (0 ok, 1 validation error, 2 runtime error).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use kinpose::camera::PerspectiveCamera;
use kinpose::ik::{self, FitConfig, GradStage, Objective};
use kinpose::io;
use kinpose::maps::{Lattice, MapConfig, MapStack};
use kinpose::skeleton::{default_h36m_tree, CameraParams, KinematicTree, LocalKinematicParams};
use kinpose::video::{self, Clip, ManifestConfig};

#[derive(Parser)]
#[command(
    name = "kinpose",
    version,
    about = "Differentiable kinematic pose pipeline"
)]
struct Cli {
    /// Tree config JSON (defaults to the embedded 17-joint skeleton).
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Seed for synthetic generation and fitting restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file with defaults for lattice/sigma/intrinsics/weights.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress diagnostics on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic random pose/camera pair.
    Synth {
        /// Write the kinematic parameters here (default: stdout, combined).
        #[arg(long)]
        out_params: Option<PathBuf>,
        /// Write the camera parameters here.
        #[arg(long)]
        out_camera: Option<PathBuf>,
    },
    /// Forward kinematics: parameter JSON to 3D pose JSON.
    Fk {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Camera projection: pose JSON + camera JSON to landmarks JSON.
    Project {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[command(flatten)]
        intrinsics: IntrinsicsArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render landmarks into heat/affinity maps (PGM files + raw dump).
    Render {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        maps: MapArgs,
    },
    /// Fit pose and camera to target landmarks or heat-maps.
    Fit {
        /// Target landmarks JSON.
        #[arg(long, conflicts_with = "target_maps")]
        target: Option<PathBuf>,
        /// Target map dump (heat channels are the first J channels).
        #[arg(long)]
        target_maps: Option<PathBuf>,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Independent seeded restarts; best final objective wins.
        #[arg(long)]
        restarts: Option<usize>,
        /// Optional warm start (otherwise seeded random restarts).
        #[arg(long, requires = "init_camera")]
        init_params: Option<PathBuf>,
        #[arg(long, requires = "init_params")]
        init_camera: Option<PathBuf>,
        #[command(flatten)]
        intrinsics: IntrinsicsArgs,
        #[command(flatten)]
        maps: MapArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate loss terms on landmark/feature files.
    Loss {
        #[command(subcommand)]
        kind: LossCommand,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        /// One of fk|project|maps|full_chain (default: all stages).
        #[arg(long)]
        stage: Option<GradStage>,
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        maps: MapArgs,
    },
    /// Extract a temporal-median background from a clip directory.
    Bgextract {
        #[arg(long)]
        clip: PathBuf,
        /// Center frame index (default: middle of the clip).
        #[arg(long)]
        center: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Print the motion statistics of a clip directory.
    Score {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Classify a clip as Paired or Unpaired.
    Classify {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Separate clips into paired/unpaired tuples and write backgrounds.
    Manifest {
        /// Clip directories (each a set of .ppm frames).
        #[arg(required = true)]
        clips: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        gap_s: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
    },
}

#[derive(Subcommand)]
enum LossCommand {
    Paired {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        landmarks_hat: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        features_hat: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        image_diff: f64,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
    },
    Unpaired {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        landmarks_tilde: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        features_tilde: PathBuf,
        #[arg(long)]
        lambda2: Option<f64>,
    },
    Prior {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        pose_gt: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        landmarks_gt: PathBuf,
        #[arg(long)]
        w3: Option<f64>,
        #[arg(long)]
        w2: Option<f64>,
    },
}

#[derive(Args)]
struct IntrinsicsArgs {
    /// Intrinsics override JSON: {focal, principal_point, z_min}.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    focal: Option<f64>,
    #[arg(long)]
    z_min: Option<f64>,
}

#[derive(Args)]
struct MapArgs {
    /// Lattice as HEIGHTxWIDTH, e.g. 56x56.
    #[arg(long, value_parser = parse_lattice)]
    lattice: Option<Lattice>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Optional truncation radius in sigmas (dense when omitted).
    #[arg(long)]
    window_sigmas: Option<f64>,
}

fn parse_lattice(s: &str) -> Result<Lattice, String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    Ok(Lattice::new(h, w))
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "landmark_l2" => Ok(Objective::LandmarkL2),
        "landmark_l1" => Ok(Objective::LandmarkL1),
        "heatmap_l2" => Ok(Objective::HeatmapL2),
        other => Err(format!(
            "unknown objective `{other}` (landmark_l2|landmark_l1|heatmap_l2)"
        )),
    }
}

/// Optional defaults loaded from `--config`; flags always win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    lattice: Option<[usize; 2]>,
    sigma: Option<f64>,
    sigma_y: Option<f64>,
    alpha: Option<f64>,
    window_sigmas: Option<f64>,
    focal: Option<f64>,
    principal_point: Option<[f64; 2]>,
    z_min: Option<f64>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    w3: Option<f64>,
    w2: Option<f64>,
    threshold: Option<f64>,
    gap_s: Option<f64>,
    window: Option<usize>,
    fps: Option<f64>,
    seed: Option<u64>,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

struct Context {
    tree: KinematicTree,
    tree_source: String,
    file: FileConfig,
    seed: u64,
    quiet: bool,
}

impl Context {
    fn new(cli: &Cli) -> CliResult<Self> {
        let (tree, tree_source) = match &cli.tree {
            Some(path) => (
                KinematicTree::from_json_file(path).map_err(CliError::validation)?,
                path.display().to_string(),
            ),
            None => (default_h36m_tree(), "embedded".to_string()),
        };
        let file = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(CliError::validation)?;
                serde_json::from_str(&text).map_err(CliError::validation)?
            }
            None => FileConfig::default(),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        Ok(Self {
            tree,
            tree_source,
            file,
            seed,
            quiet: cli.quiet,
        })
    }

    fn map_config(&self, args: &MapArgs) -> MapConfig {
        let defaults = MapConfig::default();
        MapConfig {
            lattice: args
                .lattice
                .or_else(|| self.file.lattice.map(|[h, w]| Lattice::new(h, w)))
                .unwrap_or(defaults.lattice),
            sigma: args.sigma.or(self.file.sigma).unwrap_or(defaults.sigma),
            sigma_y: args
                .sigma_y
                .or(self.file.sigma_y)
                .unwrap_or(defaults.sigma_y),
            alpha: args.alpha.or(self.file.alpha).unwrap_or(defaults.alpha),
            window_sigmas: args.window_sigmas.or(self.file.window_sigmas),
        }
    }

    fn intrinsics(&self, args: &IntrinsicsArgs) -> CliResult<PerspectiveCamera> {
        let mut cam = PerspectiveCamera::default();
        if let Some([px, py]) = self.file.principal_point {
            cam.principal_point = (px, py);
        }
        if let Some(f) = self.file.focal {
            cam.focal = f;
        }
        if let Some(z) = self.file.z_min {
            cam.z_min = z;
        }
        if let Some(path) = &args.intrinsics {
            let text = std::fs::read_to_string(path).map_err(CliError::validation)?;
            cam = serde_json::from_str(&text).map_err(CliError::validation)?;
        }
        if let Some(f) = args.focal {
            cam.focal = f;
        }
        if let Some(z) = args.z_min {
            cam.z_min = z;
        }
        cam.validate().map_err(CliError::validation)?;
        Ok(cam)
    }

    fn info(&self, message: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("kinpose: {message}");
        }
    }

    fn meta(&self, subcommand: &str, extra: Value) -> Value {
        let mut meta = json!({
            "subcommand": subcommand,
            "tree": self.tree_source,
            "seed": self.seed,
        });
        if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
            for (k, v) in e {
                m.insert(k.clone(), v.clone());
            }
        }
        meta
    }
}

fn emit<T: serde::Serialize>(out: &Option<PathBuf>, doc: &T) -> CliResult<()> {
    match out {
        Some(path) => io::write_json(path, doc).map_err(CliError::runtime),
        None => {
            let text = serde_json::to_string_pretty(doc).map_err(CliError::runtime)?;
            println!("{text}");
            Ok(())
        }
    }
}

fn meta_for_maps(cfg: &MapConfig) -> Value {
    json!({
        "lattice": [cfg.lattice.height, cfg.lattice.width],
        "sigma": cfg.sigma,
        "sigma_y": cfg.sigma_y,
        "alpha": cfg.alpha,
        "window_sigmas": cfg.window_sigmas,
    })
}

fn meta_for_intrinsics(cam: &PerspectiveCamera) -> Value {
    json!({
        "focal": cam.focal,
        "principal_point": [cam.principal_point.0, cam.principal_point.1],
        "z_min": cam.z_min,
    })
}

fn load_clip(dir: &Path, fps: f64) -> CliResult<Clip> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::validation(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Validation(format!(
            "no .ppm frames in {}",
            dir.display()
        )));
    }
    let frames = paths
        .iter()
        .map(|p| io::read_ppm(p).map_err(CliError::validation))
        .collect::<CliResult<Vec<_>>>()?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Clip::new(frames, fps, id).map_err(CliError::validation)
}

fn read_features(path: &Path) -> CliResult<kinpose::losses::FeatureVector> {
    let text = std::fs::read_to_string(path).map_err(CliError::validation)?;
    let values: Vec<f64> = serde_json::from_str(&text).map_err(CliError::validation)?;
    Ok(kinpose::losses::FeatureVector(values))
}

fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Synth {
            out_params,
            out_camera,
        } => {
            let (params, camera) = kinpose::synth::synth_pose(ctx.seed, &ctx.tree);
            let meta = ctx.meta("synth", json!({}));
            let pdoc = io::params_to_doc(&params, &ctx.tree, meta.clone());
            let cdoc = io::camera_to_doc(&camera, meta);
            match (out_params, out_camera) {
                (None, None) => {
                    let combined = json!({
                        "meta": ctx.meta("synth", json!({})),
                        "params": serde_json::to_value(&pdoc).map_err(CliError::runtime)?,
                        "camera": serde_json::to_value(&cdoc).map_err(CliError::runtime)?,
                    });
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&combined).map_err(CliError::runtime)?
                    );
                }
                _ => {
                    if let Some(path) = out_params {
                        io::write_json(path, &pdoc).map_err(CliError::runtime)?;
                    }
                    if let Some(path) = out_camera {
                        io::write_json(path, &cdoc).map_err(CliError::runtime)?;
                    }
                }
            }
            Ok(())
        }

        Command::Fk { params, out } => {
            let doc: io::ParamsDoc = io::read_json(params).map_err(CliError::validation)?;
            let params = io::params_from_doc(&doc, &ctx.tree).map_err(CliError::validation)?;
            let pose = kinpose::fk::forward_kinematics(&params, &ctx.tree)
                .map_err(CliError::validation)?;
            emit(
                out,
                &io::pose_to_doc(&pose, &ctx.tree, ctx.meta("fk", json!({}))),
            )
        }

        Command::Project {
            pose,
            camera,
            intrinsics,
            out,
        } => {
            let pose_doc: io::PoseDoc = io::read_json(pose).map_err(CliError::validation)?;
            let pose = io::pose_from_doc(&pose_doc, &ctx.tree).map_err(CliError::validation)?;
            let camera_doc: io::CameraDoc = io::read_json(camera).map_err(CliError::validation)?;
            let camera = io::camera_from_doc(&camera_doc);
            let cam = ctx.intrinsics(intrinsics)?;
            let landmarks =
                kinpose::camera::project(&pose, &camera, &cam).map_err(CliError::runtime)?;
            let meta = ctx.meta("project", meta_for_intrinsics(&cam));
            emit(out, &io::landmarks_to_doc(&landmarks, &ctx.tree, meta))
        }

        Command::Render {
            landmarks,
            out_dir,
            maps,
        } => {
            let doc: io::LandmarksDoc = io::read_json(landmarks).map_err(CliError::validation)?;
            let lm = io::landmarks_from_doc(&doc, &ctx.tree).map_err(CliError::validation)?;
            let cfg = ctx.map_config(maps);
            let rendered = kinpose::maps::render_spatial_maps(&lm, &ctx.tree, &cfg)
                .map_err(CliError::validation)?;
            std::fs::create_dir_all(out_dir).map_err(CliError::runtime)?;
            for (j, channel) in rendered.heat.channels.iter().enumerate() {
                let path = out_dir.join(format!("hm_{j:02}_{}.pgm", ctx.tree.name(j)));
                io::write_pgm16(path, channel, cfg.lattice).map_err(CliError::runtime)?;
            }
            for (l, channel) in rendered.affinity.channels.iter().enumerate() {
                let (a, b) = ctx.tree.limbs()[l];
                let path = out_dir.join(format!(
                    "am_{l:02}_{}_{}.pgm",
                    ctx.tree.name(a),
                    ctx.tree.name(b)
                ));
                io::write_pgm16(path, channel, cfg.lattice).map_err(CliError::runtime)?;
            }
            io::write_map_dump(
                out_dir.join("maps.bin"),
                &[&rendered.heat, &rendered.affinity],
            )
            .map_err(CliError::runtime)?;
            let meta = ctx.meta("render", meta_for_maps(&cfg));
            io::write_json(out_dir.join("render_meta.json"), &json!({ "meta": meta }))
                .map_err(CliError::runtime)?;
            ctx.info(format!(
                "wrote {} heat + {} affinity channels to {}",
                rendered.heat.channel_count(),
                rendered.affinity.channel_count(),
                out_dir.display()
            ));
            Ok(())
        }

        Command::Fit {
            target,
            target_maps,
            objective,
            max_iters,
            step_size,
            tol,
            restarts,
            init_params,
            init_camera,
            intrinsics,
            maps,
            out,
        } => {
            let cam = ctx.intrinsics(intrinsics)?;
            let map_cfg = ctx.map_config(maps);
            let defaults = FitConfig::default();
            let config = FitConfig {
                max_iters: max_iters.unwrap_or(defaults.max_iters),
                step_size: step_size.unwrap_or(defaults.step_size),
                objective: objective.unwrap_or(match target_maps {
                    Some(_) => Objective::HeatmapL2,
                    None => Objective::LandmarkL2,
                }),
                tol: tol.unwrap_or(defaults.tol),
                seed: ctx.seed,
            };
            let restarts = restarts.unwrap_or(8).max(1);

            let init = match (init_params, init_camera) {
                (Some(p), Some(c)) => {
                    let pd: io::ParamsDoc = io::read_json(p).map_err(CliError::validation)?;
                    let cd: io::CameraDoc = io::read_json(c).map_err(CliError::validation)?;
                    Some((
                        io::params_from_doc(&pd, &ctx.tree).map_err(CliError::validation)?,
                        io::camera_from_doc(&cd),
                    ))
                }
                _ => None,
            };

            let result = match (target, target_maps) {
                (Some(path), None) => {
                    let doc: io::LandmarksDoc =
                        io::read_json(path).map_err(CliError::validation)?;
                    let target =
                        io::landmarks_from_doc(&doc, &ctx.tree).map_err(CliError::validation)?;
                    if config.objective == Objective::HeatmapL2 {
                        return Err(CliError::Validation(
                            "heatmap_l2 needs --target-maps, not --target".into(),
                        ));
                    }
                    match &init {
                        Some((p, c)) => {
                            ik::fit_pose_to_landmarks(&target, &ctx.tree, (p, c), &cam, &config)
                                .map_err(CliError::runtime)?
                        }
                        None => ik::fit_multi_start(&target, &ctx.tree, &cam, &config, restarts)
                            .map_err(CliError::runtime)?,
                    }
                }
                (None, Some(path)) => {
                    let dump = io::read_map_dump(path).map_err(CliError::validation)?;
                    let joints = ctx.tree.joint_count();
                    if dump.channel_count() < joints {
                        return Err(CliError::Validation(format!(
                            "map dump has {} channels, need at least {joints}",
                            dump.channel_count()
                        )));
                    }
                    let heat = MapStack {
                        lattice: dump.lattice,
                        channels: dump.channels[..joints].to_vec(),
                    };
                    let mut best: Option<ik::FitResult> = None;
                    let starts: Vec<(LocalKinematicParams, CameraParams)> = match &init {
                        Some((p, c)) => vec![(p.clone(), c.clone())],
                        None => (0..restarts)
                            .map(|k| kinpose::synth::synth_pose(config.seed + k as u64, &ctx.tree))
                            .collect(),
                    };
                    for (k, (p, c)) in starts.iter().enumerate() {
                        let run_config = FitConfig {
                            seed: config.seed + k as u64,
                            objective: Objective::HeatmapL2,
                            ..config.clone()
                        };
                        let result = ik::fit_pose_to_heatmaps(
                            &heat,
                            &ctx.tree,
                            (p, c),
                            &cam,
                            &map_cfg,
                            &run_config,
                        )
                        .map_err(CliError::runtime)?;
                        let better = match &best {
                            None => true,
                            Some(b) => result.objective_trace.last() < b.objective_trace.last(),
                        };
                        if better {
                            best = Some(result);
                        }
                    }
                    best.expect("at least one start")
                }
                _ => {
                    return Err(CliError::Validation(
                        "exactly one of --target or --target-maps is required".into(),
                    ))
                }
            };

            ctx.info(format!(
                "fit finished: converged={} error={:.4}px iterations={}",
                result.converged,
                result.final_reprojection_error_px,
                result.objective_trace.len() - 1
            ));
            let meta = ctx.meta(
                "fit",
                json!({
                    "objective": match config.objective {
                        Objective::LandmarkL2 => "landmark_l2",
                        Objective::LandmarkL1 => "landmark_l1",
                        Objective::HeatmapL2 => "heatmap_l2",
                    },
                    "max_iters": config.max_iters,
                    "step_size": config.step_size,
                    "tol": config.tol,
                    "restarts": restarts,
                    "intrinsics": meta_for_intrinsics(&cam),
                }),
            );
            let doc = json!({
                "meta": meta,
                "converged": result.converged,
                "line_search_failed": result.line_search_failed,
                "final_reprojection_error_px": result.final_reprojection_error_px,
                "iterations": result.objective_trace.len() - 1,
                "best_seed": result.seed,
                "objective_trace": result.objective_trace,
                "params": io::params_to_doc(&result.params, &ctx.tree, Value::Null),
                "camera": io::camera_to_doc(&result.camera, Value::Null),
            });
            emit(out, &doc)
        }

        Command::Loss { kind } => {
            let (doc, label): (Value, &str) = match kind {
                LossCommand::Paired {
                    landmarks,
                    landmarks_hat,
                    features,
                    features_hat,
                    image_diff,
                    lambda1,
                    lambda2,
                } => {
                    let l1 = lambda1.or(ctx.file.lambda1).unwrap_or(1.0);
                    let l2 = lambda2.or(ctx.file.lambda2).unwrap_or(1.0);
                    let p = load_landmarks(&ctx, landmarks)?;
                    let p_hat = load_landmarks(&ctx, landmarks_hat)?;
                    let f = read_features(features)?;
                    let f_hat = read_features(features_hat)?;
                    let pose_term = kinpose::losses::mean_abs(&p.flat(), &p_hat.flat())
                        .map_err(CliError::validation)?;
                    let feat_term =
                        kinpose::losses::mean_abs(&f.0, &f_hat.0).map_err(CliError::validation)?;
                    let total =
                        kinpose::losses::loss_paired(*image_diff, &p, &p_hat, &f, &f_hat, l1, l2)
                            .map_err(CliError::validation)?;
                    (
                        json!({
                            "terms": {
                                "image": image_diff,
                                "pose": pose_term,
                                "feature": feat_term,
                            },
                            "lambda1": l1,
                            "lambda2": l2,
                            "total": total,
                        }),
                        "paired",
                    )
                }
                LossCommand::Unpaired {
                    landmarks,
                    landmarks_tilde,
                    features,
                    features_tilde,
                    lambda2,
                } => {
                    let l2 = lambda2.or(ctx.file.lambda2).unwrap_or(1.0);
                    let p = load_landmarks(&ctx, landmarks)?;
                    let p_tilde = load_landmarks(&ctx, landmarks_tilde)?;
                    let f = read_features(features)?;
                    let f_tilde = read_features(features_tilde)?;
                    let pose_term = kinpose::losses::mean_abs(&p.flat(), &p_tilde.flat())
                        .map_err(CliError::validation)?;
                    let feat_term = kinpose::losses::mean_abs(&f.0, &f_tilde.0)
                        .map_err(CliError::validation)?;
                    let total = kinpose::losses::loss_unpaired(&p, &p_tilde, &f, &f_tilde, l2)
                        .map_err(CliError::validation)?;
                    (
                        json!({
                            "terms": { "pose": pose_term, "feature": feat_term },
                            "lambda2": l2,
                            "total": total,
                        }),
                        "unpaired",
                    )
                }
                LossCommand::Prior {
                    pose,
                    pose_gt,
                    landmarks,
                    landmarks_gt,
                    w3,
                    w2,
                } => {
                    let w3 = w3.or(ctx.file.w3).unwrap_or(1.0);
                    let w2 = w2.or(ctx.file.w2).unwrap_or(1.0);
                    let p3_doc: io::PoseDoc = io::read_json(pose).map_err(CliError::validation)?;
                    let p3 = io::pose_from_doc(&p3_doc, &ctx.tree).map_err(CliError::validation)?;
                    let p3_gt_doc: io::PoseDoc =
                        io::read_json(pose_gt).map_err(CliError::validation)?;
                    let p3_gt =
                        io::pose_from_doc(&p3_gt_doc, &ctx.tree).map_err(CliError::validation)?;
                    let p2 = load_landmarks(&ctx, landmarks)?;
                    let p2_gt = load_landmarks(&ctx, landmarks_gt)?;
                    let total = kinpose::losses::loss_prior(&p3, &p3_gt, &p2, &p2_gt, w3, w2)
                        .map_err(CliError::validation)?;
                    let flat3 = |p: &kinpose::skeleton::Pose3D| -> Vec<f64> {
                        p.joints.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
                    };
                    let term3 = kinpose::losses::mean_abs(&flat3(&p3), &flat3(&p3_gt))
                        .map_err(CliError::validation)?;
                    let term2 = kinpose::losses::mean_abs(&p2.flat(), &p2_gt.flat())
                        .map_err(CliError::validation)?;
                    (
                        json!({
                            "terms": { "pose3d": term3, "pose2d": term2 },
                            "w3": w3,
                            "w2": w2,
                            "total": total,
                        }),
                        "prior",
                    )
                }
            };
            let mut out = json!({ "meta": ctx.meta("loss", json!({ "kind": label })) });
            if let (Some(o), Some(d)) = (out.as_object_mut(), doc.as_object()) {
                for (k, v) in d {
                    o.insert(k.clone(), v.clone());
                }
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&out).map_err(CliError::runtime)?
            );
            Ok(())
        }

        Command::Gradcheck { stage, eps, maps } => {
            let cam = ctx.intrinsics(&IntrinsicsArgs {
                intrinsics: None,
                focal: None,
                z_min: None,
            })?;
            let map_cfg = {
                let mut cfg = ctx.map_config(maps);
                if maps.lattice.is_none() && ctx.file.lattice.is_none() {
                    // finite differences re-render per coordinate; default
                    // to a lattice that keeps the full-chain check quick
                    cfg.lattice = Lattice::new(28, 28);
                }
                cfg
            };
            let stages: Vec<GradStage> = match stage {
                Some(s) => vec![*s],
                None => GradStage::ALL.to_vec(),
            };
            println!(
                "{:<12} {:>6} {:>10} {:>8} {:>14} {:>8}",
                "stage", "seed", "eps", "coords", "max_error", "status"
            );
            let mut worst: f64 = 0.0;
            for s in stages {
                let eps = eps.unwrap_or(match s {
                    GradStage::Fk | GradStage::Project => 1e-6,
                    GradStage::Maps => 5e-7,
                    GradStage::FullChain => 1e-5,
                });
                let report = ik::gradcheck(s, ctx.seed, eps, &ctx.tree, &cam, &map_cfg)
                    .map_err(CliError::validation)?;
                let status = if report.max_error < 1e-4 {
                    "ok"
                } else {
                    "FAIL"
                };
                println!(
                    "{:<12} {:>6} {:>10.1e} {:>8} {:>14.3e} {:>8}",
                    report.stage.name(),
                    report.seed,
                    report.eps,
                    report.coordinates,
                    report.max_error,
                    status
                );
                worst = worst.max(report.max_error);
            }
            if worst > 1e-4 {
                return Err(CliError::Validation(format!(
                    "gradient check failed: max error {worst:.3e}"
                )));
            }
            Ok(())
        }

        Command::Bgextract {
            clip,
            center,
            window,
            out,
            fps,
        } => {
            let fps = fps.or(ctx.file.fps).unwrap_or(10.0);
            let clip = load_clip(clip, fps)?;
            let center = center.unwrap_or(clip.frames.len() / 2);
            let window = window.or(ctx.file.window).unwrap_or(121);
            let bg =
                video::median_background(&clip, center, window).map_err(CliError::validation)?;
            io::write_ppm(out, &bg).map_err(CliError::runtime)?;
            ctx.info(format!(
                "background from {} frames around {center}",
                window.min(clip.frames.len())
            ));
            Ok(())
        }

        Command::Score { clip, fps } => {
            let fps = fps.or(ctx.file.fps).unwrap_or(10.0);
            let clip = load_clip(clip, fps)?;
            let stats = video::clip_motion_stats(&clip).map_err(CliError::validation)?;
            let doc = json!({
                "meta": ctx.meta("score", json!({ "fps": fps, "frames": clip.frames.len() })),
                "clip": clip.source_id,
                "score": stats.score,
                "mean_l2_to_median": stats.mean_l2_to_median,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).map_err(CliError::runtime)?
            );
            Ok(())
        }

        Command::Classify {
            clip,
            threshold,
            fps,
        } => {
            let fps = fps.or(ctx.file.fps).unwrap_or(10.0);
            let threshold = threshold.or(ctx.file.threshold).unwrap_or(0.02);
            if !(0.0 < threshold && threshold < 1.0) {
                return Err(CliError::Validation(format!(
                    "threshold must be in (0, 1), got {threshold}"
                )));
            }
            let clip = load_clip(clip, fps)?;
            let stats = video::clip_motion_stats(&clip).map_err(CliError::validation)?;
            let class = video::classify_clip(stats.score, threshold);
            let doc = json!({
                "meta": ctx.meta("classify", json!({ "fps": fps, "threshold": threshold })),
                "clip": clip.source_id,
                "score": stats.score,
                "class": class,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).map_err(CliError::runtime)?
            );
            Ok(())
        }

        Command::Manifest {
            clips,
            out_dir,
            threshold,
            gap_s,
            window,
            fps,
        } => {
            let fps = fps.or(ctx.file.fps).unwrap_or(10.0);
            let defaults = ManifestConfig::default();
            let config = ManifestConfig {
                threshold: threshold
                    .or(ctx.file.threshold)
                    .unwrap_or(defaults.threshold),
                gap_s: gap_s.or(ctx.file.gap_s).unwrap_or(defaults.gap_s),
                window: window.or(ctx.file.window).unwrap_or(defaults.window),
                min_duration_s: defaults.min_duration_s,
            };
            if !(0.0 < config.threshold && config.threshold < 1.0) {
                return Err(CliError::Validation(format!(
                    "threshold must be in (0, 1), got {}",
                    config.threshold
                )));
            }

            let mut loaded = Vec::new();
            let mut dirs = BTreeMap::new();
            for dir in clips {
                let clip = load_clip(dir, fps)?;
                if dirs
                    .insert(clip.source_id.clone(), dir.display().to_string())
                    .is_some()
                {
                    return Err(CliError::Validation(format!(
                        "duplicate clip id `{}`; directories must have distinct names",
                        clip.source_id
                    )));
                }
                loaded.push(clip);
            }
            let mut manifest =
                video::build_manifest(&loaded, &config).map_err(CliError::validation)?;
            for skipped in &manifest.meta.skipped {
                ctx.info(format!(
                    "skipping clip `{}`: {}",
                    skipped.clip, skipped.reason
                ));
            }
            manifest.meta.clip_dirs = dirs;

            std::fs::create_dir_all(out_dir).map_err(CliError::runtime)?;
            let mut written = std::collections::BTreeSet::new();
            for tuple in &manifest.paired {
                let key = (tuple.background.clip.clone(), tuple.background.index);
                if !written.insert(key) {
                    continue;
                }
                let clip = loaded
                    .iter()
                    .find(|c| c.source_id == tuple.background.clip)
                    .expect("manifest references loaded clips");
                let bg = video::median_background(clip, tuple.background.index, config.window)
                    .map_err(CliError::runtime)?;
                let path = out_dir.join(format!(
                    "bg_{}_{:06}.ppm",
                    tuple.background.clip, tuple.background.index
                ));
                io::write_ppm(path, &bg).map_err(CliError::runtime)?;
            }
            io::write_json(out_dir.join("manifest.json"), &manifest).map_err(CliError::runtime)?;
            ctx.info(format!(
                "manifest: {} paired, {} unpaired tuples from {} clips",
                manifest.paired.len(),
                manifest.unpaired.len(),
                loaded.len()
            ));
            Ok(())
        }
    }
}

fn load_landmarks(ctx: &Context, path: &Path) -> CliResult<kinpose::skeleton::Landmarks2D> {
    let doc: io::LandmarksDoc = io::read_json(path).map_err(CliError::validation)?;
    io::landmarks_from_doc(&doc, &ctx.tree).map_err(CliError::validation)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            eprintln!("kinpose: error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("kinpose: error: {message}");
            ExitCode::from(2)
        }
    }
}
