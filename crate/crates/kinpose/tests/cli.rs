//! End-to-end tests of the `kinpose` binary: exit codes, determinism,
//! file-based pipeline composition against the in-library results.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kinpose::io;
use kinpose::maps::Lattice;
use kinpose::skeleton::default_h36m_tree;
use kinpose::video::Frame;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kinpose"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn kinpose");
    assert!(
        out.status.success(),
        "kinpose {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn kinpose")
        .status
        .code()
        .unwrap_or(-1)
}

struct Pipeline {
    dir: tempfile::TempDir,
    params: PathBuf,
    camera: PathBuf,
    pose: PathBuf,
    landmarks: PathBuf,
}

fn run_pipeline(seed: &str) -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    let camera = dir.path().join("camera.json");
    let pose = dir.path().join("pose.json");
    let landmarks = dir.path().join("landmarks.json");
    run_ok(&[
        "synth",
        "--seed",
        seed,
        "--out-params",
        params.to_str().unwrap(),
        "--out-camera",
        camera.to_str().unwrap(),
    ]);
    run_ok(&[
        "fk",
        "--params",
        params.to_str().unwrap(),
        "--out",
        pose.to_str().unwrap(),
    ]);
    run_ok(&[
        "project",
        "--pose",
        pose.to_str().unwrap(),
        "--camera",
        camera.to_str().unwrap(),
        "--out",
        landmarks.to_str().unwrap(),
    ]);
    Pipeline {
        dir,
        params,
        camera,
        pose,
        landmarks,
    }
}

#[test]
fn synth_is_deterministic() {
    let a = run_ok(&["synth", "--seed", "9"]);
    let b = run_ok(&["synth", "--seed", "9"]);
    assert_eq!(a.stdout, b.stdout);
    let c = run_ok(&["synth", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn file_pipeline_matches_library_composition() {
    let tree = default_h36m_tree();
    let p = run_pipeline("0");

    let (params, camera) = kinpose::synth::synth_pose(0, &tree);
    let pose = kinpose::fk::forward_kinematics(&params, &tree).unwrap();
    let landmarks = kinpose::camera::project(&pose, &camera, &Default::default()).unwrap();

    let pose_doc: io::PoseDoc = io::read_json(&p.pose).unwrap();
    let from_file = io::pose_from_doc(&pose_doc, &tree).unwrap();
    assert_eq!(
        from_file, pose,
        "file pose must be bit-faithful to the library pose"
    );

    let lm_doc: io::LandmarksDoc = io::read_json(&p.landmarks).unwrap();
    let from_file = io::landmarks_from_doc(&lm_doc, &tree).unwrap();
    assert_eq!(from_file, landmarks, "file landmarks must be bit-faithful");
    drop(p);
}

#[test]
fn fk_output_passes_bone_length_check() {
    let tree = default_h36m_tree();
    let p = run_pipeline("5");
    let pose_doc: io::PoseDoc = io::read_json(&p.pose).unwrap();
    let pose = io::pose_from_doc(&pose_doc, &tree).unwrap();
    let neck = tree.rule_joints().neck;
    for j in 0..tree.joint_count() {
        let Some(parent) = tree.parent(j) else {
            continue;
        };
        if j == neck {
            continue;
        }
        let len = (pose.joints[j] - pose.joints[parent]).norm();
        assert!((len - tree.bone_length(j)).abs() < 1e-9);
    }
}

#[test]
fn rendered_peaks_sit_on_projected_landmarks() {
    let tree = default_h36m_tree();
    let p = run_pipeline("0");
    let maps_dir = p.dir.path().join("maps");
    run_ok(&[
        "render",
        "--landmarks",
        p.landmarks.to_str().unwrap(),
        "--out-dir",
        maps_dir.to_str().unwrap(),
        "--lattice",
        "56x56",
    ]);

    let lm_doc: io::LandmarksDoc = io::read_json(&p.landmarks).unwrap();
    let landmarks = io::landmarks_from_doc(&lm_doc, &tree).unwrap();
    for j in 0..tree.joint_count() {
        let path = maps_dir.join(format!("hm_{j:02}_{}.pgm", tree.name(j)));
        let (lattice, samples) = io::read_pgm16(&path).unwrap();
        assert_eq!(lattice, Lattice::new(56, 56));
        let peak = samples
            .iter()
            .enumerate()
            .max_by_key(|(_, &v)| v)
            .map(|(i, _)| (i % 56, i / 56))
            .unwrap();
        let (qx, qy) = lattice.to_lattice(landmarks.points[j]);
        assert!(
            (peak.0 as f64 - qx).abs() <= 1.0 && (peak.1 as f64 - qy).abs() <= 1.0,
            "joint {j} peak {peak:?} vs landmark ({qx:.2}, {qy:.2})"
        );
    }

    // the raw dump holds the same channels, heat first
    let dump = io::read_map_dump(maps_dir.join("maps.bin")).unwrap();
    assert_eq!(dump.channel_count(), 33);
}

#[test]
fn render_is_deterministic() {
    let p = run_pipeline("3");
    let dir_a = p.dir.path().join("a");
    let dir_b = p.dir.path().join("b");
    for dir in [&dir_a, &dir_b] {
        run_ok(&[
            "render",
            "--landmarks",
            p.landmarks.to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
            "--lattice",
            "24x24",
        ]);
    }
    let a = std::fs::read(dir_a.join("maps.bin")).unwrap();
    let b = std::fs::read(dir_b.join("maps.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn warm_start_fit_converges_immediately() {
    let p = run_pipeline("2");
    let out = p.dir.path().join("fit.json");
    run_ok(&[
        "fit",
        "--target",
        p.landmarks.to_str().unwrap(),
        "--init-params",
        p.params.to_str().unwrap(),
        "--init-camera",
        p.camera.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: serde_json::Value = io::read_json(&out).unwrap();
    assert_eq!(doc["converged"], serde_json::json!(true));
    assert_eq!(doc["iterations"], serde_json::json!(0));
    assert!(doc["final_reprojection_error_px"].as_f64().unwrap() < 1e-9);
}

#[test]
fn multi_start_fit_reaches_low_error() {
    let p = run_pipeline("0");
    let out = p.dir.path().join("fit.json");
    run_ok(&[
        "fit",
        "--target",
        p.landmarks.to_str().unwrap(),
        "--seed",
        "50",
        "--restarts",
        "8",
        "--max-iters",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: serde_json::Value = io::read_json(&out).unwrap();
    let err = doc["final_reprojection_error_px"].as_f64().unwrap();
    assert!(err < 5.0, "multi-start error {err} px");
    let trace = doc["objective_trace"].as_array().unwrap();
    assert!(trace.len() >= 2);
}

#[test]
fn fit_against_map_dump_converges_from_warm_start() {
    let p = run_pipeline("7");
    let maps_dir = p.dir.path().join("maps");
    run_ok(&[
        "render",
        "--landmarks",
        p.landmarks.to_str().unwrap(),
        "--out-dir",
        maps_dir.to_str().unwrap(),
        "--lattice",
        "32x32",
    ]);
    let out = p.dir.path().join("fit.json");
    run_ok(&[
        "fit",
        "--target-maps",
        maps_dir.join("maps.bin").to_str().unwrap(),
        "--objective",
        "heatmap_l2",
        "--init-params",
        p.params.to_str().unwrap(),
        "--init-camera",
        p.camera.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: serde_json::Value = io::read_json(&out).unwrap();
    assert_eq!(doc["converged"], serde_json::json!(true));
    assert_eq!(doc["iterations"], serde_json::json!(0));
    assert_eq!(doc["meta"]["objective"], serde_json::json!("heatmap_l2"));
}

#[test]
fn gradcheck_full_chain_exits_zero() {
    let out = run_ok(&["gradcheck", "--stage", "full_chain", "--seed", "13"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("full_chain"));
    assert!(text.contains("ok"));
}

#[test]
fn loss_commands_report_terms() {
    let p = run_pipeline("4");
    let features = p.dir.path().join("features.json");
    std::fs::write(&features, "[0.5, -1.0, 2.0]").unwrap();
    let out = run_ok(&[
        "loss",
        "paired",
        "--landmarks",
        p.landmarks.to_str().unwrap(),
        "--landmarks-hat",
        p.landmarks.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--features-hat",
        features.to_str().unwrap(),
    ]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["total"], serde_json::json!(0.0));
    assert_eq!(doc["terms"]["pose"], serde_json::json!(0.0));
}

fn write_clip(dir: &Path, frames: usize, moving: bool) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..frames {
        let mut frame = Frame::filled(16, 16, [0, 0, 0]);
        for y in 0..16 {
            for x in 0..16 {
                let phase = if moving { k } else { 0 };
                let v = (((x + phase) * 31 + y * 7) % 211) as u8;
                frame.set_pixel(x, y, [v, 255 - v, v / 2]);
            }
        }
        if !moving {
            // small moving square on the static background
            let (ox, oy) = ((2 * k) % 10, (3 * k) % 10);
            for y in oy..oy + 4 {
                for x in ox..ox + 4 {
                    frame.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        io::write_ppm(dir.join(format!("frame_{k:04}.ppm")), &frame).unwrap();
    }
}

#[test]
fn video_commands_separate_static_from_panning() {
    let dir = tempfile::tempdir().unwrap();
    let static_dir = dir.path().join("studio");
    let panning_dir = dir.path().join("handheld");
    write_clip(&static_dir, 60, false);
    write_clip(&panning_dir, 60, true);

    // per-clip scores, used to place the threshold between the two
    let score_of = |p: &Path| -> f64 {
        let out = run_ok(&["score", "--clip", p.to_str().unwrap(), "--fps", "10"]);
        let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        doc["score"].as_f64().unwrap()
    };
    let s = score_of(&static_dir);
    let p = score_of(&panning_dir);
    assert!(s < p, "static {s} vs panning {p}");
    let threshold = format!("{}", (s + p) / 2.0);

    let classify = |path: &Path| -> String {
        let out = run_ok(&[
            "classify",
            "--clip",
            path.to_str().unwrap(),
            "--threshold",
            &threshold,
            "--fps",
            "10",
        ]);
        let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        doc["class"].as_str().unwrap().to_string()
    };
    assert_eq!(classify(&static_dir), "Paired");
    assert_eq!(classify(&panning_dir), "Unpaired");

    let out_dir = dir.path().join("manifest");
    run_ok(&[
        "manifest",
        static_dir.to_str().unwrap(),
        panning_dir.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--threshold",
        &threshold,
        "--gap-s",
        "1",
        "--window",
        "31",
        "--fps",
        "10",
    ]);
    let manifest: serde_json::Value = io::read_json(out_dir.join("manifest.json")).unwrap();
    let paired = manifest["paired"].as_array().unwrap();
    let unpaired = manifest["unpaired"].as_array().unwrap();
    assert!(!paired.is_empty());
    assert!(paired.iter().all(|t| t["source"]["clip"] == "studio"));
    assert!(!unpaired.is_empty());
    assert!(unpaired.iter().all(|t| t["source"]["clip"] == "handheld"));
    // every referenced background file exists
    for t in paired {
        let clip = t["background"]["clip"].as_str().unwrap();
        let index = t["background"]["index"].as_u64().unwrap();
        let bg = out_dir.join(format!("bg_{clip}_{index:06}.ppm"));
        assert!(bg.exists(), "missing background {bg:?}");
    }
    // time gap respected
    for t in paired.iter().chain(unpaired.iter()) {
        let s = t["source"]["index"].as_u64().unwrap();
        let e = t["target"]["index"].as_u64().unwrap();
        assert!(e - s >= 10, "gap violated: {s}..{e}");
    }
}

#[test]
fn bgextract_recovers_static_background() {
    let dir = tempfile::tempdir().unwrap();
    let clip_dir = dir.path().join("clip");
    write_clip(&clip_dir, 40, false);
    let out = dir.path().join("bg.ppm");
    run_ok(&[
        "bgextract",
        "--clip",
        clip_dir.to_str().unwrap(),
        "--window",
        "39",
        "--out",
        out.to_str().unwrap(),
    ]);
    let bg = io::read_ppm(&out).unwrap();
    // the true background: phase 0 texture with no square
    for y in 0..16 {
        for x in 0..16 {
            let v = ((x * 31 + y * 7) % 211) as u8;
            assert_eq!(bg.pixel(x, y), [v, 255 - v, v / 2]);
        }
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    // unknown subcommand -> validation (1)
    assert_eq!(exit_code(&["frobnicate"]), 1);
    // unreadable input -> validation (1)
    assert_eq!(
        exit_code(&["fk", "--params", "/nonexistent/params.json"]),
        1
    );
    // help -> success (0)
    assert_eq!(exit_code(&["--help"]), 0);

    // behind-camera projection -> runtime (2)
    let dir = tempfile::tempdir().unwrap();
    let p = run_pipeline("1");
    let camera_doc: io::CameraDoc = io::read_json(&p.camera).unwrap();
    let mut behind = io::camera_to_doc(&io::camera_from_doc(&camera_doc), serde_json::Value::Null);
    behind.translation = [0.0, 0.0, -5.0];
    let bad_camera = dir.path().join("behind.json");
    io::write_json(&bad_camera, &behind).unwrap();
    assert_eq!(
        exit_code(&[
            "project",
            "--pose",
            p.pose.to_str().unwrap(),
            "--camera",
            bad_camera.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn tree_override_changes_the_skeleton() {
    let tree = default_h36m_tree();
    let dir = tempfile::tempdir().unwrap();

    // double the forearm bones in a copy of the shipped config
    let mut config = tree.to_config();
    for joint in &mut config.joints {
        if joint.name.ends_with("wrist") {
            joint.length *= 2.0;
        }
    }
    let tree_path = dir.path().join("long_arms.json");
    std::fs::write(&tree_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let params = dir.path().join("params.json");
    let camera = dir.path().join("camera.json");
    let pose = dir.path().join("pose.json");
    run_ok(&[
        "synth",
        "--tree",
        tree_path.to_str().unwrap(),
        "--seed",
        "1",
        "--out-params",
        params.to_str().unwrap(),
        "--out-camera",
        camera.to_str().unwrap(),
    ]);
    run_ok(&[
        "fk",
        "--tree",
        tree_path.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
        "--out",
        pose.to_str().unwrap(),
    ]);

    let doc: io::PoseDoc = io::read_json(&pose).unwrap();
    let long_tree = kinpose::skeleton::KinematicTree::from_json_file(&tree_path).unwrap();
    let fk_pose = io::pose_from_doc(&doc, &long_tree).unwrap();
    let lw = long_tree.index_of("left_wrist").unwrap();
    let le = long_tree.index_of("left_elbow").unwrap();
    let bone = (fk_pose.joints[lw] - fk_pose.joints[le]).norm();
    let expect = 2.0 * tree.bone_length(tree.index_of("left_wrist").unwrap());
    assert!((bone - expect).abs() < 1e-9, "forearm {bone} vs {expect}");

    // an invalid tree is a validation error
    config.joints[2].length = -1.0;
    let bad_path = dir.path().join("bad.json");
    std::fs::write(&bad_path, serde_json::to_string(&config).unwrap()).unwrap();
    assert_eq!(
        exit_code(&["fk", "--tree", bad_path.to_str().unwrap(), "--params", params.to_str().unwrap()]),
        1
    );
}

#[test]
fn config_file_feeds_defaults_and_flags_win() {
    let p = run_pipeline("6");
    let config = p.dir.path().join("config.json");
    std::fs::write(&config, r#"{ "lattice": [20, 20], "sigma": 3.0 }"#).unwrap();

    // config sets the lattice
    let dir_cfg = p.dir.path().join("from_config");
    run_ok(&[
        "render",
        "--config",
        config.to_str().unwrap(),
        "--landmarks",
        p.landmarks.to_str().unwrap(),
        "--out-dir",
        dir_cfg.to_str().unwrap(),
    ]);
    let dump = io::read_map_dump(dir_cfg.join("maps.bin")).unwrap();
    assert_eq!(dump.lattice, Lattice::new(20, 20));

    // an explicit flag overrides the config
    let dir_flag = p.dir.path().join("from_flag");
    run_ok(&[
        "render",
        "--config",
        config.to_str().unwrap(),
        "--lattice",
        "24x24",
        "--landmarks",
        p.landmarks.to_str().unwrap(),
        "--out-dir",
        dir_flag.to_str().unwrap(),
    ]);
    let dump = io::read_map_dump(dir_flag.join("maps.bin")).unwrap();
    assert_eq!(dump.lattice, Lattice::new(24, 24));

    // effective config is echoed into the output meta
    let meta: serde_json::Value = io::read_json(dir_cfg.join("render_meta.json")).unwrap();
    assert_eq!(meta["meta"]["sigma"], serde_json::json!(3.0));
    assert_eq!(meta["meta"]["lattice"], serde_json::json!([20, 20]));
}
