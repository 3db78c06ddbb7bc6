//! File formats: joint-name-keyed JSON for poses, landmarks and
//! parameters; binary PPM (P6) frames; 16-bit PGM (P5) map channels; and
//! the raw map dump (`KPMAP1` header, little-endian f64 pixels).
//!
//! JSON objects are keyed by joint name (alphabetical on write), numbers
//! round-trip bit-faithfully through serde_json's shortest-representation
//! encoding, and every writer accepts a `meta` value that is echoed into
//! the output.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::maps::{Lattice, MapStack};
use crate::skeleton::{CameraParams, KinematicTree, Landmarks2D, LocalKinematicParams, Pose3D};
use crate::video::Frame;

pub const MAP_DUMP_MAGIC: &[u8; 6] = b"KPMAP1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("missing joint `{0}`")]
    MissingJoint(String),
    #[error("joint `{name}` is rule-placed and takes no direction")]
    NotDirected { name: String },
    #[error("bad ppm: {0}")]
    BadPpm(String),
    #[error("bad map dump: {0}")]
    BadMapDump(String),
}

// ---------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct PoseDoc {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
    pub joints: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LandmarksDoc {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
    pub points: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsDoc {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
    pub trunk_hipline_angle: f64,
    pub bone_dirs: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CameraDoc {
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
    pub angles_sincos: [[f64; 2]; 3],
    pub translation: [f64; 3],
}

pub fn pose_to_doc(pose: &Pose3D, tree: &KinematicTree, meta: Value) -> PoseDoc {
    PoseDoc {
        meta,
        joints: pose
            .joints
            .iter()
            .enumerate()
            .map(|(j, p)| (tree.name(j).to_string(), [p.x, p.y, p.z]))
            .collect(),
    }
}

pub fn pose_from_doc(doc: &PoseDoc, tree: &KinematicTree) -> Result<Pose3D, FormatError> {
    for name in doc.joints.keys() {
        if tree.index_of(name).is_none() {
            return Err(FormatError::UnknownJoint(name.clone()));
        }
    }
    let joints = (0..tree.joint_count())
        .map(|j| {
            doc.joints
                .get(tree.name(j))
                .map(|&[x, y, z]| Vector3::new(x, y, z))
                .ok_or_else(|| FormatError::MissingJoint(tree.name(j).to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Pose3D { joints })
}

pub fn landmarks_to_doc(lm: &Landmarks2D, tree: &KinematicTree, meta: Value) -> LandmarksDoc {
    LandmarksDoc {
        meta,
        points: lm
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| (tree.name(j).to_string(), [p.x, p.y]))
            .collect(),
    }
}

pub fn landmarks_from_doc(
    doc: &LandmarksDoc,
    tree: &KinematicTree,
) -> Result<Landmarks2D, FormatError> {
    for name in doc.points.keys() {
        if tree.index_of(name).is_none() {
            return Err(FormatError::UnknownJoint(name.clone()));
        }
    }
    let points = (0..tree.joint_count())
        .map(|j| {
            doc.points
                .get(tree.name(j))
                .map(|&[x, y]| Vector2::new(x, y))
                .ok_or_else(|| FormatError::MissingJoint(tree.name(j).to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Landmarks2D { points })
}

pub fn params_to_doc(
    params: &LocalKinematicParams,
    tree: &KinematicTree,
    meta: Value,
) -> ParamsDoc {
    ParamsDoc {
        meta,
        trunk_hipline_angle: params.trunk_hipline_angle,
        bone_dirs: tree
            .directed_joints()
            .iter()
            .zip(&params.bone_dirs)
            .map(|(&j, d)| (tree.name(j).to_string(), [d.x, d.y, d.z]))
            .collect(),
    }
}

pub fn params_from_doc(
    doc: &ParamsDoc,
    tree: &KinematicTree,
) -> Result<LocalKinematicParams, FormatError> {
    for name in doc.bone_dirs.keys() {
        let Some(j) = tree.index_of(name) else {
            return Err(FormatError::UnknownJoint(name.clone()));
        };
        if tree.directed_slot(j).is_none() {
            return Err(FormatError::NotDirected { name: name.clone() });
        }
    }
    let bone_dirs = tree
        .directed_joints()
        .iter()
        .map(|&j| {
            doc.bone_dirs
                .get(tree.name(j))
                .map(|&[x, y, z]| Vector3::new(x, y, z))
                .ok_or_else(|| FormatError::MissingJoint(tree.name(j).to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(LocalKinematicParams {
        trunk_hipline_angle: doc.trunk_hipline_angle,
        bone_dirs,
    })
}

pub fn camera_to_doc(camera: &CameraParams, meta: Value) -> CameraDoc {
    CameraDoc {
        meta,
        angles_sincos: camera.angles_sincos,
        translation: [
            camera.translation.x,
            camera.translation.y,
            camera.translation.z,
        ],
    }
}

pub fn camera_from_doc(doc: &CameraDoc) -> CameraParams {
    CameraParams {
        angles_sincos: doc.angles_sincos,
        translation: Vector3::from(doc.translation),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, doc: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------
// PPM (P6, 8-bit RGB)
// ---------------------------------------------------------------------

pub fn write_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(frame.data.len() + 32);
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    out.extend_from_slice(&frame.data);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame, FormatError> {
    let bytes = std::fs::read(path)?;
    parse_ppm(&bytes)
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Frame, FormatError> {
    let mut cursor = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, FormatError> {
        // skip whitespace and # comments
        loop {
            while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if cursor < bytes.len() && bytes[cursor] == b'#' {
                while cursor < bytes.len() && bytes[cursor] != b'\n' {
                    cursor += 1;
                }
                continue;
            }
            break;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(FormatError::BadPpm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..cursor]).into_owned())
    };

    if token(bytes)? != "P6" {
        return Err(FormatError::BadPpm("expected P6 magic".into()));
    }
    let width: usize = token(bytes)?
        .parse()
        .map_err(|_| FormatError::BadPpm("bad width".into()))?;
    let height: usize = token(bytes)?
        .parse()
        .map_err(|_| FormatError::BadPpm("bad height".into()))?;
    let maxval: usize = token(bytes)?
        .parse()
        .map_err(|_| FormatError::BadPpm("bad maxval".into()))?;
    if maxval != 255 {
        return Err(FormatError::BadPpm(format!(
            "maxval must be 255, got {maxval}"
        )));
    }
    // single whitespace byte after maxval
    cursor += 1;
    let need = width * height * 3;
    if bytes.len() < cursor + need {
        return Err(FormatError::BadPpm(format!(
            "expected {need} data bytes, found {}",
            bytes.len().saturating_sub(cursor)
        )));
    }
    Frame::new(width, height, bytes[cursor..cursor + need].to_vec())
        .map_err(|e| FormatError::BadPpm(e.to_string()))
}

// ---------------------------------------------------------------------
// PGM (P5, 16-bit, big-endian samples per the netpbm spec)
// ---------------------------------------------------------------------

/// Writes one map channel as a 16-bit PGM: sample = round(65535 * v),
/// clamped to [0, 65535].
pub fn write_pgm16(
    path: impl AsRef<Path>,
    channel: &[f64],
    lattice: Lattice,
) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(channel.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", lattice.width, lattice.height)?;
    for v in channel {
        let q = (v * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm16(path: impl AsRef<Path>) -> Result<(Lattice, Vec<u16>), FormatError> {
    let bytes = std::fs::read(path)?;
    let header_end = {
        // P5\n<w> <h>\n65535\n — reuse the ppm tokenizer shape
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]);
        let mut fields = text.split_ascii_whitespace();
        let magic = fields.next().unwrap_or("");
        if magic != "P5" {
            return Err(FormatError::BadPpm("expected P5 magic".into()));
        }
        let w: usize = fields
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| FormatError::BadPpm("bad width".into()))?;
        let h: usize = fields
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| FormatError::BadPpm("bad height".into()))?;
        let maxval: usize = fields
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| FormatError::BadPpm("bad maxval".into()))?;
        if maxval != 65535 {
            return Err(FormatError::BadPpm("maxval must be 65535".into()));
        }
        // locate the byte offset just past the maxval token
        let mut seen = 0;
        let mut offset = 0;
        for (i, b) in bytes.iter().enumerate() {
            if b.is_ascii_whitespace() {
                seen += 1;
                if seen == 4 {
                    offset = i + 1;
                    break;
                }
            }
        }
        (w, h, offset)
    };
    let (w, h, offset) = header_end;
    let need = w * h * 2;
    if bytes.len() < offset + need {
        return Err(FormatError::BadPpm("truncated pgm data".into()));
    }
    let samples = bytes[offset..offset + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((Lattice::new(h, w), samples))
}

// ---------------------------------------------------------------------
// Raw map dump: "KPMAP1" + u32le {H, W, channels} + f64le pixels
// (channel-major, row-major within each channel)
// ---------------------------------------------------------------------

pub fn write_map_dump(path: impl AsRef<Path>, stacks: &[&MapStack]) -> Result<(), FormatError> {
    let lattice = stacks
        .first()
        .map(|s| s.lattice)
        .unwrap_or(Lattice::new(2, 2));
    let channels: usize = stacks.iter().map(|s| s.channel_count()).sum();
    let mut out = Vec::with_capacity(18 + channels * lattice.pixels() * 8);
    out.extend_from_slice(MAP_DUMP_MAGIC);
    out.extend_from_slice(&(lattice.height as u32).to_le_bytes());
    out.extend_from_slice(&(lattice.width as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for stack in stacks {
        for channel in &stack.channels {
            for v in channel {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_map_dump(path: impl AsRef<Path>) -> Result<MapStack, FormatError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 18 || &bytes[..6] != MAP_DUMP_MAGIC {
        return Err(FormatError::BadMapDump("missing KPMAP1 magic".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (h, w, channels) = (u32_at(6), u32_at(10), u32_at(14));
    let lattice = Lattice::new(h, w);
    let need = 18 + channels * lattice.pixels() * 8;
    if bytes.len() < need {
        return Err(FormatError::BadMapDump(format!(
            "expected {need} bytes, found {}",
            bytes.len()
        )));
    }
    let mut stack = MapStack::zeros(lattice, channels);
    let mut off = 18;
    for c in 0..channels {
        for i in 0..lattice.pixels() {
            stack.channels[c][i] = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_h36m_tree;

    #[test]
    fn pose_json_roundtrip_is_bit_faithful() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(0, &tree);
        let pose = crate::fk::forward_kinematics(&params, &tree).unwrap();
        let doc = pose_to_doc(&pose, &tree, Value::Null);
        let text = serde_json::to_string(&doc).unwrap();
        let parsed: PoseDoc = serde_json::from_str(&text).unwrap();
        let back = pose_from_doc(&parsed, &tree).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn params_json_roundtrip_is_bit_faithful() {
        let tree = default_h36m_tree();
        let (params, camera) = crate::synth::synth_pose(12, &tree);
        let pdoc = params_to_doc(&params, &tree, Value::Null);
        let text = serde_json::to_string(&pdoc).unwrap();
        let back = params_from_doc(&serde_json::from_str(&text).unwrap(), &tree).unwrap();
        assert_eq!(back, params);

        let cdoc = camera_to_doc(&camera, Value::Null);
        let text = serde_json::to_string(&cdoc).unwrap();
        let back = camera_from_doc(&serde_json::from_str(&text).unwrap());
        assert_eq!(back, camera);
    }

    #[test]
    fn params_doc_rejects_unknown_and_rule_joints() {
        let tree = default_h36m_tree();
        let (params, _) = crate::synth::synth_pose(0, &tree);
        let mut doc = params_to_doc(&params, &tree, Value::Null);
        doc.bone_dirs.insert("neck".into(), [0.0, 0.0, 1.0]);
        assert!(matches!(
            params_from_doc(&doc, &tree),
            Err(FormatError::NotDirected { .. })
        ));
        let mut doc = params_to_doc(&params, &tree, Value::Null);
        doc.bone_dirs.remove("nose");
        assert!(matches!(
            params_from_doc(&doc, &tree),
            Err(FormatError::MissingJoint(_))
        ));
    }

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.ppm");
        let mut frame = Frame::filled(5, 4, [1, 2, 3]);
        frame.set_pixel(2, 1, [200, 100, 50]);
        write_ppm(&path, &frame).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn ppm_parser_skips_comments() {
        let frame = Frame::filled(2, 2, [9, 8, 7]);
        let mut bytes = b"P6\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&frame.data);
        assert_eq!(parse_ppm(&bytes).unwrap(), frame);
    }

    #[test]
    fn pgm16_quantizes_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let lattice = Lattice::new(3, 4);
        let channel: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        write_pgm16(&path, &channel, lattice).unwrap();
        let (lat, samples) = read_pgm16(&path).unwrap();
        assert_eq!(lat, lattice);
        for (v, s) in channel.iter().zip(&samples) {
            assert_eq!(*s, (v * 65535.0).round() as u16);
        }
    }

    #[test]
    fn map_dump_roundtrip_is_bit_exact() {
        let tree = default_h36m_tree();
        let (params, camera) = crate::synth::synth_pose(2, &tree);
        let cfg = crate::maps::MapConfig {
            lattice: Lattice::new(12, 10),
            ..Default::default()
        };
        let out =
            crate::pipeline::forward(&params, &camera, &tree, &Default::default(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps.bin");
        write_map_dump(&path, &[&out.maps.heat, &out.maps.affinity]).unwrap();
        let back = read_map_dump(&path).unwrap();
        assert_eq!(back.lattice, cfg.lattice);
        assert_eq!(back.channel_count(), 33);
        for (c, channel) in out.maps.heat.channels.iter().enumerate() {
            assert_eq!(&back.channels[c], channel);
        }
        for (c, channel) in out.maps.affinity.channels.iter().enumerate() {
            assert_eq!(&back.channels[17 + c], channel);
        }
    }
}
