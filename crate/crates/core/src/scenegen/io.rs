//! Scene JSON and raw frame files.
//!
//! A scene directory holds `scene.json` plus, per frame `k`, a JSON header
//! `frame_kkk.json` next to `frame_kkk_depth.bin` (f32 LE, row-major) and
//! `frame_kkk_ids.bin` (u16 LE).
//!
//! Pose files are JSON of the form `{"poses": [{"id": 1, "pose": {...}}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroundTruthScene;
use crate::error::{Error, Result};
use crate::fusion::{FrameObservation, Intrinsics};
use crate::geometry::Pose;

pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameHeader {
    width: usize,
    height: usize,
    camera_pose: Pose,
    intrinsics: Intrinsics,
    depth: String,
    instances: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseEntry {
    id: u32,
    pose: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseFile {
    poses: Vec<PoseEntry>,
}

pub fn write_poses(path: &Path, poses: &[(u32, Pose)]) -> Result<()> {
    let file = PoseFile {
        poses: poses.iter().map(|(id, pose)| PoseEntry { id: *id, pose: *pose }).collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

/// Reads a pose file; duplicate ids are an error.
pub fn read_poses(path: &Path) -> Result<Vec<(u32, Pose)>> {
    let file: PoseFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut out: Vec<(u32, Pose)> = Vec::with_capacity(file.poses.len());
    for e in file.poses {
        if out.iter().any(|(id, _)| *id == e.id) {
            return Err(Error::IdMismatch(format!("pose file lists object {} twice", e.id)));
        }
        out.push((e.id, e.pose));
    }
    Ok(out)
}

pub fn write_scene(dir: &Path, scene: &GroundTruthScene) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(scene)? + "\n")?;
    Ok(())
}

/// Reads `path`, or `path/scene.json` when `path` is a directory.
pub fn read_scene(path: &Path) -> Result<GroundTruthScene> {
    let file = if path.is_dir() { path.join(SCENE_FILE) } else { path.to_path_buf() };
    Ok(serde_json::from_str(&fs::read_to_string(file)?)?)
}

pub fn write_frames(dir: &Path, frames: &[FrameObservation]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        let header = FrameHeader {
            width: f.width,
            height: f.height,
            camera_pose: f.camera_pose,
            intrinsics: f.intrinsics,
            depth: format!("frame_{k:03}_depth.bin"),
            instances: format!("frame_{k:03}_ids.bin"),
        };
        let depth: Vec<u8> = f.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
        let ids: Vec<u8> = f.instance_ids.iter().flat_map(|d| d.to_le_bytes()).collect();
        fs::write(dir.join(&header.depth), depth)?;
        fs::write(dir.join(&header.instances), ids)?;
        fs::write(dir.join(format!("frame_{k:03}.json")), serde_json::to_string_pretty(&header)? + "\n")?;
    }
    Ok(())
}

fn read_frame(dir: &Path, k: usize) -> Result<FrameObservation> {
    let header: FrameHeader = serde_json::from_str(&fs::read_to_string(dir.join(format!("frame_{k:03}.json")))?)?;
    let n = header.width * header.height;
    let depth = fs::read(dir.join(&header.depth))?;
    let ids = fs::read(dir.join(&header.instances))?;
    if depth.len() != 4 * n || ids.len() != 2 * n {
        return Err(Error::Format(format!("frame {k}: buffer sizes do not match {}x{}", header.width, header.height)));
    }
    let frame = FrameObservation {
        width: header.width,
        height: header.height,
        depth: depth.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        instance_ids: ids.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
        camera_pose: header.camera_pose,
        intrinsics: header.intrinsics,
    };
    frame.validate()?;
    Ok(frame)
}

/// Reads frames `0..count`; a missing frame is an error.
pub fn read_frames(dir: &Path, count: usize) -> Result<Vec<FrameObservation>> {
    (0..count).map(|k| read_frame(dir, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ModelConfig;
    use crate::scenegen::{generate_scene, render_depth, ModelLibrary, RayScene, SceneSpec};

    #[test]
    fn scene_and_frames_round_trip() {
        let lib = ModelLibrary::standard(ModelConfig {
            n_points: 100,
            n_surface: 100,
            seed: 0,
        })
        .unwrap();
        let mut spec = SceneSpec::tabletop(2, 2, 2).unwrap();
        for c in &mut spec.cameras {
            c.width = 40;
            c.height = 30;
        }
        let scene = generate_scene(&spec, &lib).unwrap();
        let rays = RayScene::new(&scene, &lib).unwrap();
        let frames: Vec<_> = scene.cameras.iter().map(|c| render_depth(&rays, c)).collect();
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &scene).unwrap();
        write_frames(dir.path(), &frames).unwrap();
        assert_eq!(read_scene(dir.path()).unwrap(), scene);
        assert_eq!(read_frames(dir.path(), 2).unwrap(), frames);
        assert!(read_frames(dir.path(), 3).is_err());

        let poses = scene.poses();
        let file = dir.path().join("poses.json");
        write_poses(&file, &poses).unwrap();
        assert_eq!(read_poses(&file).unwrap(), poses);
        let mut twice = poses.clone();
        twice.push(poses[0]);
        write_poses(&file, &twice).unwrap();
        assert!(read_poses(&file).is_err());
    }
}
