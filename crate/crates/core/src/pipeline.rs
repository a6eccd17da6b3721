//! Glue between the generator, fusion and refinement.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{Point3, Vector3};
use serde::Serialize;

use crate::agreement::{AgreementConfig, HypothesisBuffer};
use crate::error::{Error, Result};
use crate::fusion::{extract_grids, FrameObservation, MapConfig, SceneMap, SurroundGrids};
use crate::geometry::{Aabb, ModelConfig, ObjectModel, Pose};
use crate::refine::{icp_refine, IcpConfig, SceneHypothesis, SceneObject};
use crate::scenegen::{
    orbit, perturb_poses, primitives, render_depth, GroundTruthScene, ModelLibrary, RayScene, SceneObjectGt,
};

/// Margin added around the scene bounds for the map. Chosen so that
/// horizontal planes at the bounds fall in the middle of a leaf.
pub const MAP_MARGIN: f64 = 0.0425;
/// Pitch used to thin the observed point clouds handed to ICP.
pub const OBSERVED_PITCH: f64 = 0.002;

pub fn render_frames(scene: &GroundTruthScene, library: &ModelLibrary) -> Result<Vec<FrameObservation>> {
    let rays = RayScene::new(scene, library)?;
    Ok(scene.cameras.iter().map(|c| render_depth(&rays, c)).collect())
}

pub fn map_config(bounds: &Aabb) -> MapConfig {
    MapConfig::new(bounds.inflate(MAP_MARGIN))
}

/// Integrates `frames` in order into a fresh map.
pub fn fuse_frames(bounds: &Aabb, frames: &[FrameObservation]) -> Result<SceneMap> {
    if frames.is_empty() {
        return Err(Error::Empty("frames"));
    }
    let mut map = SceneMap::new(map_config(bounds))?;
    for f in frames {
        map.integrate_frame(f)?;
    }
    Ok(map)
}

/// Keeps the first point per `pitch`-sized cell, in input order.
pub fn thin_points(points: impl IntoIterator<Item = Point3<f64>>, pitch: f64) -> Vec<Point3<f64>> {
    let mut seen = HashSet::new();
    points
        .into_iter()
        .filter(|p| seen.insert(p.coords.map(|c| (c / pitch).floor() as i64)))
        .collect()
}

/// World-frame points labelled `id` across all frames, thinned.
pub fn observed_points(frames: &[FrameObservation], id: u32) -> Vec<Point3<f64>> {
    let Ok(id) = u16::try_from(id) else {
        return Vec::new();
    };
    thin_points(frames.iter().flat_map(|f| f.instance_points(id)), OBSERVED_PITCH)
}

/// One hypothesis per ground-truth object, posed at `init`, with
/// surrounding grids and observed points from fusion.
pub fn build_hypothesis(
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    map: &SceneMap,
    frames: &[FrameObservation],
    init: &[(u32, Pose)],
) -> Result<SceneHypothesis> {
    let grids = scene
        .objects
        .iter()
        .map(|o| Ok((o.id, extract_grids(map, o.id, library.get(&o.model)?)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    hypothesis_with_grids(scene, library, grids, frames, init)
}

/// Like [`build_hypothesis`] with grids supplied by the caller.
pub fn hypothesis_with_grids(
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    mut grids: BTreeMap<u32, SurroundGrids>,
    frames: &[FrameObservation],
    init: &[(u32, Pose)],
) -> Result<SceneHypothesis> {
    if init.len() != scene.objects.len() {
        return Err(Error::IdMismatch(format!("{} initial poses for {} objects", init.len(), scene.objects.len())));
    }
    let objects = scene
        .objects
        .iter()
        .map(|o| {
            let pose = init
                .iter()
                .find(|(id, _)| *id == o.id)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::IdMismatch(format!("no initial pose for object {}", o.id)))?;
            let surround = grids
                .remove(&o.id)
                .ok_or_else(|| Error::IdMismatch(format!("no surrounding grid for object {}", o.id)))?;
            if surround.target_id != o.id {
                return Err(Error::IdMismatch(format!("grid of {} given for object {}", surround.target_id, o.id)));
            }
            Ok(SceneObject {
                id: o.id,
                surround,
                pose,
                observed: observed_points(frames, o.id),
                model: library.get(&o.model)?.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SceneHypothesis::new(objects)
}

/// Stand-in for a learned per-frame pose predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initializer {
    /// Ground truth with truncated Gaussian noise.
    Perturbed { sigma_t: f64, sigma_r: f64, seed: u64 },
    /// ICP from the identity rotation at the centroid of the observed points.
    Centroid,
}

fn centroid_icp(points: &[Point3<f64>], model: &ObjectModel, icp: &IcpConfig) -> Option<Pose> {
    if points.is_empty() {
        return None;
    }
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
    Some(icp_refine(points, model, Pose::from_translation(c), icp).pose)
}

/// Initial poses for every object of `scene`. Objects never observed keep
/// their ground-truth pose under [`Initializer::Centroid`], since there is
/// nothing to place them from.
pub fn initial_poses(
    init: Initializer,
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    frames: &[FrameObservation],
    icp: &IcpConfig,
) -> Result<Vec<(u32, Pose)>> {
    match init {
        Initializer::Perturbed { sigma_t, sigma_r, seed } => perturb_poses(&scene.poses(), sigma_t, sigma_r, seed),
        Initializer::Centroid => scene
            .objects
            .iter()
            .map(|o| {
                let model = library.get(&o.model)?;
                let pose = centroid_icp(&observed_points(frames, o.id), model, icp).unwrap_or(o.pose);
                Ok((o.id, pose))
            })
            .collect(),
    }
}

/// An object whose pose buffer reached agreement for the first time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpawnEvent {
    pub frame: usize,
    pub id: u32,
    pub pose: Pose,
}

/// Replays `frames` in order. In each frame every visible instance gets a
/// hypothesis: the initializer's pose refined by ICP against that frame's
/// points. Hypotheses go into a buffer per instance, and the first time a
/// buffer agrees the instance is spawned at the medoid. Perturbed
/// initializers draw fresh noise per frame from `seed + frame`.
pub fn spawn_events(
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    frames: &[FrameObservation],
    init: Initializer,
    agreement: AgreementConfig,
    icp: &IcpConfig,
) -> Result<Vec<SpawnEvent>> {
    if frames.is_empty() {
        return Err(Error::Empty("frames"));
    }
    let mut buffers: BTreeMap<u32, HypothesisBuffer> = BTreeMap::new();
    let mut spawned = BTreeSet::new();
    let mut events = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let noisy = match init {
            Initializer::Perturbed { sigma_t, sigma_r, seed } => {
                Some(perturb_poses(&scene.poses(), sigma_t, sigma_r, seed.wrapping_add(k as u64))?)
            }
            Initializer::Centroid => None,
        };
        for (i, o) in scene.objects.iter().enumerate() {
            if spawned.contains(&o.id) {
                continue;
            }
            let Ok(id16) = u16::try_from(o.id) else { continue };
            let points = thin_points(frame.instance_points(id16), OBSERVED_PITCH);
            if points.is_empty() {
                continue;
            }
            let model = library.get(&o.model)?;
            let hypothesis = match &noisy {
                Some(p) => icp_refine(&points, model, p[i].1, icp).pose,
                None => centroid_icp(&points, model, icp).unwrap_or(o.pose),
            };
            let buffer = match buffers.entry(o.id) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(HypothesisBuffer::new(agreement)?),
            };
            if let Some(pose) = buffer.push_and_check(hypothesis, model)? {
                spawned.insert(o.id);
                events.push(SpawnEvent { frame: k, id: o.id, pose });
            }
        }
    }
    Ok(events)
}

/// Two axis-aligned cubes of `side` resting on the floor `gap` apart, seen
/// by an orbit of eight cameras, plus initial poses that slide them along
/// x into each other until they share `overlap` of a cube's volume.
pub fn two_cube_fixture(side: f64, gap: f64, overlap: f64) -> Result<(GroundTruthScene, ModelLibrary, Vec<(u32, Pose)>)> {
    if !(side > 0.0 && gap >= 0.0 && (0.0..1.0).contains(&overlap)) {
        return Err(Error::InvalidArgument("invalid two-cube fixture".into()));
    }
    let mut library = ModelLibrary::default();
    library.insert("cube", primitives::cube(side)?, true, ModelConfig::default())?;
    let x = (side + gap) / 2.0;
    let z = side / 2.0 + 1e-4;
    let objects = vec![
        SceneObjectGt {
            id: 1,
            model: "cube".into(),
            pose: Pose::from_translation(Vector3::new(-x, 0.0, z)),
        },
        SceneObjectGt {
            id: 2,
            model: "cube".into(),
            pose: Pose::from_translation(Vector3::new(x, 0.0, z)),
        },
    ];
    let scene = GroundTruthScene {
        seed: 0,
        objects,
        cameras: orbit(Point3::new(0.0, 0.0, 0.03), 0.5, 0.4, 8, 480, 360, 450.0)?,
        bounds: Aabb {
            min: Point3::new(-0.15, -0.15, 0.0),
            max: Point3::new(0.15, 0.15, 0.2),
        },
        floor: Some(0.0),
    };
    // Axis-aligned cubes whose centers are d apart share (side - d) / side.
    let shift = (side + gap - (1.0 - overlap) * side) / 2.0;
    let init = vec![
        (1, Pose::from_translation(Vector3::new(-x + shift, 0.0, z))),
        (2, Pose::from_translation(Vector3::new(x - shift, 0.0, z))),
    ];
    Ok((scene, library, init))
}
