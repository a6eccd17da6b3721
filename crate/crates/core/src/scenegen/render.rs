//! Ray-cast depth and instance rendering.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{Camera, GroundTruthScene, ModelLibrary};
use crate::error::Result;
use crate::fusion::FrameObservation;
use crate::geometry::mesh::ray_triangle;
use crate::geometry::Aabb;

type Tri = [Point3<f64>; 3];

struct Entry {
    id: u16,
    triangles: Vec<Tri>,
    aabb: Aabb,
}

/// World-space triangles of a scene, grouped per instance.
pub struct RayScene {
    entries: Vec<Entry>,
}

impl RayScene {
    pub fn new(scene: &GroundTruthScene, library: &ModelLibrary) -> Result<RayScene> {
        let mut entries = Vec::with_capacity(scene.objects.len() + 1);
        for o in &scene.objects {
            let mesh = &library.get(&o.model)?.mesh;
            let triangles: Vec<Tri> = mesh
                .triangles()
                .map(|t| t.map(|p| o.pose.transform_point(&p)))
                .collect();
            let aabb = Aabb::from_points(triangles.iter().flatten()).expect("non-empty mesh");
            entries.push(Entry {
                id: o.id as u16,
                triangles,
                aabb,
            });
        }
        if let Some(z) = scene.floor {
            let b = scene.bounds.inflate(2.0);
            let c = [
                Point3::new(b.min.x, b.min.y, z),
                Point3::new(b.max.x, b.min.y, z),
                Point3::new(b.max.x, b.max.y, z),
                Point3::new(b.min.x, b.max.y, z),
            ];
            entries.push(Entry {
                id: 0,
                triangles: vec![[c[0], c[1], c[2]], [c[0], c[2], c[3]]],
                aabb: Aabb::from_points(c.iter()).expect("four points"),
            });
        }
        Ok(RayScene { entries })
    }

    /// Nearest hit along `origin + t dir`, `t > 0`: `(t, instance id)`.
    /// Equal distances resolve to the earlier instance.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, u16)> {
        let mut best: Option<(f64, u16)> = None;
        for e in &self.entries {
            let Some((t0, t1)) = e.aabb.inflate(1e-9).ray_interval(origin, dir) else {
                continue;
            };
            if t1 <= 0.0 || best.is_some_and(|(b, _)| t0 > b) {
                continue;
            }
            for tri in &e.triangles {
                if let Some(t) = ray_triangle(origin, dir, &tri[0], &tri[1], &tri[2]) {
                    if t > 0.0 && best.is_none_or(|(b, _)| t < b) {
                        // The plane equation gives exact depths on
                        // axis-aligned faces.
                        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                        let exact = n.dot(&(tri[0] - origin)) / n.dot(dir);
                        best = Some((if exact.is_finite() && exact > 0.0 { exact } else { t }, e.id));
                    }
                }
            }
        }
        best
    }
}

/// Renders z-depth and instance ids; misses have depth 0 and id 0.
pub fn render_depth(scene: &RayScene, camera: &Camera) -> FrameObservation {
    let (w, h) = (camera.width, camera.height);
    let origin = Point3::from(camera.pose.translation);
    let pixels: Vec<(f32, u16)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            // A unit-z camera ray makes the ray parameter the z-depth.
            let dir = camera.pose.transform_vector(&camera.intrinsics.ray((i % w) as f64, (i / w) as f64));
            match scene.cast(&origin, &dir) {
                Some((t, id)) => (t as f32, id),
                None => (0.0, 0),
            }
        })
        .collect();
    FrameObservation {
        width: w,
        height: h,
        depth: pixels.iter().map(|p| p.0).collect(),
        instance_ids: pixels.iter().map(|p| p.1).collect(),
        camera_pose: camera.pose,
        intrinsics: camera.intrinsics,
    }
}

/// Depth tolerance of the z-buffer visibility test.
pub const VISIBILITY_TOLERANCE: f64 = 1e-3;

/// Z-buffer test: `p` is visible in `frame` if its nearest pixel shows
/// instance `id` at a depth within [`VISIBILITY_TOLERANCE`] of `p`.
fn sees(frame: &FrameObservation, id: u32, p: &Point3<f64>) -> bool {
    let local = frame.camera_pose.inverse().transform_point(p);
    let Some((u, v)) = frame.intrinsics.project(&local) else {
        return false;
    };
    let (u, v) = (u.round(), v.round());
    if !(u >= 0.0 && v >= 0.0 && u < frame.width as f64 && v < frame.height as f64) {
        return false;
    }
    let i = v as usize * frame.width + u as usize;
    frame.instance_ids[i] as u32 == id && (frame.depth[i] as f64 - local.z).abs() <= VISIBILITY_TOLERANCE
}

/// Ground-truth surface samples (world frame) of every object with a flag
/// telling whether any rendered frame shows them.
pub fn visible_surface_samples(
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    frames: &[FrameObservation],
) -> Result<Vec<(u32, Point3<f64>, bool)>> {
    let mut out = Vec::new();
    for o in &scene.objects {
        let model = library.get(&o.model)?;
        let pts = o.pose.transform_points(&model.surface_points);
        let flags: Vec<bool> = pts
            .par_iter()
            .map(|p| frames.iter().any(|f| sees(f, o.id, p)))
            .collect();
        out.extend(pts.into_iter().zip(flags).map(|(p, f)| (o.id, p, f)));
    }
    Ok(out)
}

/// Per-object fraction of surface samples visible in at least one frame.
pub fn visibility(
    scene: &GroundTruthScene,
    library: &ModelLibrary,
    frames: &[FrameObservation],
) -> Result<Vec<(u32, f64)>> {
    let samples = visible_surface_samples(scene, library, frames)?;
    Ok(scene
        .objects
        .iter()
        .map(|o| {
            let mine: Vec<_> = samples.iter().filter(|s| s.0 == o.id).collect();
            let seen = mine.iter().filter(|s| s.2).count();
            (o.id, seen as f64 / mine.len().max(1) as f64)
        })
        .collect())
}
