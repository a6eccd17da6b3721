//! Object-level occupancy mapping from posed depth frames.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::octree::{LeafKey, Octree};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Pose};

/// Pinhole intrinsics in pixels. Pixel `(u, v)` looks along
/// `((u - cx) / fx, (v - cy) / fy, 1)` in the camera frame (z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0 && self.fy > 0.0 && [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Camera-frame ray through pixel `(u, v)` with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// One posed depth frame with its instance segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub width: usize,
    pub height: usize,
    /// Row-major z-depth in meters; 0 marks an invalid pixel.
    pub depth: Vec<f32>,
    /// Row-major instance ids; 0 is background or an unknown object.
    pub instance_ids: Vec<u16>,
    /// Camera-to-world.
    pub camera_pose: Pose,
    pub intrinsics: Intrinsics,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.width * self.height;
        if self.depth.len() != n || self.instance_ids.len() != n {
            return Err(Error::InvalidArgument(format!(
                "frame buffers have {} depth and {} id pixels, expected {n}",
                self.depth.len(),
                self.instance_ids.len()
            )));
        }
        if self.depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("depth must be finite and non-negative".into()));
        }
        if !self.camera_pose.is_finite() {
            return Err(Error::InvalidArgument("camera pose must be finite".into()));
        }
        Ok(())
    }

    /// World-frame point for pixel `(u, v)`, if its depth is valid.
    pub fn back_project(&self, u: usize, v: usize) -> Option<Point3<f64>> {
        let d = self.depth[v * self.width + u] as f64;
        if d <= 0.0 {
            return None;
        }
        let local = Point3::from(self.intrinsics.ray(u as f64, v as f64) * d);
        Some(self.camera_pose.transform_point(&local))
    }

    /// World-frame points of all valid pixels carrying `id`.
    pub fn instance_points(&self, id: u16) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        for v in 0..self.height {
            for u in 0..self.width {
                if self.instance_ids[v * self.width + u] == id {
                    if let Some(p) = self.back_project(u, v) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Log-odds increments and clamping range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOdds {
    pub hit: f32,
    pub miss: f32,
    pub min: f32,
    pub max: f32,
}

impl Default for LogOdds {
    fn default() -> Self {
        Self {
            hit: 0.85,
            miss: -0.4,
            min: -3.5,
            max: 3.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub leaf_size: f64,
    /// Workspace covered by the map; the octree root is anchored at `min`.
    pub bounds: Aabb,
    /// Sensor range in meters; longer measurements only carve free space.
    pub max_range: f64,
    pub log_odds: LogOdds,
}

impl MapConfig {
    pub fn new(bounds: Aabb) -> MapConfig {
        MapConfig {
            leaf_size: 0.005,
            bounds,
            max_range: 3.0,
            log_odds: LogOdds::default(),
        }
    }
}

/// State of the leaf containing a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupancy {
    Occupied(u32),
    Free,
    Unknown,
}

/// Per-instance occupancy octrees plus one global free-space octree.
///
/// Instance maps accumulate hits only. The global map receives misses along
/// every ray and hits at every endpoint, and is consulted for free space.
/// When several instances hit the same leaf, the one with the highest
/// cumulative log-odds owns it (ties go to the lower id).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    config: MapConfig,
    depth: u32,
    instances: BTreeMap<u32, Octree>,
    free: Octree,
}

/// Leaf updates produced by one pixel.
struct PixelRay {
    carved: Vec<LeafKey>,
    hit: Option<(u32, LeafKey)>,
}

impl SceneMap {
    pub fn new(config: MapConfig) -> Result<SceneMap> {
        if !(config.leaf_size > 0.0) || !(config.max_range > 0.0) {
            return Err(Error::InvalidArgument("leaf size and max range must be positive".into()));
        }
        let ext = config.bounds.extent();
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
            return Err(Error::InvalidArgument("map bounds must have positive volume".into()));
        }
        let cells = (ext.max() / config.leaf_size).ceil().max(1.0);
        let depth = (cells.log2().ceil() as u32).max(1);
        if depth > 20 {
            return Err(Error::InvalidArgument("map bounds too large for leaf size".into()));
        }
        Ok(SceneMap {
            config,
            depth,
            instances: BTreeMap::new(),
            free: Octree::new(depth),
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.instances.keys().copied()
    }

    pub fn instance_tree(&self, id: u32) -> Option<&Octree> {
        self.instances.get(&id)
    }

    pub fn free_tree(&self) -> &Octree {
        &self.free
    }

    /// Leaf key of a point, `None` outside the workspace.
    pub fn leaf_key(&self, p: &Point3<f64>) -> Option<LeafKey> {
        let b = &self.config.bounds;
        if !b.contains(p) {
            return None;
        }
        let side = 1u32 << self.depth;
        let mut key = [0u32; 3];
        for a in 0..3 {
            let f = ((p[a] - b.min[a]) / self.config.leaf_size).floor();
            if f < 0.0 || f >= side as f64 {
                return None;
            }
            key[a] = f as u32;
        }
        Some(key)
    }

    pub fn leaf_center(&self, key: &LeafKey) -> Point3<f64> {
        let b = &self.config.bounds;
        let s = self.config.leaf_size;
        Point3::new(
            b.min.x + (key[0] as f64 + 0.5) * s,
            b.min.y + (key[1] as f64 + 0.5) * s,
            b.min.z + (key[2] as f64 + 0.5) * s,
        )
    }

    /// Instance owning a leaf, if any instance map holds positive log-odds.
    pub fn owner(&self, key: &LeafKey) -> Option<u32> {
        let mut best: Option<(u32, f32)> = None;
        for (&id, tree) in &self.instances {
            if let Some(v) = tree.get(key) {
                if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((id, v));
                }
            }
        }
        best.map(|(id, _)| id)
    }

    pub fn leaf_state(&self, key: &LeafKey) -> Occupancy {
        if let Some(id) = self.owner(key) {
            return Occupancy::Occupied(id);
        }
        match self.free.get(key) {
            Some(v) if v < 0.0 => Occupancy::Free,
            _ => Occupancy::Unknown,
        }
    }

    pub fn query_occupancy(&self, p: &Point3<f64>) -> Occupancy {
        match self.leaf_key(p) {
            Some(k) => self.leaf_state(&k),
            None => Occupancy::Unknown,
        }
    }

    /// Leaves owned by `id`, in canonical order.
    pub fn occupied_leaves(&self, id: u32) -> Vec<LeafKey> {
        match self.instances.get(&id) {
            Some(tree) => tree
                .leaves()
                .into_iter()
                .filter(|(k, v)| *v > 0.0 && self.owner(k) == Some(id))
                .map(|(k, _)| k)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Every occupied leaf with its owner, in canonical order per instance.
    pub fn owned_leaves(&self) -> Vec<(LeafKey, u32)> {
        let mut out = Vec::new();
        for (&id, tree) in &self.instances {
            for (k, v) in tree.leaves() {
                if v > 0.0 && self.owner(&k) == Some(id) {
                    out.push((k, id));
                }
            }
        }
        out
    }

    /// Leaves strictly between the start and end of a ray, in traversal
    /// order, by 3-d DDA over the leaf lattice. The leaf containing `end` is
    /// excluded; the ray is clipped to the workspace.
    pub fn traverse(&self, start: &Point3<f64>, end: &Point3<f64>) -> Vec<LeafKey> {
        let mut out = Vec::new();
        let dir = end - start;
        let len = dir.norm();
        if len == 0.0 {
            return out;
        }
        let Some((t0, t1)) = self.config.bounds.ray_interval(start, &dir) else {
            return out;
        };
        let t_enter = t0.max(0.0);
        let t_exit = t1.min(1.0);
        if t_enter > t_exit {
            return out;
        }
        let s = self.config.leaf_size;
        let b = &self.config.bounds;
        let side = (1i64 << self.depth) - 1;
        let entry = start + dir * t_enter;
        let end_key = self.leaf_key(end);
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            cell[a] = (((entry[a] - b.min[a]) / s).floor() as i64).clamp(0, side);
            if dir[a] > 0.0 {
                step[a] = 1;
                let boundary = b.min[a] + (cell[a] + 1) as f64 * s;
                t_max[a] = (boundary - start[a]) / dir[a];
                t_delta[a] = s / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                let boundary = b.min[a] + cell[a] as f64 * s;
                t_max[a] = (boundary - start[a]) / dir[a];
                t_delta[a] = -s / dir[a];
            }
        }
        let max_steps = 3 * (side as usize + 2);
        for _ in 0..max_steps {
            let key = [cell[0] as u32, cell[1] as u32, cell[2] as u32];
            if Some(key) == end_key {
                break;
            }
            out.push(key);
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > t_exit {
                break;
            }
            cell[a] += step[a];
            if cell[a] < 0 || cell[a] > side {
                break;
            }
            t_max[a] += t_delta[a];
        }
        out
    }

    fn pixel_ray(&self, obs: &FrameObservation, origin: &Point3<f64>, u: usize, v: usize) -> Option<PixelRay> {
        let idx = v * obs.width + u;
        let d = obs.depth[idx] as f64;
        if d <= 0.0 {
            return None;
        }
        let local = obs.intrinsics.ray(u as f64, v as f64) * d;
        let range = local.norm();
        if range > self.config.max_range {
            let end = obs
                .camera_pose
                .transform_point(&Point3::from(local * (self.config.max_range / range)));
            return Some(PixelRay {
                carved: self.traverse(origin, &end),
                hit: None,
            });
        }
        let end = obs.camera_pose.transform_point(&Point3::from(local));
        Some(PixelRay {
            carved: self.traverse(origin, &end),
            hit: self.leaf_key(&end).map(|k| (obs.instance_ids[idx] as u32, k)),
        })
    }

    /// Fuses one frame. Rays are traced in parallel and applied in
    /// row-major pixel order, so the result equals sequential integration.
    pub fn integrate_frame(&mut self, obs: &FrameObservation) -> Result<()> {
        obs.validate()?;
        let origin = Point3::from(obs.camera_pose.translation);
        let rays: Vec<Option<PixelRay>> = (0..obs.width * obs.height)
            .into_par_iter()
            .map(|i| self.pixel_ray(obs, &origin, i % obs.width, i / obs.width))
            .collect();
        let lo = self.config.log_odds;
        for ray in rays.into_iter().flatten() {
            for key in &ray.carved {
                self.free.update(key, lo.miss, lo.min, lo.max);
            }
            if let Some((id, key)) = ray.hit {
                self.free.update(&key, lo.hit, lo.min, lo.max);
                self.instances
                    .entry(id)
                    .or_insert_with(|| Octree::new(self.depth))
                    .update(&key, lo.hit, lo.min, lo.max);
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(config: MapConfig, instances: BTreeMap<u32, Octree>, free: Octree) -> Result<SceneMap> {
        let map = SceneMap::new(config)?;
        if free.depth() != map.depth || instances.values().any(|t| t.depth() != map.depth) {
            return Err(Error::Format("octree depth does not match map bounds".into()));
        }
        Ok(SceneMap {
            instances,
            free,
            ..map
        })
    }
}
