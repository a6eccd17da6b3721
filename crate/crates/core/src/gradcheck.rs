//! Randomized finite-difference checks of the analytic gradients.
//!
//! Both the voxelizer and the collision loss are only piecewise smooth, so
//! fixtures are drawn at random and rejected until every kink is further
//! away than a finite-difference step can move a point.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{CellState, SurroundGrids};
use crate::geometry::{ModelConfig, ObjectModel, Pose, Twist};
use crate::losses::Denominator;
use crate::refine::{evaluate_scene_objective, frozen_denominator_loss, scene_loss, RefineConfig, SceneObject};
use crate::scenegen::primitives::box_mesh;
use crate::scenegen::random_rotation;
use crate::voxelize::{center_margin, degeneracy_margin, voxelize, voxelize_occupancy_backward, GridSpec};

pub const FD_STEP: f64 = 1e-5;
pub const POINT_TOLERANCE: f64 = 1e-4;
pub const TWIST_TOLERANCE: f64 = 1e-3;
/// Point fixtures closer than this (voxel units) to a kink are rejected.
pub const POINT_MARGIN: f64 = 1e-3;
/// Fixtures with a point closer than this (voxel units) to a cell center
/// are rejected.
pub const CENTER_MARGIN: f64 = 0.05;

/// Random points in an 8³ grid with a random upstream gradient.
#[derive(Debug, Clone)]
pub struct PointFixture {
    pub points: Vec<Point3<f64>>,
    pub spec: GridSpec,
    pub upstream: Vec<f64>,
}

pub fn point_fixture(rng: &mut ChaCha8Rng) -> PointFixture {
    let spec = GridSpec::new(Point3::origin(), 0.05, 8, 1.5).expect("valid grid");
    loop {
        let points: Vec<Point3<f64>> = (0..20)
            .map(|_| Point3::from(Vector3::from_fn(|_, _| rng.random_range(0.02..0.38))))
            .collect();
        if degeneracy_margin(&points, &spec) < POINT_MARGIN || center_margin(&points, &spec) < CENTER_MARGIN {
            continue;
        }
        let upstream = (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        return PointFixture { points, spec, upstream };
    }
}

/// A small multi-object scene with random surrounding grids.
#[derive(Debug, Clone)]
pub struct TwistFixture {
    pub objects: Vec<SceneObject>,
    pub poses: Vec<Pose>,
    pub cfg: RefineConfig,
}

impl TwistFixture {
    /// Largest distance, in voxel units, that one finite-difference step on
    /// a single twist coordinate can move any model point.
    pub fn step_displacement(&self, h: f64) -> f64 {
        let mut reach: f64 = 1.0;
        for (o, p) in self.objects.iter().zip(&self.poses) {
            for x in self.points(o) {
                reach = reach.max(p.rotation.transform_vector(&x.coords).norm());
            }
        }
        let s = self.objects.iter().map(|o| o.surround.voxel_size).fold(f64::INFINITY, f64::min);
        h * reach / s
    }

    fn points<'a>(&self, o: &'a SceneObject) -> &'a [Point3<f64>] {
        &o.model.points[..self.cfg.model_points.min(o.model.points.len())]
    }

    /// Distance in voxel units to the nearest kink of the scene loss:
    /// voxelization kinks of every object in every grid, and near-ties of
    /// the element-wise maximum over obstacle grids.
    pub fn margin(&self) -> Result<f64> {
        self.margins().map(|(m, _)| m)
    }

    /// [`Self::margin`] together with the smallest point to cell-center
    /// distance over all grids.
    pub fn margins(&self) -> Result<(f64, f64)> {
        let mut margin = f64::INFINITY;
        let mut centers = f64::INFINITY;
        let posed: Vec<Vec<Point3<f64>>> = self
            .objects
            .iter()
            .zip(&self.poses)
            .map(|(o, p)| p.transform_points(self.points(o)))
            .collect();
        for (m, obj) in self.objects.iter().enumerate() {
            let spec = obj.surround.grid_spec(self.cfg.delta_t);
            let target = voxelize(&posed[m], &spec)?.grid;
            let impen = obj.surround.impenetrable();
            let mut candidates: Vec<Vec<f64>> = vec![impen];
            for (n, pts) in posed.iter().enumerate() {
                margin = margin.min(degeneracy_margin(pts, &spec));
                centers = centers.min(center_margin(pts, &spec));
                if n != m {
                    candidates.push(voxelize(pts, &spec)?.grid.values);
                }
            }
            for k in 0..spec.len() {
                if target.values[k] == 0.0 {
                    continue;
                }
                let mut vals: Vec<f64> = candidates.iter().map(|c| c[k]).filter(|v| *v > 0.0).collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                if vals.len() > 1 {
                    // Both values move, each at most 1/δt per voxel.
                    margin = margin.min((vals[0] - vals[1]) * self.cfg.delta_t / 2.0);
                }
            }
        }
        Ok((margin, centers))
    }
}

fn random_grid(rng: &mut ChaCha8Rng, id: u32, center: Point3<f64>, s: f64, dim: usize) -> Result<SurroundGrids> {
    let mut states: Vec<CellState> = (0..dim * dim * dim)
        .map(|_| match rng.random_range(0..10) {
            0..=2 => CellState::SelfOccupied,
            3 | 4 => CellState::Other,
            5..=7 => CellState::Free,
            _ => CellState::Unknown,
        })
        .collect();
    states[0] = CellState::SelfOccupied;
    let half = s * dim as f64 / 2.0;
    let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.5 * s..0.5 * s));
    SurroundGrids::new(id, center - Vector3::repeat(half) + jitter, s, dim, states)
}

/// Draws twist fixtures until one clears `factor` times the step
/// displacement of `h` and has a nonzero gradient.
pub fn twist_fixture(rng: &mut ChaCha8Rng, h: f64, factor: f64) -> Result<TwistFixture> {
    let model_cfg = ModelConfig {
        n_points: 12,
        n_surface: 64,
        seed: rng.random(),
    };
    let model = Arc::new(ObjectModel::new(
        "gradcheck-box",
        box_mesh(Vector3::new(0.1, 0.07, 0.05))?,
        false,
        model_cfg,
    )?);
    let cfg = RefineConfig {
        model_points: 12,
        delta_t: [0.5, 1.0, 2.0][rng.random_range(0..3)],
        ..RefineConfig::default()
    };
    loop {
        let count = rng.random_range(2..=3);
        let mut objects = Vec::with_capacity(count);
        let mut poses = Vec::with_capacity(count);
        for id in 0..count as u32 {
            let t = Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04));
            let pose = Pose::new(random_rotation(rng), t);
            let surround = random_grid(rng, id + 1, Point3::from(t), 0.05, 8)?;
            objects.push(SceneObject {
                id: id + 1,
                model: model.clone(),
                pose,
                surround,
                observed: Vec::new(),
            });
            poses.push(pose);
        }
        let fixture = TwistFixture { objects, poses, cfg };
        let (margin, centers) = fixture.margins()?;
        if margin <= factor * fixture.step_displacement(h) || centers <= CENTER_MARGIN {
            continue;
        }
        // A loss plateau has a zero gradient and checks nothing.
        let g = evaluate_scene_objective(&fixture.objects, &fixture.poses, &fixture.cfg, Denominator::Exact)?;
        if g.gradients.iter().any(|t| t.to_array().iter().any(|v| v.abs() > 1e-6)) {
            return Ok(fixture);
        }
    }
}

/// Component-wise relative error with a floor of `1e-6` times the largest
/// numeric component, so exact zeros do not divide by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / a.abs().max(n.abs()).max(floor)
            }
        })
        .fold(0.0, f64::max)
}

/// Relative error of each consecutive `block` of components in the max
/// norm, maximized over blocks. Each block is compared at its own scale,
/// floored at `1e-6` times the largest component overall so blocks that
/// are zero up to rounding do not divide by zero.
pub fn max_block_relative_error(analytic: &[f64], numeric: &[f64], block: usize) -> f64 {
    let floor = 1e-6 * numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .chunks(block)
        .zip(numeric.chunks(block))
        .map(|(a, n)| {
            let diff = a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let scale = a.iter().chain(n).fold(floor, |m, v| m.max(v.abs()));
            if diff == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Central differences of `f` over every twist coordinate of every object.
pub fn twist_differences(
    poses: &[Pose],
    h: f64,
    mut f: impl FnMut(&[Pose]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(6 * poses.len());
    for i in 0..poses.len() {
        for c in 0..6 {
            let mut e = [0.0; 6];
            e[c] = h;
            let mut plus = poses.to_vec();
            plus[i] = poses[i].exp_update(&Twist::from_array(e));
            e[c] = -h;
            let mut minus = poses.to_vec();
            minus[i] = poses[i].exp_update(&Twist::from_array(e));
            out.push((f(&plus)? - f(&minus)?) / (2.0 * h));
        }
    }
    Ok(out)
}

fn flatten(gradients: &[Twist]) -> Vec<f64> {
    gradients.iter().flat_map(|g| g.to_array()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub point_fixtures: usize,
    pub twist_fixtures: usize,
    pub point_max_rel: f64,
    /// Exact-quotient gradient against the true scene loss.
    pub twist_max_rel: f64,
    /// Frozen-denominator gradient against the pinned-denominator loss.
    pub frozen_max_rel: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.point_max_rel < POINT_TOLERANCE
            && self.twist_max_rel < TWIST_TOLERANCE
            && self.frozen_max_rel < TWIST_TOLERANCE
    }
}

/// Runs the point and twist suites from one seed.
pub fn run_gradcheck(seed: u64, point_fixtures: usize, twist_fixtures: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut point_max_rel: f64 = 0.0;
    for _ in 0..point_fixtures {
        let fx = point_fixture(&mut rng);
        let analytic = voxelize_occupancy_backward(&fx.points, &fx.spec, &fx.upstream)?;
        let mut numeric = Vec::with_capacity(3 * fx.points.len());
        for q in 0..fx.points.len() {
            for a in 0..3 {
                let eval = |sign: f64| -> Result<f64> {
                    let mut pts = fx.points.clone();
                    pts[q][a] += sign * h;
                    let g = voxelize(&pts, &fx.spec)?.grid;
                    Ok(g.values.iter().zip(&fx.upstream).map(|(o, u)| o * u).sum())
                };
                numeric.push((eval(1.0)? - eval(-1.0)?) / (2.0 * h));
            }
        }
        let analytic: Vec<f64> = analytic.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        point_max_rel = point_max_rel.max(max_block_relative_error(&analytic, &numeric, 3));
    }

    let mut twist_max_rel: f64 = 0.0;
    let mut frozen_max_rel: f64 = 0.0;
    for _ in 0..twist_fixtures {
        let fx = twist_fixture(&mut rng, h, 2.0)?;
        let exact = evaluate_scene_objective(&fx.objects, &fx.poses, &fx.cfg, Denominator::Exact)?;
        let numeric = twist_differences(&fx.poses, h, |p| Ok(scene_loss(&fx.objects, p, &fx.cfg)?.total))?;
        twist_max_rel = twist_max_rel.max(max_block_relative_error(&flatten(&exact.gradients), &numeric, 3));

        let frozen = evaluate_scene_objective(&fx.objects, &fx.poses, &fx.cfg, Denominator::Frozen)?;
        let numeric = twist_differences(&fx.poses, h, |p| {
            frozen_denominator_loss(&fx.objects, p, &fx.cfg, &frozen.target_sums)
        })?;
        frozen_max_rel = frozen_max_rel.max(max_block_relative_error(&flatten(&frozen.gradients), &numeric, 3));
    }
    Ok(GradCheckReport {
        point_fixtures,
        twist_fixtures,
        point_max_rel,
        twist_max_rel,
        frozen_max_rel,
    })
}
