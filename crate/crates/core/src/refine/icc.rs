//! Iterative collision check: gradient descent on the scene collision loss.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{RefineConfig, SceneHypothesis, SceneObject, StepRule};
use crate::error::{Error, Result};
use crate::fusion::CellState;
use crate::geometry::{Aabb, Pose, Twist};
use crate::losses::{collision_losses_with_grad, total_scene_loss, CollisionLossTerms, Denominator};
use crate::voxelize::{voxelize, GridSpec};

/// Scene loss and its gradient with respect to every object's twist.
#[derive(Debug, Clone)]
pub struct SceneObjective {
    pub terms: Vec<CollisionLossTerms>,
    pub total: f64,
    pub gradients: Vec<Twist>,
    /// `Σ_k target_k` per object, the collision-penalty denominators.
    pub target_sums: Vec<f64>,
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub l_col_mean: f64,
    pub l_surf_mean: f64,
    pub total: f64,
}

/// How an ICC run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IccStatus {
    Converged,
    MaxIters,
    /// Aborted at `iter`; the outcome holds the poses and trace up to it.
    Diverged { iter: usize },
}

#[derive(Debug, Clone)]
pub struct IccOutcome {
    pub scene: SceneHypothesis,
    pub trace: Vec<TraceRow>,
    pub status: IccStatus,
}

impl IccOutcome {
    /// The divergence as an error, if the run diverged.
    pub fn check(&self) -> Result<()> {
        match self.status {
            IccStatus::Diverged { iter } => Err(Error::Diverged {
                iter,
                loss: self.trace.last().map_or(f64::NAN, |r| r.total),
                initial: self.trace[0].total,
            }),
            _ => Ok(()),
        }
    }
}

struct TargetResult {
    terms: CollisionLossTerms,
    target_sum: f64,
    /// `(object index, per-point gradient)` contributions.
    point_grads: Vec<(usize, Vec<Vector3<f64>>)>,
}

fn grid_box(spec: &GridSpec) -> Aabb {
    let o = spec.origin_point();
    Aabb {
        min: o,
        max: o + Vector3::repeat(spec.voxel_size * spec.dim as f64),
    }
}

fn evaluate_target(
    m: usize,
    objects: &[SceneObject],
    posed: &[Vec<Point3<f64>>],
    boxes: &[Aabb],
    cfg: &RefineConfig,
    denominator: Denominator,
    want_grad: bool,
) -> Result<TargetResult> {
    let n_obj = objects.len() as f64;
    let surround = &objects[m].surround;
    let spec = surround.grid_spec(cfg.delta_t);
    let reach = grid_box(&spec).inflate(cfg.delta_t * spec.voxel_size);
    let target = voxelize(&posed[m], &spec)?;
    let mut others = Vec::new();
    let mut other_idx = Vec::new();
    for n in 0..objects.len() {
        if n != m && boxes[n].intersects(&reach) {
            others.push(voxelize(&posed[n], &spec)?);
            other_idx.push(n);
        }
    }
    let nontarget_grids: Vec<_> = others.iter().map(|v| v.grid.clone()).collect();
    let (terms, grad) = collision_losses_with_grad(&target.grid, &nontarget_grids, surround, denominator)?;
    let mut point_grads = Vec::new();
    if want_grad {
        let up: Vec<f64> = grad.target.iter().map(|g| g / n_obj).collect();
        point_grads.push((m, target.backward(&posed[m], &up)?));
        for ((vox, n), g) in others.iter().zip(&other_idx).zip(&grad.nontargets) {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let up: Vec<f64> = g.iter().map(|v| v / n_obj).collect();
            point_grads.push((*n, vox.backward(&posed[*n], &up)?));
        }
    }
    Ok(TargetResult {
        terms,
        target_sum: target.grid.sum(),
        point_grads,
    })
}

fn posed_points(objects: &[SceneObject], poses: &[Pose], cfg: &RefineConfig) -> Vec<Vec<Point3<f64>>> {
    objects
        .iter()
        .zip(poses)
        .map(|(o, p)| {
            let n = cfg.model_points.min(o.model.points.len());
            p.transform_points(&o.model.points[..n])
        })
        .collect()
}

fn run(
    objects: &[SceneObject],
    poses: &[Pose],
    cfg: &RefineConfig,
    denominator: Denominator,
    want_grad: bool,
) -> Result<(Vec<TargetResult>, Vec<Vec<Point3<f64>>>)> {
    if objects.is_empty() {
        return Err(Error::Empty("scene objects"));
    }
    if objects.len() != poses.len() {
        return Err(Error::InvalidArgument("one pose per object required".into()));
    }
    let posed = posed_points(objects, poses, cfg);
    let boxes: Vec<Aabb> = posed.iter().map(|p| Aabb::from_points(p).expect("model has points")).collect();
    let results = (0..objects.len())
        .into_par_iter()
        .map(|m| evaluate_target(m, objects, &posed, &boxes, cfg, denominator, want_grad))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, posed))
}

/// Evaluates the scene loss `(1/N) Σ (l_col − l_surf)` at `poses` together
/// with its twist gradient (rotations about each object's origin).
pub fn evaluate_scene_objective(
    objects: &[SceneObject],
    poses: &[Pose],
    cfg: &RefineConfig,
    denominator: Denominator,
) -> Result<SceneObjective> {
    let (results, posed) = run(objects, poses, cfg, denominator, true)?;
    let mut point_grads: Vec<Vec<Vector3<f64>>> = posed.iter().map(|p| vec![Vector3::zeros(); p.len()]).collect();
    // Fixed reduction order over targets keeps the sum schedule-independent.
    for r in &results {
        for (n, g) in &r.point_grads {
            for (acc, v) in point_grads[*n].iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    let gradients = point_grads
        .iter()
        .zip(&posed)
        .zip(poses)
        .map(|((g, pts), pose)| {
            let mut rot = Vector3::zeros();
            let mut trans = Vector3::zeros();
            for (gq, p) in g.iter().zip(pts) {
                trans += gq;
                rot += (p - pose.translation).coords.cross(gq);
            }
            Twist::new(rot, trans)
        })
        .collect();
    let terms: Vec<CollisionLossTerms> = results.iter().map(|r| r.terms).collect();
    Ok(SceneObjective {
        total: total_scene_loss(&terms)?,
        target_sums: results.iter().map(|r| r.target_sum).collect(),
        terms,
        gradients,
    })
}

/// Scene loss with every collision-penalty denominator pinned to
/// `target_sums`; the function whose gradient the frozen mode follows.
pub fn frozen_denominator_loss(
    objects: &[SceneObject],
    poses: &[Pose],
    cfg: &RefineConfig,
    target_sums: &[f64],
) -> Result<f64> {
    let (results, _) = run(objects, poses, cfg, Denominator::Frozen, false)?;
    let terms: Vec<CollisionLossTerms> = results
        .iter()
        .zip(target_sums)
        .map(|(r, s)| CollisionLossTerms {
            l_col: r.terms.l_col * r.target_sum / s,
            l_surf: r.terms.l_surf,
        })
        .collect();
    total_scene_loss(&terms)
}

/// Scene loss only.
pub fn scene_loss(objects: &[SceneObject], poses: &[Pose], cfg: &RefineConfig) -> Result<SceneObjective> {
    let (results, _) = run(objects, poses, cfg, Denominator::Frozen, false)?;
    let terms: Vec<CollisionLossTerms> = results.iter().map(|r| r.terms).collect();
    Ok(SceneObjective {
        total: total_scene_loss(&terms)?,
        target_sums: results.iter().map(|r| r.target_sum).collect(),
        terms,
        gradients: Vec::new(),
    })
}

fn trace_row(iter: usize, obj: &SceneObjective) -> TraceRow {
    let n = obj.terms.len() as f64;
    TraceRow {
        iter,
        l_col_mean: obj.terms.iter().map(|t| t.l_col).sum::<f64>() / n,
        l_surf_mean: obj.terms.iter().map(|t| t.l_surf).sum::<f64>() / n,
        total: obj.total,
    }
}

fn step_block(g: &Vector3<f64>, lr: f64, rule: StepRule) -> Vector3<f64> {
    match rule {
        StepRule::Gradient => -g * lr,
        StepRule::Normalized => {
            let n = g.norm();
            if n > 1e-12 {
                -g * (lr / n)
            } else {
                Vector3::zeros()
            }
        }
    }
}

/// Jointly refines all poses by gradient descent on the scene collision
/// loss; every object is updated from the same evaluation (Jacobi style).
pub fn icc_refine(scene: &SceneHypothesis, cfg: &RefineConfig) -> Result<IccOutcome> {
    icc_refine_observed(scene, cfg, |_, _| {})
}

/// As [`icc_refine`], calling `observe(iter, poses)` after every update.
pub fn icc_refine_observed(
    scene: &SceneHypothesis,
    cfg: &RefineConfig,
    mut observe: impl FnMut(usize, &[Pose]),
) -> Result<IccOutcome> {
    cfg.validate()?;
    if let Some(o) = scene.objects.iter().find(|o| o.surround.count(CellState::SelfOccupied) == 0) {
        return Err(Error::InvalidArgument(format!("object {} has an empty self grid", o.id)));
    }
    let objects = &scene.objects;
    let mut poses = scene.poses();
    let mut current = evaluate_scene_objective(objects, &poses, cfg, cfg.denominator)?;
    let initial = current.total;
    let mut trace = vec![trace_row(0, &current)];
    let (mut lr_rot, mut lr_trans) = (cfg.lr_rot, cfg.lr_trans);
    let mut calm = 0;
    let mut above = 0;
    let mut status = IccStatus::MaxIters;
    for iter in 1..=cfg.max_iters {
        for (pose, g) in poses.iter_mut().zip(&current.gradients) {
            let d = Twist::new(
                step_block(&g.rotational, lr_rot, cfg.step_rule),
                step_block(&g.translational, lr_trans, cfg.step_rule),
            );
            *pose = pose.exp_update(&d);
        }
        observe(iter, &poses);
        let prev = current.total;
        current = evaluate_scene_objective(objects, &poses, cfg, cfg.denominator)?;
        trace.push(trace_row(iter, &current));
        if !current.total.is_finite() {
            status = IccStatus::Diverged { iter };
            break;
        }
        if current.total > initial && current.total > 10.0 * initial.abs() {
            above += 1;
            if above >= cfg.divergence_patience {
                status = IccStatus::Diverged { iter };
                break;
            }
        } else {
            above = 0;
        }
        if (current.total - prev).abs() < cfg.tol {
            calm += 1;
            if calm >= cfg.patience {
                status = IccStatus::Converged;
                break;
            }
        } else {
            calm = 0;
        }
        lr_rot *= cfg.decay;
        lr_trans *= cfg.decay;
    }
    Ok(IccOutcome {
        scene: scene.with_poses(&poses),
        trace,
        status,
    })
}
