//! Pose losses and the collision / surface-alignment losses.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fusion::SurroundGrids;
use crate::geometry::{KdTree, Pose};
use crate::voxelize::OccupancyGrid;

/// Regularization weight of the confidence term.
pub const CONFIDENCE_LAMBDA: f64 = 0.015;

/// Mean distance between corresponding model points under two poses.
pub fn add_loss(gt: &Pose, est: &Pose, points: &[Point3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("model points"));
    }
    let a = gt.transform_points(points);
    let b = est.transform_points(points);
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum();
    Ok(sum / points.len() as f64)
}

/// Mean distance from each ground-truth point to its nearest estimated
/// point (ties to the lowest model index).
pub fn adds_loss(gt: &Pose, est: &Pose, points: &[Point3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("model points"));
    }
    let tree = KdTree::new(&est.transform_points(points));
    let sum: f64 = gt
        .transform_points(points)
        .iter()
        .map(|p| tree.nearest(p).expect("non-empty").1.sqrt())
        .sum();
    Ok(sum / points.len() as f64)
}

/// `(1/N) Σ (L_i c_i − λ log c_i)`.
pub fn confidence_weighted_loss(losses: &[f64], confidences: &[f64], lambda: f64) -> Result<f64> {
    if losses.is_empty() || losses.len() != confidences.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty lists, got {} losses and {} confidences",
            losses.len(),
            confidences.len()
        )));
    }
    if let Some(c) = confidences.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside (0, 1]")));
    }
    let sum: f64 = losses
        .iter()
        .zip(confidences)
        .map(|(l, c)| l * c - lambda * c.ln())
        .sum();
    Ok(sum / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Standard,
    Symmetric,
}

impl LossKind {
    /// Asymmetric objects always train with the standard loss.
    pub fn for_object(self, symmetric: bool) -> LossKind {
        if symmetric {
            self
        } else {
            LossKind::Standard
        }
    }
}

/// Warm-up schedule: the standard loss for the first `warmup_epochs`.
pub fn loss_schedule(epoch: usize, warmup_epochs: usize) -> LossKind {
    if epoch < warmup_epochs {
        LossKind::Standard
    } else {
        LossKind::Symmetric
    }
}

/// Per-object collision penalty and surface-alignment reward.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CollisionLossTerms {
    pub l_col: f64,
    pub l_surf: f64,
}

impl CollisionLossTerms {
    pub fn total(&self) -> f64 {
        self.l_col - self.l_surf
    }
}

/// How the target-sum denominator of the collision penalty is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    /// Held constant within an iteration.
    Frozen,
    /// Full quotient rule.
    Exact,
}

/// Gradient of `l_col − l_surf` with respect to the grid values.
#[derive(Debug, Clone)]
pub struct CollisionGradient {
    pub target: Vec<f64>,
    pub nontargets: Vec<Vec<f64>>,
}

fn check_shapes(target: &OccupancyGrid, nontargets: &[OccupancyGrid], surround: &SurroundGrids) -> Result<()> {
    let spec = &target.spec;
    if surround.dim != spec.dim
        || surround.voxel_size != spec.voxel_size
        || surround.origin.coords.as_slice() != spec.origin.as_slice()
    {
        return Err(Error::InvalidArgument("surround grid does not match the target grid".into()));
    }
    if nontargets.iter().any(|g| g.spec != *spec) {
        return Err(Error::InvalidArgument("non-target grid does not match the target grid".into()));
    }
    Ok(())
}

/// Collision and surface terms of one target:
/// `l_col = Σ t·max(max_n g_n, g_impen) / Σ t`, `l_surf = Σ t·g_self / Σ g_self`.
pub fn collision_losses(
    target: &OccupancyGrid,
    nontargets: &[OccupancyGrid],
    surround: &SurroundGrids,
) -> Result<CollisionLossTerms> {
    collision_losses_with_grad(target, nontargets, surround, Denominator::Frozen).map(|(t, _)| t)
}

/// As [`collision_losses`], plus the subgradient with respect to every
/// input grid. Element-wise maxima route their gradient to the first
/// maximal input, the impenetrable grid counting before the non-targets.
pub fn collision_losses_with_grad(
    target: &OccupancyGrid,
    nontargets: &[OccupancyGrid],
    surround: &SurroundGrids,
    denominator: Denominator,
) -> Result<(CollisionLossTerms, CollisionGradient)> {
    check_shapes(target, nontargets, surround)?;
    let impen = surround.impenetrable();
    let selfg = surround.self_values();
    let target_sum = target.sum();
    if !(target_sum > 0.0) {
        return Err(Error::ZeroDenominator("target occupancy sum"));
    }
    let self_sum: f64 = selfg.iter().sum();
    if !(self_sum > 0.0) {
        return Err(Error::ZeroDenominator("self grid count"));
    }
    let n = target.values.len();
    let mut neg = impen.clone();
    let mut winner = vec![usize::MAX; n];
    for (m, g) in nontargets.iter().enumerate() {
        for k in 0..n {
            if g.values[k] > neg[k] {
                neg[k] = g.values[k];
                winner[k] = m;
            }
        }
    }
    let mut col_num = 0.0;
    let mut surf_num = 0.0;
    for k in 0..n {
        col_num += target.values[k] * neg[k];
        surf_num += target.values[k] * selfg[k];
    }
    let terms = CollisionLossTerms {
        l_col: col_num / target_sum,
        l_surf: surf_num / self_sum,
    };

    let quotient = match denominator {
        Denominator::Frozen => 0.0,
        Denominator::Exact => col_num / (target_sum * target_sum),
    };
    let target_grad = (0..n)
        .map(|k| neg[k] / target_sum - quotient - selfg[k] / self_sum)
        .collect();
    let mut nontarget_grads = vec![vec![0.0; n]; nontargets.len()];
    for k in 0..n {
        if winner[k] != usize::MAX {
            nontarget_grads[winner[k]][k] = target.values[k] / target_sum;
        }
    }
    Ok((
        terms,
        CollisionGradient {
            target: target_grad,
            nontargets: nontarget_grads,
        },
    ))
}

/// Mean of `l_col − l_surf` over all objects.
pub fn total_scene_loss(terms: &[CollisionLossTerms]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::Empty("loss terms"));
    }
    Ok(terms.iter().map(CollisionLossTerms::total).sum::<f64>() / terms.len() as f64)
}
