//! ADD / ADD-S distances and area-under-curve evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ObjectModel, Pose};
use crate::losses::{add_loss, adds_loss};

/// Maximum threshold of the accuracy curve, in meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.1;
/// Objects below this visibility form the low-visibility bucket.
pub const LOW_VISIBILITY: f64 = 0.3;

/// Area under the accuracy-vs-threshold curve on `[0, d_max]`, normalized
/// to `[0, 1]`. Equals `1 − mean(min(d, d_max)) / d_max`.
pub fn auc(distances: &[f64], d_max: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Empty("distances"));
    }
    if !(d_max > 0.0) {
        return Err(Error::InvalidArgument(format!("d_max must be positive, got {d_max}")));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative or NaN distance {d}")));
    }
    // Normalizing before summing keeps the boundary cases exact.
    let clipped: f64 = distances.iter().map(|d| (d / d_max).min(1.0)).sum();
    Ok(1.0 - clipped / distances.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub id: u32,
    /// ADD, or ADD-S for symmetric objects.
    pub add: f64,
    pub adds: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub per_object: Vec<ObjectReport>,
    pub auc_add: f64,
    pub auc_adds: f64,
    /// `None` when no object is in the low-visibility bucket.
    pub auc_add_lowvis: Option<f64>,
    pub auc_adds_lowvis: Option<f64>,
}

impl Report {
    /// Recomputes the aggregates from `per_object`.
    pub fn from_objects(per_object: Vec<ObjectReport>) -> Result<Report> {
        let add: Vec<f64> = per_object.iter().map(|o| o.add).collect();
        let adds: Vec<f64> = per_object.iter().map(|o| o.adds).collect();
        let low: Vec<&ObjectReport> = per_object.iter().filter(|o| o.visibility < LOW_VISIBILITY).collect();
        let (auc_add_lowvis, auc_adds_lowvis) = if low.is_empty() {
            (None, None)
        } else {
            let a: Vec<f64> = low.iter().map(|o| o.add).collect();
            let s: Vec<f64> = low.iter().map(|o| o.adds).collect();
            (Some(auc(&a, AUC_MAX_THRESHOLD)?), Some(auc(&s, AUC_MAX_THRESHOLD)?))
        };
        Ok(Report {
            auc_add: auc(&add, AUC_MAX_THRESHOLD)?,
            auc_adds: auc(&adds, AUC_MAX_THRESHOLD)?,
            auc_add_lowvis,
            auc_adds_lowvis,
            per_object,
        })
    }

    pub fn mean_add(&self) -> f64 {
        self.per_object.iter().map(|o| o.add).sum::<f64>() / self.per_object.len() as f64
    }
}

/// Scores estimated poses against ground truth. Ids must match exactly;
/// objects are reported in ground-truth order.
pub fn evaluate_scene(
    gt: &[(u32, Pose)],
    est: &[(u32, Pose)],
    models: &BTreeMap<u32, Arc<ObjectModel>>,
    visibility: &BTreeMap<u32, f64>,
) -> Result<Report> {
    let est_map: BTreeMap<u32, Pose> = est.iter().copied().collect();
    if est_map.len() != est.len() || est.len() != gt.len() {
        return Err(Error::IdMismatch(format!("{} ground-truth poses, {} estimates", gt.len(), est.len())));
    }
    let mut per_object = Vec::with_capacity(gt.len());
    for (id, g) in gt {
        let e = est_map
            .get(id)
            .ok_or_else(|| Error::IdMismatch(format!("no estimate for object {id}")))?;
        let model = models
            .get(id)
            .ok_or_else(|| Error::IdMismatch(format!("no model for object {id}")))?;
        let adds = adds_loss(g, e, &model.points)?;
        let add = if model.symmetric { adds } else { add_loss(g, e, &model.points)? };
        per_object.push(ObjectReport {
            id: *id,
            add,
            adds,
            visibility: visibility.get(id).copied().unwrap_or(1.0),
        });
    }
    Report::from_objects(per_object)
}
