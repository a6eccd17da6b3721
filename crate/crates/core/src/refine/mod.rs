//! Joint multi-object pose refinement: collision-based gradient descent
//! (ICC), point-to-point ICP, and ICC followed by ICP.

pub mod icc;
pub mod icp;

use std::sync::Arc;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fusion::SurroundGrids;
use crate::geometry::{ObjectModel, Pose};
use crate::losses::Denominator;
use crate::voxelize::DEFAULT_DELTA_T;

pub use icc::{
    evaluate_scene_objective, frozen_denominator_loss, icc_refine, icc_refine_observed, scene_loss, IccOutcome,
    IccStatus, SceneObjective, TraceRow,
};
pub use icp::{icp_refine, IcpConfig, IcpOutcome};

/// How gradients are turned into pose steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `step = -lr * g`.
    Gradient,
    /// `step = -lr * g / |g|` per rotational and translational block, so
    /// the learning rates are step lengths in radians and meters.
    Normalized,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub max_iters: usize,
    pub lr_rot: f64,
    pub lr_trans: f64,
    /// Multiplies both learning rates after every iteration.
    pub decay: f64,
    pub step_rule: StepRule,
    /// Converged after `patience` consecutive iterations with `|ΔL| < tol`.
    pub tol: f64,
    pub patience: usize,
    /// Diverged after this many consecutive iterations above 10x the
    /// initial loss magnitude.
    pub divergence_patience: usize,
    pub delta_t: f64,
    /// Number of model points voxelized per object (a prefix of `X`).
    pub model_points: usize,
    pub denominator: Denominator,
    pub icp: IcpConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            lr_rot: 0.005,
            lr_trans: 0.0005,
            decay: 0.99,
            step_rule: StepRule::Gradient,
            tol: 1e-6,
            patience: 10,
            divergence_patience: 20,
            delta_t: DEFAULT_DELTA_T,
            model_points: 5000,
            denominator: Denominator::Frozen,
            icp: IcpConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.lr_rot > 0.0
            && self.lr_trans > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.delta_t > 0.0
            && self.model_points > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid refinement config {self:?}")))
        }
    }
}

/// One object of a scene hypothesis.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub id: u32,
    pub model: Arc<ObjectModel>,
    pub pose: Pose,
    /// Surrounding grids from fusion; fixed for a refinement run.
    pub surround: SurroundGrids,
    /// Masked observed surface points in the world frame (used by ICP).
    pub observed: Vec<Point3<f64>>,
}

#[derive(Debug, Clone)]
pub struct SceneHypothesis {
    pub objects: Vec<SceneObject>,
}

impl SceneHypothesis {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self> {
        let mut ids: Vec<u32> = objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("instance ids must be unique".into()));
        }
        Ok(Self { objects })
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.objects.iter().map(|o| o.pose).collect()
    }

    pub fn with_poses(&self, poses: &[Pose]) -> SceneHypothesis {
        let mut out = self.clone();
        for (o, p) in out.objects.iter_mut().zip(poses) {
            o.pose = *p;
        }
        out
    }
}

/// Refinement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    None,
    Icc,
    Icp,
    IccIcp,
}

impl std::str::FromStr for RefineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RefineMode::None),
            "icc" => Ok(RefineMode::Icc),
            "icp" => Ok(RefineMode::Icp),
            "icc+icp" => Ok(RefineMode::IccIcp),
            other => Err(Error::InvalidArgument(format!("unknown refine mode '{other}'"))),
        }
    }
}

/// Result of [`refine`]: the refined scene plus the ICC loss trace and
/// status (empty and `None` when ICC did not run).
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub scene: SceneHypothesis,
    pub trace: Vec<TraceRow>,
    pub status: Option<IccStatus>,
}

/// ICP on every object with at least three observed points.
pub fn icp_all(scene: &SceneHypothesis, cfg: &RefineConfig) -> SceneHypothesis {
    let poses: Vec<Pose> = scene
        .objects
        .iter()
        .map(|o| {
            if o.observed.len() < 3 {
                o.pose
            } else {
                icp_refine(&o.observed, &o.model, o.pose, &cfg.icp).pose
            }
        })
        .collect();
    scene.with_poses(&poses)
}

/// ICC to resolve collisions, then per-object ICP to align surfaces.
/// Divergence is an error here.
pub fn refine_combined(scene: &SceneHypothesis, cfg: &RefineConfig) -> Result<SceneHypothesis> {
    let out = icc_refine(scene, cfg)?;
    out.check()?;
    Ok(icp_all(&out.scene, cfg))
}

/// Runs `mode`. A diverged ICC run is returned as an outcome with its
/// trace, and ICP is skipped after it; see [`IccOutcome::check`].
pub fn refine(scene: &SceneHypothesis, mode: RefineMode, cfg: &RefineConfig) -> Result<RefineOutcome> {
    match mode {
        RefineMode::None => Ok(RefineOutcome {
            scene: scene.clone(),
            trace: Vec::new(),
            status: None,
        }),
        RefineMode::Icp => Ok(RefineOutcome {
            scene: icp_all(scene, cfg),
            trace: Vec::new(),
            status: None,
        }),
        RefineMode::Icc | RefineMode::IccIcp => {
            let out = icc_refine(scene, cfg)?;
            let diverged = matches!(out.status, IccStatus::Diverged { .. });
            let scene = if mode == RefineMode::IccIcp && !diverged {
                icp_all(&out.scene, cfg)
            } else {
                out.scene
            };
            Ok(RefineOutcome {
                scene,
                trace: out.trace,
                status: Some(out.status),
            })
        }
    }
}
