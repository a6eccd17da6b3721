//! Multi-view pose agreement: an object is spawned once enough of its
//! recent world-frame hypotheses agree with each other.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{ObjectModel, Pose};
use crate::losses::{add_loss, adds_loss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementConfig {
    /// Number of recent hypotheses kept.
    pub capacity: usize,
    /// Pose-loss threshold in meters.
    pub threshold: f64,
    /// Minimum number of ordered pairs under the threshold.
    pub min_agreements: usize,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            capacity: 5,
            threshold: 0.02,
            min_agreements: 12,
        }
    }
}

impl AgreementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 || !(self.threshold > 0.0) || self.min_agreements == 0 {
            return Err(Error::InvalidArgument(format!("invalid agreement config {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of evaluating a full buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// Ordered pairs `(i, j)`, `i != j`, with `loss(i, j) < threshold`.
    pub count: usize,
    /// Under-threshold partner count per buffered pose, oldest first.
    pub partners: Vec<usize>,
    /// Index of the medoid pose.
    pub medoid: usize,
}

/// Ring buffer of one instance's recent world-frame pose hypotheses.
#[derive(Debug, Clone)]
pub struct HypothesisBuffer {
    config: AgreementConfig,
    poses: VecDeque<Pose>,
}

impl HypothesisBuffer {
    pub fn new(config: AgreementConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            poses: VecDeque::with_capacity(config.capacity),
        })
    }

    pub fn config(&self) -> &AgreementConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.poses.len() == self.config.capacity
    }

    /// Buffered poses, oldest first.
    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.poses.iter()
    }

    pub fn push(&mut self, pose: Pose) -> Result<()> {
        if !pose.is_finite() {
            return Err(Error::InvalidArgument("non-finite pose hypothesis".into()));
        }
        if self.is_full() {
            self.poses.pop_front();
        }
        self.poses.push_back(pose);
        Ok(())
    }

    /// Counts under-threshold ordered pairs among the buffered poses. The
    /// pair loss is ADD-S for symmetric models and ADD otherwise.
    pub fn evaluate(&self, model: &ObjectModel) -> Result<Agreement> {
        let n = self.poses.len();
        let mut partners = vec![0; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (&self.poses[i], &self.poses[j]);
                let loss = if model.symmetric {
                    adds_loss(a, b, &model.points)?
                } else {
                    add_loss(a, b, &model.points)?
                };
                if loss < self.config.threshold {
                    partners[i] += 1;
                }
            }
        }
        // Most partners wins; on a tie the most recent pose.
        let medoid = (0..n).max_by_key(|&i| (partners[i], i)).unwrap_or(0);
        Ok(Agreement {
            count: partners.iter().sum(),
            partners,
            medoid,
        })
    }

    /// Appends `pose`; once the buffer is full, returns the agreed pose if
    /// at least `min_agreements` ordered pairs are under the threshold.
    pub fn push_and_check(&mut self, pose: Pose, model: &ObjectModel) -> Result<Option<Pose>> {
        self.push(pose)?;
        if !self.is_full() {
            return Ok(None);
        }
        let a = self.evaluate(model)?;
        Ok((a.count >= self.config.min_agreements).then(|| self.poses[a.medoid]))
    }
}

/// Maps a camera-frame pose into the world frame.
pub fn to_world(pose_cam: &Pose, camera_pose: &Pose) -> Pose {
    camera_pose.compose(pose_cam)
}
