//! Point-to-point ICP of one model against its observed surface points.

use nalgebra::{Matrix3, Point3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::geometry::{KdTree, ObjectModel, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the mean squared residual improves by less than this.
    pub tol: f64,
    /// Observed points farther than this from their match are ignored.
    /// Disabled by default because trimming breaks monotonic descent.
    pub max_distance: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-10,
            max_distance: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpOutcome {
    pub pose: Pose,
    pub iterations: usize,
    /// Mean squared point-to-model residual before each iteration and
    /// after the last.
    pub residuals: Vec<f64>,
    /// Set when the observation cannot constrain a pose (fewer than three
    /// points or collinear); the input pose is returned unchanged.
    pub degenerate: bool,
    pub converged: bool,
}

/// Least-squares rigid transform taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Pose {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Pose::new(q, cd - q * cs)
}

fn is_degenerate(points: &[Point3<f64>]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov / n).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    !(ev[0] > 0.0) || ev[1] < 1e-9 * ev[0]
}

/// Refines `init` so that the model surface samples best explain the
/// world-frame `observed` points.
pub fn icp_refine(observed: &[Point3<f64>], model: &ObjectModel, init: Pose, cfg: &IcpConfig) -> IcpOutcome {
    if is_degenerate(observed) || model.surface_points.is_empty() {
        return IcpOutcome {
            pose: init,
            iterations: 0,
            residuals: Vec::new(),
            degenerate: true,
            converged: false,
        };
    }
    let tree = KdTree::new(&model.surface_points);
    let max_d2 = cfg.max_distance.map(|d| d * d);
    let mut pose = init;
    let mut residuals = Vec::new();
    let mut prev_matches: Vec<usize> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let inv = pose.inverse();
        let mut src = Vec::with_capacity(observed.len());
        let mut dst = Vec::with_capacity(observed.len());
        let mut matches = Vec::with_capacity(observed.len());
        let mut sum = 0.0;
        for p in observed {
            let (i, d2) = tree.nearest(&inv.transform_point(p)).expect("non-empty tree");
            if max_d2.is_some_and(|m| d2 > m) {
                continue;
            }
            sum += d2;
            src.push(model.surface_points[i]);
            dst.push(*p);
            matches.push(i);
        }
        let r = if matches.is_empty() { f64::INFINITY } else { sum / matches.len() as f64 };
        if let Some(&last) = residuals.last() {
            if matches == prev_matches || last - r < cfg.tol {
                residuals.push(r);
                converged = true;
                break;
            }
        }
        residuals.push(r);
        if iterations == cfg.max_iters || matches.len() < 3 {
            break;
        }
        pose = kabsch(&src, &dst);
        prev_matches = matches;
        iterations += 1;
    }
    IcpOutcome {
        pose,
        iterations,
        residuals,
        degenerate: false,
        converged,
    }
}
