//! Object models: a mesh plus the point samples used by the losses,
//! the voxelizer, and ICP.

use std::sync::Arc;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{Mesh, Solid};
use crate::error::{Error, Result};

/// Where model points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Area-weighted uniform samples on the triangles.
    Surface,
    /// Uniform samples of the enclosed volume (needs a closed mesh).
    Interior,
    /// One third on the surface, the rest inside.
    SurfaceAndInterior,
}

/// Sampling parameters for [`ObjectModel::new`].
#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    /// Size of the point set `X` used for losses and voxelization.
    pub n_points: usize,
    /// Size of the dense surface sample used for ICP and visibility.
    pub n_surface: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_points: 5000,
            n_surface: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub solid: Arc<Solid>,
    /// Surface and interior samples in the object frame.
    pub points: Arc<Vec<Point3<f64>>>,
    pub surface_points: Arc<Vec<Point3<f64>>>,
    pub diagonal: f64,
    pub symmetric: bool,
}

impl ObjectModel {
    pub fn new(name: impl Into<String>, mesh: Mesh, symmetric: bool, cfg: ModelConfig) -> Result<Self> {
        let diagonal = mesh.aabb().diagonal();
        if !(diagonal > 0.0) {
            return Err(Error::InvalidArgument("degenerate mesh bounding box".into()));
        }
        let solid = Solid::new(mesh.clone())?;
        let points = sample_with_solid(&mesh, &solid, cfg.n_points, cfg.seed, SampleMode::SurfaceAndInterior)?;
        let surface_points = sample_with_solid(
            &mesh,
            &solid,
            cfg.n_surface,
            cfg.seed.wrapping_add(0x5eed),
            SampleMode::Surface,
        )?;
        Ok(Self {
            name: name.into(),
            mesh: Arc::new(mesh),
            solid: Arc::new(solid),
            points: Arc::new(points),
            surface_points: Arc::new(surface_points),
            diagonal,
            symmetric,
        })
    }
}

/// Samples `n` points from `mesh`, deterministically for a given seed.
pub fn sample_model_points(mesh: &Mesh, n: usize, seed: u64, mode: SampleMode) -> Result<Vec<Point3<f64>>> {
    if mode == SampleMode::Surface {
        return sample_surface(mesh, n, &mut ChaCha8Rng::seed_from_u64(seed));
    }
    let solid = Solid::new(mesh.clone())?;
    sample_with_solid(mesh, &solid, n, seed, mode)
}

fn sample_with_solid(
    mesh: &Mesh,
    solid: &Solid,
    n: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<Vec<Point3<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SampleMode::Surface => sample_surface(mesh, n, &mut rng),
        SampleMode::Interior => sample_interior(solid, n, &mut rng),
        SampleMode::SurfaceAndInterior => {
            let n_surf = n / 3;
            let mut pts = sample_surface(mesh, n_surf.max(1).min(n), &mut rng)?;
            if n > pts.len() {
                pts.extend(sample_interior(solid, n - pts.len(), &mut rng)?);
            }
            Ok(pts)
        }
    }
}

fn sample_surface(mesh: &Mesh, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Point3<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for [a, b, c] in mesh.triangles() {
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero surface area".into()));
    }
    let bbox = mesh.aabb();
    let pts = (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            let p = a + (b - a) * (s * (1.0 - t)) + (c - a) * (s * t);
            // Rounding may leave the point an ulp outside the box.
            p.sup(&bbox.min).inf(&bbox.max)
        })
        .collect();
    Ok(pts)
}

fn sample_interior(solid: &Solid, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Point3<f64>>> {
    let b = *solid.aabb();
    let ext = b.extent();
    let mut pts = Vec::with_capacity(n);
    let mut misses = 0usize;
    while pts.len() < n {
        let p = Point3::new(
            b.min.x + rng.random::<f64>() * ext.x,
            b.min.y + rng.random::<f64>() * ext.y,
            b.min.z + rng.random::<f64>() * ext.z,
        );
        if solid.contains(&p) {
            pts.push(p);
            misses = 0;
        } else {
            misses += 1;
            if misses > 1_000_000 {
                return Err(Error::InvalidArgument("mesh encloses no volume".into()));
            }
        }
    }
    Ok(pts)
}
