//! Triangle meshes, the ASCII mesh format, and ray-parity containment.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Aabb> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    pub fn inflate(&self, m: f64) -> Aabb {
        let d = Vector3::repeat(m);
        Aabb {
            min: self.min - d,
            max: self.max + d,
        }
    }

    /// Slab test; returns the parametric entry/exit interval of the ray.
    pub fn ray_interval(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = {
                let a = (self.min[i] - origin[i]) * inv;
                let b = (self.max[i] - origin[i]) * inv;
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Möller–Trumbore ray/triangle intersection; returns the ray parameter.
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&qvec) * inv)
}

impl Mesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Mesh> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::Empty("mesh"));
        }
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "face {f:?} references a vertex out of range ({n} vertices)"
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Point3<f64>; 3]> + '_ {
        (0..self.faces.len()).map(|f| self.triangle(f))
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.vertices).expect("mesh has vertices")
    }

    pub fn area(&self) -> f64 {
        self.triangles()
            .map(|[a, b, c]| 0.5 * (b - a).cross(&(c - a)).norm())
            .sum()
    }

    /// Signed volume via the divergence theorem (positive for outward faces).
    pub fn signed_volume(&self) -> f64 {
        self.triangles()
            .map(|[a, b, c]| a.coords.dot(&b.coords.cross(&c.coords)) / 6.0)
            .sum()
    }

    /// Number of edges that are not shared by exactly two consistently
    /// oriented faces. Zero means the mesh is closed and oriented.
    pub fn open_edge_count(&self) -> usize {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .filter(|(&(a, b), &n)| n != 1 || directed.get(&(b, a)) != Some(&1))
            .count()
    }

    pub fn is_watertight(&self) -> bool {
        self.open_edge_count() == 0
    }

    pub fn transformed(&self, pose: &super::Pose) -> Mesh {
        Mesh {
            vertices: pose.transform_points(&self.vertices),
            faces: self.faces.clone(),
        }
    }

    /// Parses the ASCII format: `v x y z` vertex lines and `f a b c` faces
    /// with 1-based indices. Blank lines and `#` comments are ignored.
    pub fn parse_ascii(text: &str) -> Result<Mesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::MeshParse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let c: Vec<f64> = tok
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad vertex coordinate"))?;
                    if c.len() != 3 {
                        return Err(err("vertex needs 3 coordinates"));
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = tok
                        .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err("bad face index"))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(err("face needs 3 one-based indices"));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                Some(other) => return Err(err(&format!("unknown record '{other}'"))),
                None => {}
            }
        }
        Mesh::new(vertices, faces)
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }
}

/// Ray directions for the parity vote, deliberately skewed off every
/// axis and diagonal.
const PARITY_DIRS: [[f64; 3]; 3] = [
    [0.8171, 0.4237, 0.3911],
    [-0.2713, 0.8893, -0.3681],
    [0.3339, -0.1993, -0.9213],
];

struct ParityBins {
    dir: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    lo: [f64; 2],
    cell: [f64; 2],
    n: [usize; 2],
    bins: Vec<Vec<u32>>,
}

impl ParityBins {
    fn build(mesh: &Mesh, dir: Vector3<f64>) -> ParityBins {
        let dir = dir.normalize();
        let helper = if dir.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = dir.cross(&helper).normalize();
        let e2 = dir.cross(&e1);
        let proj = |p: &Point3<f64>| [p.coords.dot(&e1), p.coords.dot(&e2)];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &mesh.vertices {
            let q = proj(v);
            for k in 0..2 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        let side = ((mesh.faces.len() as f64).sqrt().ceil() as usize).clamp(1, 64);
        let n = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(1e-12),
            ((hi[1] - lo[1]) / side as f64).max(1e-12),
        ];
        let mut bins = vec![Vec::new(); side * side];
        for (fi, tri) in mesh.triangles().enumerate() {
            let mut tlo = [f64::INFINITY; 2];
            let mut thi = [f64::NEG_INFINITY; 2];
            for v in &tri {
                let q = proj(v);
                for k in 0..2 {
                    tlo[k] = tlo[k].min(q[k]);
                    thi[k] = thi[k].max(q[k]);
                }
            }
            let range = |k: usize| {
                let a = (((tlo[k] - lo[k]) / cell[k]).floor() as isize - 1).max(0) as usize;
                let b = (((thi[k] - lo[k]) / cell[k]).floor() as isize + 1).min(n[k] as isize - 1);
                (a, b.max(0) as usize)
            };
            let (a0, b0) = range(0);
            let (a1, b1) = range(1);
            for i in a0..=b0 {
                for j in a1..=b1 {
                    bins[i * n[1] + j].push(fi as u32);
                }
            }
        }
        ParityBins {
            dir,
            e1,
            e2,
            lo,
            cell,
            n,
            bins,
        }
    }

    fn crossings(&self, mesh: &Mesh, p: &Point3<f64>) -> usize {
        let q = [p.coords.dot(&self.e1), p.coords.dot(&self.e2)];
        let mut idx = [0usize; 2];
        for k in 0..2 {
            let f = ((q[k] - self.lo[k]) / self.cell[k]).floor();
            if f < 0.0 || f >= self.n[k] as f64 {
                return 0;
            }
            idx[k] = f as usize;
        }
        self.bins[idx[0] * self.n[1] + idx[1]]
            .iter()
            .filter(|&&f| {
                let [a, b, c] = mesh.triangle(f as usize);
                matches!(ray_triangle(p, &self.dir, &a, &b, &c), Some(t) if t > 0.0)
            })
            .count()
    }
}

/// Point containment for a closed mesh by majority vote over three
/// ray-parity tests. Triangles are binned per ray direction so a query
/// only visits the triangles whose projection covers the query point.
pub struct Solid {
    mesh: Mesh,
    aabb: Aabb,
    bins: Vec<ParityBins>,
}

impl Solid {
    pub fn new(mesh: Mesh) -> Result<Solid> {
        let bad = mesh.open_edge_count();
        if bad > 0 {
            return Err(Error::NotWatertight(bad));
        }
        let bins = PARITY_DIRS
            .iter()
            .map(|d| ParityBins::build(&mesh, Vector3::new(d[0], d[1], d[2])))
            .collect();
        Ok(Solid {
            aabb: mesh.aabb(),
            mesh,
            bins,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        if !self.aabb.contains(p) {
            return false;
        }
        let votes = self
            .bins
            .iter()
            .filter(|b| b.crossings(&self.mesh, p) % 2 == 1)
            .count();
        votes >= 2
    }
}

impl std::fmt::Debug for Solid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solid")
            .field("faces", &self.mesh.faces.len())
            .field("aabb", &self.aabb)
            .finish()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const CUBE: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn parse_cube() {
        let m = Mesh::parse_ascii(CUBE).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
        assert!((m.area() - 6.0).abs() < 1e-12);
        let round = Mesh::parse_ascii(&m.to_ascii()).unwrap();
        assert_eq!(round, m);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Mesh::parse_ascii("v 0 0\n"),
            Err(Error::MeshParse { line: 1, .. })
        ));
        assert!(matches!(
            Mesh::parse_ascii("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            Mesh::parse_ascii("x 1\n"),
            Err(Error::MeshParse { .. })
        ));
    }

    #[test]
    fn open_mesh_detected() {
        let m = Mesh::parse_ascii("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert!(!m.is_watertight());
        assert!(matches!(Solid::new(m), Err(Error::NotWatertight(3))));
    }

    #[test]
    fn cube_containment() {
        let solid = Solid::new(Mesh::parse_ascii(CUBE).unwrap()).unwrap();
        // Lattice that shares coordinates with vertices and edges.
        for i in 0..=10 {
            for j in 0..=10 {
                for k in 0..=10 {
                    let p = Point3::new(i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.1);
                    let interior = (1..10).contains(&i) && (1..10).contains(&j) && (1..10).contains(&k);
                    if interior {
                        assert!(solid.contains(&p), "{p:?}");
                    }
                }
            }
        }
        assert!(!solid.contains(&Point3::new(1.5, 0.5, 0.5)));
        assert!(!solid.contains(&Point3::new(0.5, 0.5, -0.01)));
    }

    #[test]
    fn ray_interval_hits_box() {
        let b = Aabb {
            min: Point3::new(0.0, 0.0, 0.0),
            max: Point3::new(1.0, 1.0, 1.0),
        };
        let (t0, t1) = b
            .ray_interval(&Point3::new(0.5, 0.5, -1.0), &Vector3::z())
            .unwrap();
        assert_eq!((t0, t1), (1.0, 2.0));
        assert!(b
            .ray_interval(&Point3::new(2.0, 0.5, -1.0), &Vector3::z())
            .is_none());
    }
}
