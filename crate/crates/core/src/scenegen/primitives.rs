//! Watertight procedural meshes, each centered on its bounding box.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Point3, Vector3};

use crate::error::Result;
use crate::geometry::Mesh;

fn centered(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Mesh> {
    let mesh = Mesh::new(vertices, faces)?;
    let c = mesh.aabb().center().coords;
    let vertices = mesh.vertices.iter().map(|p| p - c).collect();
    Mesh::new(vertices, mesh.faces)
}

/// Axis-aligned box with the given full extents.
pub fn box_mesh(extent: Vector3<f64>) -> Result<Mesh> {
    let h = extent / 2.0;
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |b: usize| if i & b != 0 { 1.0 } else { -1.0 };
        v.push(Point3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z));
    }
    let faces = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    centered(v, faces)
}

pub fn cube(side: f64) -> Result<Mesh> {
    box_mesh(Vector3::repeat(side))
}

/// Extrudes a counter-clockwise polygon along z. `fan` lists the polygon
/// triangulation (indices into `poly`, counter-clockwise).
fn extrude(poly: &[[f64; 2]], fan: &[[u32; 3]], height: f64) -> Result<Mesh> {
    let n = poly.len() as u32;
    let mut v = Vec::with_capacity(2 * poly.len());
    for z in [-height / 2.0, height / 2.0] {
        v.extend(poly.iter().map(|p| Point3::new(p[0], p[1], z)));
    }
    let mut faces = Vec::new();
    for t in fan {
        faces.push([t[0], t[2], t[1]]);
        faces.push([t[0] + n, t[1] + n, t[2] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, j + n]);
        faces.push([i, j + n, i + n]);
    }
    centered(v, faces)
}

/// Closed cylinder along z.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> Result<Mesh> {
    let poly: Vec<[f64; 2]> = (0..segments)
        .map(|i| {
            let a = TAU * i as f64 / segments as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    let fan: Vec<[u32; 3]> = (1..segments as u32 - 1).map(|i| [0, i, i + 1]).collect();
    extrude(&poly, &fan, height)
}

/// L-shaped prism: two arms of length `arm` and width `width`, extruded
/// by `height`.
pub fn l_shape(arm: f64, width: f64, height: f64) -> Result<Mesh> {
    let poly = [[0.0, 0.0], [arm, 0.0], [arm, width], [width, width], [width, arm], [0.0, arm]];
    // Fan from the reflex corner, which sees every other vertex.
    let fan = [[3, 4, 5], [3, 5, 0], [3, 0, 1], [3, 1, 2]];
    extrude(&poly, &fan, height)
}

/// Hollow hemisphere opening towards +z: outer radius `outer`, wall
/// thickness `outer - inner`.
pub fn bowl(outer: f64, inner: f64, segments: usize, rings: usize) -> Result<Mesh> {
    let mut v = Vec::new();
    let mut faces = Vec::new();
    // Ring r at polar angle r/rings * 90 degrees below the rim.
    let mut shell = |radius: f64| -> (Vec<Vec<u32>>, u32) {
        let mut idx = Vec::new();
        for r in 0..rings {
            let phi = FRAC_PI_2 * r as f64 / rings as f64;
            let (rad, z) = (radius * phi.cos(), -radius * phi.sin());
            let ring = (0..segments)
                .map(|i| {
                    let a = TAU * i as f64 / segments as f64;
                    v.push(Point3::new(rad * a.cos(), rad * a.sin(), z));
                    (v.len() - 1) as u32
                })
                .collect();
            idx.push(ring);
        }
        v.push(Point3::new(0.0, 0.0, -radius));
        (idx, (v.len() - 1) as u32)
    };
    let (out_rings, out_pole) = shell(outer);
    let (in_rings, in_pole) = shell(inner);
    let s = segments;
    for r in 0..rings - 1 {
        for i in 0..s {
            let j = (i + 1) % s;
            let (a, b, c, d) = (out_rings[r][i], out_rings[r][j], out_rings[r + 1][i], out_rings[r + 1][j]);
            faces.push([a, c, d]);
            faces.push([a, d, b]);
            let (a, b, c, d) = (in_rings[r][i], in_rings[r][j], in_rings[r + 1][i], in_rings[r + 1][j]);
            faces.push([a, d, c]);
            faces.push([a, b, d]);
        }
    }
    for i in 0..s {
        let j = (i + 1) % s;
        faces.push([out_rings[rings - 1][i], out_pole, out_rings[rings - 1][j]]);
        faces.push([in_rings[rings - 1][i], in_rings[rings - 1][j], in_pole]);
        // Rim annulus at z = 0, facing up.
        let (a, b, c, d) = (out_rings[0][i], out_rings[0][j], in_rings[0][i], in_rings[0][j]);
        faces.push([a, b, d]);
        faces.push([a, d, c]);
    }
    centered(v, faces)
}

/// The built-in object set: `(name, mesh, symmetric)`.
pub fn catalog() -> Result<Vec<(&'static str, Mesh, bool)>> {
    Ok(vec![
        ("cube", cube(0.06)?, true),
        ("box", box_mesh(Vector3::new(0.09, 0.05, 0.035))?, false),
        ("cylinder", cylinder(0.03, 0.08, 32)?, true),
        ("lshape", l_shape(0.08, 0.03, 0.04)?, false),
        ("bowl", bowl(0.05, 0.042, 32, 8)?, true),
    ])
}
