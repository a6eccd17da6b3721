//! Exact intersection tests between closed triangle meshes.

use nalgebra::Point3;

use super::mesh::{ray_triangle, Aabb};
use super::{Pose, Solid};

type Tri = [Point3<f64>; 3];

fn tri_box(t: &Tri) -> Aabb {
    Aabb::from_points(t.iter()).expect("three points")
}

fn segment_hits(a: &Point3<f64>, b: &Point3<f64>, t: &Tri) -> bool {
    let d = b - a;
    matches!(ray_triangle(a, &d, &t[0], &t[1], &t[2]), Some(s) if (0.0..=1.0).contains(&s))
}

/// True if the triangles cross. Two non-coplanar triangles intersect iff
/// an edge of one pierces the other; coplanar contact is ignored since it
/// encloses no volume.
pub fn triangles_intersect(p: &Tri, q: &Tri) -> bool {
    for (x, y) in [(p, q), (q, p)] {
        for i in 0..3 {
            if segment_hits(&x[i], &x[(i + 1) % 3], y) {
                return true;
            }
        }
    }
    false
}

/// A closed mesh placed in the world, ready for overlap queries.
pub struct PlacedSolid<'a> {
    pub solid: &'a Solid,
    pub pose: Pose,
    pub triangles: Vec<Tri>,
    pub boxes: Vec<Aabb>,
    pub aabb: Aabb,
}

impl<'a> PlacedSolid<'a> {
    pub fn new(solid: &'a Solid, pose: Pose) -> Self {
        let triangles: Vec<Tri> = solid
            .mesh()
            .triangles()
            .map(|t| [pose.transform_point(&t[0]), pose.transform_point(&t[1]), pose.transform_point(&t[2])])
            .collect();
        let boxes: Vec<Aabb> = triangles.iter().map(tri_box).collect();
        let aabb = Aabb::from_points(triangles.iter().flatten()).expect("non-empty mesh");
        Self {
            solid,
            pose,
            triangles,
            boxes,
            aabb,
        }
    }

    fn contains_world(&self, p: &Point3<f64>) -> bool {
        self.solid.contains(&self.pose.inverse().transform_point(p))
    }

    /// True if the enclosed volumes overlap: some surface pair crosses or
    /// one solid lies entirely inside the other.
    pub fn overlaps(&self, other: &PlacedSolid) -> bool {
        if !self.aabb.intersects(&other.aabb) {
            return false;
        }
        let common = intersection(&self.aabb, &other.aabb);
        let near: Vec<usize> = (0..other.triangles.len())
            .filter(|&j| other.boxes[j].intersects(&common))
            .collect();
        for (i, t) in self.triangles.iter().enumerate() {
            if !self.boxes[i].intersects(&common) {
                continue;
            }
            for &j in &near {
                if self.boxes[i].intersects(&other.boxes[j]) && triangles_intersect(t, &other.triangles[j]) {
                    return true;
                }
            }
        }
        self.contains_world(&other.triangles[0][0]) || other.contains_world(&self.triangles[0][0])
    }
}

fn intersection(a: &Aabb, b: &Aabb) -> Aabb {
    Aabb {
        min: Point3::new(a.min.x.max(b.min.x), a.min.y.max(b.min.y), a.min.z.max(b.min.z)),
        max: Point3::new(a.max.x.min(b.max.x), a.max.y.min(b.max.y), a.max.z.min(b.max.z)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::CUBE;
    use crate::geometry::Mesh;
    use nalgebra::{UnitQuaternion, Vector3};

    fn cube() -> Solid {
        Solid::new(Mesh::parse_ascii(CUBE).unwrap()).unwrap()
    }

    #[test]
    fn separated_touching_and_overlapping() {
        let c = cube();
        let a = PlacedSolid::new(&c, Pose::identity());
        let far = PlacedSolid::new(&c, Pose::from_translation(Vector3::new(1.001, 0.0, 0.0)));
        let deep = PlacedSolid::new(&c, Pose::from_translation(Vector3::new(0.5, 0.2, 0.1)));
        assert!(!a.overlaps(&far));
        assert!(a.overlaps(&deep) && deep.overlaps(&a));
        // A rotated corner poking 1 mm into the face.
        let q = UnitQuaternion::from_euler_angles(0.3, 0.4, 0.5);
        let probe = PlacedSolid::new(&c, Pose::new(q, Vector3::zeros()));
        let corner = *probe.triangles.iter().flatten().min_by(|a, b| a.x.total_cmp(&b.x)).unwrap();
        let place = |x: f64| PlacedSolid::new(&c, Pose::new(q, Point3::new(x, 0.5, 0.5) - corner));
        let poke = place(0.999);
        assert!(a.overlaps(&poke));
        let clear = place(1.001);
        assert!(!a.overlaps(&clear));
    }

    #[test]
    fn nested_solids_overlap() {
        let big = Solid::new(Mesh::parse_ascii(CUBE).unwrap().transformed(&Pose::identity())).unwrap();
        let m = Mesh::parse_ascii(CUBE).unwrap();
        let small = Solid::new(Mesh::new(m.vertices.iter().map(|p| p * 0.1).collect(), m.faces.clone()).unwrap()).unwrap();
        let a = PlacedSolid::new(&big, Pose::identity());
        let b = PlacedSolid::new(&small, Pose::from_translation(Vector3::new(0.4, 0.4, 0.4)));
        assert!(a.overlaps(&b) && b.overlaps(&a));
    }
}
