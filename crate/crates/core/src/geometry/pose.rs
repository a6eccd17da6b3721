//! Rigid-body poses and the incremental twist used by the optimizers.

use nalgebra::{Matrix4, Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Rigid transform `x -> R x + t`, rotation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Incremental rigid motion: axis-angle rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub rotational: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl Twist {
    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self {
            rotational,
            translational,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Components as `[rx, ry, rz, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 6] {
        let r = &self.rotational;
        let t = &self.translational;
        [r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(a[3], a[4], a[5]),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rotational, -self.translational)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let mut rotation = rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from raw `[w, x, y, z]` quaternion components; the
    /// quaternion is normalized.
    pub fn from_parts(q: [f64; 4], t: [f64; 3]) -> Self {
        let quat = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(quat, Vector3::new(t[0], t[1], t[2]))
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `a.compose(b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn transform_points(&self, pts: &[Point3<f64>]) -> Vec<Point3<f64>> {
        let rot = self.rotation.to_rotation_matrix();
        pts.iter().map(|p| rot * p + self.translation).collect()
    }

    /// Left-multiplied exponential update: `R <- exp(w) R`, `t <- t + v`.
    ///
    /// The rotation increment is applied about the object origin, so the
    /// derivative of `R x + t` with respect to `w` at zero is `-[R x]_x`.
    pub fn exp_update(&self, d: &Twist) -> Pose {
        let dq = UnitQuaternion::from_scaled_axis(d.rotational);
        Pose::new(dq * self.rotation, self.translation + d.translational)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self^-1 * other` in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.quat_wxyz().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let t = &self.translation;
        PoseRepr {
            q: self.quat_wxyz(),
            t: [t.x, t.y, t.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let norm = repr.q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) || !repr.t.iter().all(|v| v.is_finite()) {
            return Err(serde::de::Error::custom("pose must be finite with nonzero quaternion"));
        }
        // Keep already-normalized quaternions bit-exact through a round trip.
        let q = Quaternion::new(repr.q[0], repr.q[1], repr.q[2], repr.q[3]);
        let rotation = if (norm - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Pose {
            rotation,
            translation: Vector3::new(repr.t[0], repr.t[1], repr.t[2]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Homogeneous matrix built directly from quaternion components.
    fn matrix_oracle(p: &Pose) -> [[f64; 4]; 4] {
        let [w, x, y, z] = p.quat_wxyz();
        let t = p.translation;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                t.x,
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                t.y,
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
                t.z,
            ],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn matmul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let t = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        Pose::from_parts(q, t)
    }

    fn assert_near_identity(p: &Pose, tol: f64) {
        assert!(p.rotation.angle() < tol, "angle {}", p.rotation.angle());
        assert!(p.translation.norm() < tol);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let q = Pose::identity().compose(&p);
        assert!((q.translation - p.translation).norm() < 1e-15);
        assert!(q.angle_to(&p) < 1e-12);
        assert_near_identity(&p.compose(&p.inverse()), 1e-9);
        assert_near_identity(&p.inverse().compose(&p), 1e-9);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let expected = matmul(&matrix_oracle(&a), &matrix_oracle(&b));
            let got = matrix_oracle(&a.compose(&b));
            for i in 0..4 {
                for j in 0..4 {
                    assert!((expected[i][j] - got[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transform_points_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3<f64>> = (0..100)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        assert_eq!(Pose::identity().transform_points(&pts), pts);

        let shift = Vector3::new(0.1, -0.2, 0.3);
        let moved = Pose::from_translation(shift).transform_points(&pts);
        for (a, b) in moved.iter().zip(&pts) {
            assert_eq!(*a, b + shift);
        }

        let p = random_pose(&mut rng);
        let m = matrix_oracle(&p);
        for (out, x) in p.transform_points(&pts).iter().zip(&pts) {
            for i in 0..3 {
                let e = m[i][0] * x.x + m[i][1] * x.y + m[i][2] * x.z + m[i][3];
                assert!((out[i] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng);
        assert_eq!(p.exp_update(&Twist::zero()), p);

        let yaw = Pose::identity().exp_update(&Twist::new(
            Vector3::new(0.0, 0.0, FRAC_PI_2),
            Vector3::zeros(),
        ));
        // Rodrigues with axis z, angle pi/2: maps x -> y, y -> -x.
        let ex = yaw.transform_point(&Point3::new(1.0, 0.0, 0.0));
        let ey = yaw.transform_point(&Point3::new(0.0, 1.0, 0.0));
        assert!((ex - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((ey - Point3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);

        let v = Vector3::new(0.25, 0.5, -0.125);
        let moved = p.exp_update(&Twist::new(Vector3::zeros(), v));
        assert_eq!(moved.translation, p.translation + v);
        assert_eq!(moved.rotation, p.rotation);
    }

    #[test]
    fn json_shape() {
        let p = Pose::from_parts([1.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"q":[1.0,0.0,0.0,0.0],"t":[1.0,2.0,3.0]}"#);
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-3.0f64..3.0),
        )
            .prop_filter("nonzero quaternion", |(q, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| Pose::from_parts(q, t))
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.angle_to(&r) < 1e-9);
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
            prop_assert!((l.rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn transform_composition(a in arb_pose(), b in arb_pose(),
                                 x in prop::array::uniform3(-1.0f64..1.0)) {
            let p = Point3::new(x[0], x[1], x[2]);
            let l = a.compose(&b).transform_point(&p);
            let r = a.transform_point(&b.transform_point(&p));
            prop_assert!((l - r).norm() < 1e-9);
        }

        #[test]
        fn exp_update_round_trip(p in arb_pose(),
                                 w in prop::array::uniform3(-0.28f64..0.28),
                                 v in prop::array::uniform3(-0.5f64..0.5)) {
            let d = Twist::new(Vector3::from(w), Vector3::from(v));
            let back = p.exp_update(&d).exp_update(&-d);
            prop_assert!(back.angle_to(&p) < 1e-6);
            prop_assert!((back.translation - p.translation).norm() < 1e-6);
            prop_assert!((back.rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
