//! Rigid transforms, body frames built from point triplets, and spatial twists.
//!
//! A [`Twist`] computed by [`spatial_twist`] is the body frame-invariant feature
//! (BFIF): for every frame rigidly attached to the same moving body, the
//! spatial twist expressed in the fixed space frame is the same.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

/// Minimum triangle area (m^2) accepted by [`frame_from_triplet`].
pub const MIN_TRIPLET_AREA: f64 = 1e-6;

/// Rigid transform in SE(3): `p' = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation by `angle` about a unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::new(rotation_about(axis, angle), Vector3::zeros())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `‖RᵀR − I‖∞`, the orthonormality defect.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
            && self.translation.iter().all(|x| x.is_finite())
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        rows
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Pose {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Pose::new(rotation, translation)
    }
}

pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = skew(&k);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Angular and linear velocity; `angular` in rad per time unit, `linear` in m per time unit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `(ω, υ)` stacked as a 6-vector.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.angular
            .iter()
            .chain(self.linear.iter())
            .all(|x| x.is_finite())
    }

    /// ∞-norm of the difference.
    pub fn distance_inf(&self, other: &Twist) -> f64 {
        (self.to_vector() - other.to_vector()).amax()
    }
}

/// A body frame in the space frame together with the image pixel it was seeded from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    pub pose: Pose,
    pub origin_pixel: Vector2<f64>,
}

/// `[v]` such that `[v] w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Extracts `(ω, υ)` from `Ṫ T⁻¹`. The rotational block is symmetrized as
/// `(M − Mᵀ)/2` before reading off ω.
pub fn twist_from_derivative(pose: &Pose, pose_dot: &Matrix4<f64>) -> Twist {
    let m = pose_dot * pose.inverse().to_homogeneous();
    let r = m.fixed_view::<3, 3>(0, 0);
    let s = (r - r.transpose()) * 0.5;
    let angular = Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]);
    let linear = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Twist::new(angular, linear)
}

/// Spatial twist of a frame moving from `prev` to `curr` over `dt`, using the
/// forward difference `Ṫ ≈ (T_curr − T_prev)/dt` evaluated at `prev`.
pub fn spatial_twist(prev: &Pose, curr: &Pose, dt: f64) -> Result<Twist> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let pose_dot = (curr.to_homogeneous() - prev.to_homogeneous()) / dt;
    Ok(twist_from_derivative(prev, &pose_dot))
}

/// Body frame from three points: origin at `p0`, y toward `p1`, x along the
/// triangle normal, `z = x × y`.
pub fn frame_from_triplet(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> Result<Pose> {
    let a = p1 - p0;
    let b = p2 - p0;
    let normal = a.cross(&b);
    let area = 0.5 * normal.norm();
    if !(area > MIN_TRIPLET_AREA) {
        return Err(Error::CollinearTriplet { area });
    }
    let y = a.normalize();
    let x = normal.normalize();
    let z = x.cross(&y);
    Ok(Pose::new(Matrix3::from_columns(&[x, y, z]), *p0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_twist(t: &Twist, w: [f64; 3], v: [f64; 3], tol: f64) {
        let expect = Twist::new(Vector3::from(w), Vector3::from(v));
        assert!(
            t.distance_inf(&expect) < tol,
            "got {:?}, expected {:?}",
            t,
            expect
        );
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            skew(&Vector3::new(0.0, 0.0, 1.0)),
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        let w = skew(&Vector3::new(1.0, 2.0, 3.0)) * Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(w, Vector3::new(-3.0, 6.0, -3.0));
    }

    #[test]
    fn skew_is_antisymmetric() {
        let m = skew(&Vector3::new(0.3, -1.2, 2.5));
        assert_eq!(m.transpose(), -m);
    }

    #[test]
    fn pure_translation_twist() {
        let a = Pose::from_translation(Vector3::new(0.2, -0.1, 0.5));
        let b = Pose::from_translation(Vector3::new(0.201, -0.1, 0.5));
        let t = spatial_twist(&a, &b, 1.0).unwrap();
        approx_twist(&t, [0.0; 3], [0.001, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn rotation_about_offset_axis() {
        // Frame rotating about z through q = (1, 0, 0): ω = (0,0,1), υ = −ω × q = (0,−1,0).
        let q = Vector3::new(1.0, 0.0, 0.0);
        let at = |theta: f64| {
            let r = rotation_about(&Vector3::z(), theta);
            Pose::new(r, q - r * q)
        };
        let h = 1e-5;
        let t = spatial_twist(&at(0.0), &at(h), h).unwrap();
        approx_twist(&t, [0.0, 0.0, 1.0], [0.0, -1.0, 0.0], 1e-4);
    }

    #[test]
    fn identity_motion_is_zero_twist() {
        let p = Pose::new(
            rotation_about(&Vector3::new(1.0, 1.0, 0.0), 0.7),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let t = spatial_twist(&p, &p, 1.0).unwrap();
        assert_eq!(t.to_vector(), Vector6::zeros());
    }

    #[test]
    fn non_positive_dt_rejected() {
        let p = Pose::identity();
        assert!(matches!(
            spatial_twist(&p, &p, 0.0),
            Err(Error::NonPositiveDt(_))
        ));
        assert!(matches!(
            spatial_twist(&p, &p, -1.0),
            Err(Error::NonPositiveDt(_))
        ));
    }

    #[test]
    fn triplet_frame_example() {
        let pose = frame_from_triplet(
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector3::new(0.0, 0.1, 1.0),
            &Vector3::new(0.1, 0.0, 1.0),
        )
        .unwrap();
        let expect = Matrix3::from_columns(&[
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ]);
        assert!((pose.rotation - expect).amax() < 1e-15);
        assert_eq!(pose.translation, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn collinear_triplet_rejected() {
        let r = frame_from_triplet(
            &Vector3::zeros(),
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::new(2.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::CollinearTriplet { .. })));
    }

    #[test]
    fn pose_inverse_roundtrip() {
        let p = Pose::new(
            rotation_about(&Vector3::new(0.2, 1.0, -0.3), 1.1),
            Vector3::new(0.5, -2.0, 0.1),
        );
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.amax() < 1e-12);
        assert!(p.is_valid(1e-9));
    }

    #[test]
    fn rows_roundtrip() {
        let p = Pose::new(
            rotation_about(&Vector3::x(), 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        assert_eq!(Pose::from_rows(&p.to_rows()), p);
    }
}
