//! Instantaneous motion-field algebra for a calibrated pinhole camera.
//!
//! A camera moving with translational velocity `t` and angular velocity `w`
//! induces at the calibrated image point `x = (x, y)` with depth `Z` the flow
//!
//! ```text
//! u(x) = (1/Z) A(x) t + B(x) w
//! ```
//!
//! and the normal flow along the unit edge normal `n0` is `u(x)ᵀ n0`. When the
//! scene is a plane `d/Z = αx + βy + γ` the flow becomes `C(x) a` for an
//! eight-parameter vector `a`, see [`assemble_a`].

use nalgebra::{Matrix2x3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖n0‖ = 1` accepted by [`NormalFlowSample::new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Focal-normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// True when both coordinates lie within `limit` of the principal point.
    pub fn within_fov(&self, limit: f64) -> bool {
        self.is_finite() && self.x.abs() <= limit && self.y.abs() <= limit
    }
}

/// Rigid instantaneous motion: translation in m/s and rotation in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub t: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl MotionParams {
    pub fn new(t: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { t, w }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.w.iter()).all(|v| v.is_finite())
    }
}

/// Per-event normal flow: a signed magnitude `n` along the unit direction `n0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFlowSample {
    pub point: ImagePoint,
    pub n0: Vector2<f64>,
    pub n: f64,
}

impl NormalFlowSample {
    pub fn new(point: ImagePoint, n0: Vector2<f64>, n: f64) -> Result<Self> {
        if !point.is_finite() || !n.is_finite() {
            return Err(Error::Validation("non-finite normal flow sample".into()));
        }
        if (n0.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Validation(format!(
                "normal direction must be unit length, got norm {}",
                n0.norm()
            )));
        }
        Ok(Self { point, n0, n })
    }

    /// Builds a sample from the flow 2-vector `n·n0`; the zero vector has no
    /// direction and is rejected.
    pub fn from_vector(point: ImagePoint, v: Vector2<f64>) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Validation("normal flow vector has no direction".into()));
        }
        Self::new(point, v / n, n)
    }

    /// The 2-vector form `n·n0`.
    pub fn flow_vector(&self) -> Vector2<f64> {
        self.n0 * self.n
    }
}

/// The eight combined motion/structure parameters of a planar scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams(pub SVector<f64, 8>);

impl PlaneParams {
    pub fn zeros() -> Self {
        Self(SVector::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A scene plane written as `d/Z(x) = αx + βy + γ` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePlane {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d: f64,
}

impl ScenePlane {
    /// Inverse depth of the plane along the ray through `p`.
    pub fn inverse_depth(&self, p: ImagePoint) -> f64 {
        (self.alpha * p.x + self.beta * p.y + self.gamma) / self.d
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn to_calibrated(&self, px: f64, py: f64) -> ImagePoint {
        ImagePoint::new((px - self.cx) / self.fx, (py - self.cy) / self.fy)
    }

    pub fn to_pixel(&self, p: ImagePoint) -> [f64; 2] {
        [p.x * self.fx + self.cx, p.y * self.fy + self.cy]
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
    }
}

/// Translational part of the motion field.
pub fn matrix_a(p: ImagePoint) -> Matrix2x3<f64> {
    Matrix2x3::new(-1.0, 0.0, p.x, 0.0, -1.0, p.y)
}

/// Rotational part of the motion field.
pub fn matrix_b(p: ImagePoint) -> Matrix2x3<f64> {
    let (x, y) = (p.x, p.y);
    Matrix2x3::new(x * y, -(1.0 + x * x), y, 1.0 + y * y, -x * y, -x)
}

/// Planar-scene design matrix; `C(x) a` is the flow of a plane.
pub fn matrix_c(p: ImagePoint) -> SMatrix<f64, 2, 8> {
    let (x, y) = (p.x, p.y);
    SMatrix::<f64, 2, 8>::from_row_slice(&[
        x * x, x * y, x, y, 1.0, 0.0, 0.0, 0.0, //
        x * y, y * y, 0.0, 0.0, 0.0, y, x, 1.0,
    ])
}

/// Motion field at `p` for a point at inverse depth `inv_depth`.
pub fn flow_at(p: ImagePoint, motion: &MotionParams, inv_depth: f64) -> Vector2<f64> {
    matrix_a(p) * motion.t * inv_depth + matrix_b(p) * motion.w
}

/// Motion field projected on the unit direction `n0`.
pub fn normal_flow_at(
    p: ImagePoint,
    n0: &Vector2<f64>,
    motion: &MotionParams,
    inv_depth: f64,
) -> f64 {
    flow_at(p, motion, inv_depth).dot(n0)
}

/// Removes the rotational contribution `(B(x) w)ᵀ n0` from a sample's normal
/// flow, leaving `(1/Z)(A(x) t)ᵀ n0` under the rigid model.
pub fn derotate(sample: &NormalFlowSample, w: &Vector3<f64>) -> f64 {
    sample.n - (matrix_b(sample.point) * w).dot(&sample.n0)
}

/// Assembles the planar parameter vector from motion and plane.
///
/// Normalized by `d` so that `C(x) a = (1/Z) A(x) t + B(x) w` holds exactly;
/// the fourth entry is `ωz − tx β / d`.
pub fn assemble_a(t: &Vector3<f64>, w: &Vector3<f64>, plane: &ScenePlane) -> PlaneParams {
    let (tx, ty, tz) = (t.x / plane.d, t.y / plane.d, t.z / plane.d);
    let (wx, wy, wz) = (w.x, w.y, w.z);
    let (al, be, ga) = (plane.alpha, plane.beta, plane.gamma);
    PlaneParams(SVector::<f64, 8>::from_column_slice(&[
        -wy + tz * al,
        wx + tz * be,
        tz * ga - tx * al,
        wz - tx * be,
        -wy - tx * ga,
        tz * ga - ty * be,
        -wz - ty * al,
        wx - ty * ga,
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn matrix_a_examples() {
        assert_eq!(
            matrix_a(ImagePoint::new(0.0, 0.0)),
            Matrix2x3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
        );
        assert_eq!(
            matrix_a(ImagePoint::new(0.5, -0.2)),
            Matrix2x3::new(-1.0, 0.0, 0.5, 0.0, -1.0, -0.2)
        );
        assert_eq!(
            matrix_a(ImagePoint::new(1.0, 1.0)),
            Matrix2x3::new(-1.0, 0.0, 1.0, 0.0, -1.0, 1.0)
        );
    }

    #[test]
    fn matrix_b_examples() {
        assert_eq!(
            matrix_b(ImagePoint::new(0.0, 0.0)),
            Matrix2x3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0)
        );
        assert_eq!(
            matrix_b(ImagePoint::new(1.0, 0.0)),
            Matrix2x3::new(0.0, -2.0, 0.0, 1.0, 0.0, -1.0)
        );
        assert_eq!(
            matrix_b(ImagePoint::new(0.0, 1.0)),
            Matrix2x3::new(0.0, -1.0, 1.0, 2.0, 0.0, 0.0)
        );
    }

    #[test]
    fn matrix_c_examples() {
        let rows = |p| {
            let c = matrix_c(p);
            (
                c.row(0).iter().copied().collect::<Vec<_>>(),
                c.row(1).iter().copied().collect::<Vec<_>>(),
            )
        };
        assert_eq!(
            rows(ImagePoint::new(0.0, 0.0)),
            (
                vec![0., 0., 0., 0., 1., 0., 0., 0.],
                vec![0., 0., 0., 0., 0., 0., 0., 1.]
            )
        );
        assert_eq!(
            rows(ImagePoint::new(1.0, 1.0)),
            (
                vec![1., 1., 1., 1., 1., 0., 0., 0.],
                vec![1., 1., 0., 0., 0., 1., 1., 1.]
            )
        );
        assert_eq!(
            rows(ImagePoint::new(2.0, 0.0)),
            (
                vec![4., 0., 2., 0., 1., 0., 0., 0.],
                vec![0., 0., 0., 0., 0., 0., 2., 1.]
            )
        );
    }

    #[test]
    fn flow_examples() {
        let origin = ImagePoint::new(0.0, 0.0);
        assert_eq!(flow_at(origin, &MotionParams::zero(), 0.5), Vector2::zeros());
        let spin = MotionParams::new(Vector3::zeros(), v3(0.0, 0.0, 1.0));
        assert_eq!(flow_at(origin, &spin, 1.0), Vector2::zeros());
        // t = (1,0,0), Z = 2 at the principal point: u = A t / Z = (-0.5, 0).
        let slide = MotionParams::new(v3(1.0, 0.0, 0.0), Vector3::zeros());
        let u = flow_at(origin, &slide, 0.5);
        assert_eq!(u, Vector2::new(-0.5, 0.0));
        assert_eq!(normal_flow_at(origin, &Vector2::new(1.0, 0.0), &slide, 0.5), -0.5);
    }

    #[test]
    fn normal_flow_projection_examples() {
        let u = Vector2::new(3.0, 4.0);
        assert_abs_diff_eq!(u.dot(&Vector2::new(0.6, 0.8)), 5.0, epsilon = 1e-15);
        let perp = Vector2::new(-0.8, 0.6);
        assert_abs_diff_eq!(u.dot(&perp), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn derotate_zero_rotation_is_identity() {
        let s = NormalFlowSample::new(ImagePoint::new(0.3, -0.1), Vector2::new(0.6, 0.8), 1.7)
            .unwrap();
        assert_eq!(derotate(&s, &Vector3::zeros()), 1.7);
    }

    #[test]
    fn derotate_removes_rotation_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = ImagePoint::new(rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.5));
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let n0 = Vector2::new(th.cos(), th.sin());
            let t = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let w = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let inv_z = rng.random_range(0.1..2.0);

            let pure_rot = MotionParams::new(Vector3::zeros(), w);
            let s = NormalFlowSample::new(p, n0, normal_flow_at(p, &n0, &pure_rot, inv_z)).unwrap();
            assert_abs_diff_eq!(derotate(&s, &w), 0.0, epsilon = 1e-14);

            let full = MotionParams::new(t, w);
            let s = NormalFlowSample::new(p, n0, normal_flow_at(p, &n0, &full, inv_z)).unwrap();
            let expected = (matrix_a(p) * t * inv_z).dot(&n0);
            assert_abs_diff_eq!(derotate(&s, &w), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn flow_is_linear_in_translation_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rv = || v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for _ in 0..100 {
            let p = ImagePoint::new(0.21, -0.37);
            let (t1, t2, w1, w2) = (rv(), rv(), rv(), rv());
            let inv_z = 0.8;
            let sum = flow_at(p, &MotionParams::new(t1 + t2, w1 + w2), inv_z);
            let parts = flow_at(p, &MotionParams::new(t1, w1), inv_z)
                + flow_at(p, &MotionParams::new(t2, w2), inv_z);
            assert_abs_diff_eq!(sum, parts, epsilon = 1e-14);
        }
    }

    #[test]
    fn planar_parameters_reproduce_motion_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let t = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let w = v3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let plane = ScenePlane {
                alpha: rng.random_range(-0.3..0.3),
                beta: rng.random_range(-0.3..0.3),
                gamma: 1.0,
                d: rng.random_range(0.5..5.0),
            };
            let a = assemble_a(&t, &w, &plane);
            let p = ImagePoint::new(rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.5));
            let direct = flow_at(p, &MotionParams::new(t, w), plane.inverse_depth(p));
            assert_abs_diff_eq!(matrix_c(p) * a.0, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn sample_validation() {
        let p = ImagePoint::new(0.0, 0.0);
        assert!(NormalFlowSample::new(p, Vector2::new(1.0, 1.0), 1.0).is_err());
        assert!(NormalFlowSample::from_vector(p, Vector2::zeros()).is_err());
        let s = NormalFlowSample::from_vector(p, Vector2::new(3.0, 4.0)).unwrap();
        assert_abs_diff_eq!(s.n, 5.0);
        assert_abs_diff_eq!(s.flow_vector(), Vector2::new(3.0, 4.0), epsilon = 1e-15);
    }
}
