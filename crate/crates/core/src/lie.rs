//! SE(3) exponential and logarithm on homogeneous 4×4 matrices.
//!
//! Twists are ordered `[v, ω]` with `T = [R p; 0 1]`, `R = exp(ω^)` and
//! `p = V(ω) v`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

/// Tolerance on `‖RᵀR − I‖` and on the homogeneous row.
pub const RIGID_TOLERANCE: f64 = 1e-6;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `sin θ/θ`, `(1−cos θ)/θ²`, `(θ−sin θ)/θ³`, with series near zero.
fn coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-3 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _) = coefficients(w.norm());
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r`, with `‖ω‖ ∈ [0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let skew = vee(&(r - r.transpose())) * 0.5;
    let s = skew.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < 1e-12 {
        return skew;
    }
    if c > -0.9 {
        return skew * (theta / s);
    }
    // near π the skew part vanishes; read the axis off the symmetric part
    let sym = (r + r.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * c) / (1.0 - c);
    let i = (0..3)
        .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = outer.column(i).into();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn v_matrix(w: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = coefficients(w.norm());
    let k = hat(w);
    Matrix3::identity() + k * b + k * k * c
}

fn v_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let t2 = theta * theta;
    let d = if theta < 1e-2 {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / t2
    };
    let k = hat(w);
    Matrix3::identity() - k * 0.5 + k * k * d
}

pub fn compose(r: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(p);
    t
}

pub fn rotation(t: &Matrix4<f64>) -> Matrix3<f64> {
    t.fixed_view::<3, 3>(0, 0).into()
}

pub fn translation(t: &Matrix4<f64>) -> Vector3<f64> {
    t.fixed_view::<3, 1>(0, 3).into()
}

pub fn exp_se3(xi: &Vector6<f64>) -> Matrix4<f64> {
    let v = xi.fixed_rows::<3>(0).into_owned();
    let w = xi.fixed_rows::<3>(3).into_owned();
    compose(&exp_so3(&w), &(v_matrix(&w) * v))
}

/// Rejects matrices that are not finite rigid transforms within
/// [`RIGID_TOLERANCE`].
pub fn validate_rigid(t: &Matrix4<f64>) -> Result<()> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("transform has non-finite entries".into()));
    }
    let r = rotation(t);
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    if ortho > RIGID_TOLERANCE {
        return Err(Error::Validation(format!(
            "rotation block is not orthogonal (‖RᵀR − I‖ = {ortho:.3e})"
        )));
    }
    if r.determinant() <= 0.0 {
        return Err(Error::Validation("rotation block is a reflection".into()));
    }
    let row = t.fixed_view::<1, 4>(3, 0);
    let expected = [0.0, 0.0, 0.0, 1.0];
    if row.iter().zip(&expected).any(|(a, b)| (a - b).abs() > RIGID_TOLERANCE) {
        return Err(Error::Validation("bottom row is not [0 0 0 1]".into()));
    }
    Ok(())
}

pub fn log_se3(t: &Matrix4<f64>) -> Result<Vector6<f64>> {
    validate_rigid(t)?;
    let w = log_so3(&rotation(t));
    let v = v_inverse(&w) * translation(t);
    Ok(Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z))
}

/// Inverse of a rigid transform.
pub fn inverse(t: &Matrix4<f64>) -> Matrix4<f64> {
    let rt = rotation(t).transpose();
    compose(&rt, &(-(rt * translation(t))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_has_zero_twist() {
        assert_eq!(log_se3(&Matrix4::identity()).unwrap(), Vector6::zeros());
    }

    #[test]
    fn pure_translation() {
        let t = compose(&Matrix3::identity(), &Vector3::new(0.1, 0.0, 0.0));
        let xi = log_se3(&t).unwrap();
        assert_abs_diff_eq!(xi, Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn half_turn_about_z() {
        let xi = Vector6::new(0.3, -0.2, 0.1, 0.0, 0.0, std::f64::consts::PI);
        let t = exp_se3(&xi);
        assert_abs_diff_eq!(rotation(&t), Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)), epsilon = 1e-15);
        let back = log_se3(&t).unwrap();
        assert_abs_diff_eq!(exp_se3(&back), t, epsilon = 1e-12);
    }

    #[test]
    fn non_rigid_is_rejected() {
        let mut t = Matrix4::identity();
        t[(0, 0)] = 1.0 + 1e-5;
        assert!(matches!(log_se3(&t), Err(Error::Validation(_))));
        let mut refl = Matrix4::identity();
        refl[(2, 2)] = -1.0;
        assert!(log_se3(&refl).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = exp_se3(&Vector6::new(0.4, 0.1, -0.3, 0.2, -0.5, 0.7));
        assert_abs_diff_eq!(t * inverse(&t), Matrix4::identity(), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn round_trip(v in prop::array::uniform3(-2.0f64..2.0),
                      axis in prop::array::uniform3(-1.0f64..1.0),
                      angle in 0.0f64..3.1) {
            let a = Vector3::from(axis);
            prop_assume!(a.norm() > 1e-3);
            let w = a.normalize() * angle;
            let xi = Vector6::new(v[0], v[1], v[2], w.x, w.y, w.z);
            let back = log_se3(&exp_se3(&xi)).unwrap();
            prop_assert!((back - xi).norm() < 1e-10);
        }
    }
}
