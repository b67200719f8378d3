//! Translation direction from derotated normal flow under the positive-depth
//! constraint.
//!
//! With `Z > 0` the derotated normal flow has the sign of `(A(x) t)ᵀ n0`, so
//! every sample labels a half-space for `t`: `s_i fᵢᵀ t > 0` with
//! `fᵢ = A(xᵢ)ᵀ n0ᵢ`. A homogeneous soft-margin linear SVM gives a first
//! direction; it is then polished by a local search over the sphere that
//! maximizes the count of agreeing signs, and finally centered in the
//! plateau of maximal agreement.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{derotate, matrix_a, NormalFlowSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    /// Hinge weight in `½‖t‖² + C Σ hinge`.
    pub c: f64,
    pub iterations: usize,
    pub min_samples: usize,
    /// Minimum sign agreement accepted at the optimum.
    pub min_agreement: f64,
    /// Initial step of the agreement search, degrees.
    pub search_step_deg: f64,
    /// The search stops once its step falls below this, degrees.
    pub search_min_step_deg: f64,
    /// Half-width and spacing of the centering grid, degrees.
    pub center_radius_deg: f64,
    pub center_spacing_deg: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            iterations: 500,
            min_samples: 50,
            min_agreement: 0.6,
            search_step_deg: 4.0,
            search_min_step_deg: 0.02,
            center_radius_deg: 3.0,
            center_spacing_deg: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationEstimate {
    pub direction: Unit<Vector3<f64>>,
    /// Least-squares scale of `(A t̂)ᵀ n0` against the derotated flow at unit
    /// depth; `direction * scale` is the translation over depth.
    pub scale: f64,
    /// Fraction of labeled samples whose sign agrees with `direction`.
    pub agreement: f64,
    /// `n − n(x, t, w)` per input sample with `t = scale · direction`.
    pub residuals: Vec<f64>,
}

impl TranslationEstimate {
    pub fn translation(&self) -> Vector3<f64> {
        self.direction.into_inner() * self.scale
    }
}

/// Signed feature vectors `sign(n_derot)·A(x)ᵀ n0`; samples whose derotated
/// flow is exactly zero carry no label and are skipped.
pub fn sign_features(samples: &[NormalFlowSample], w: &Vector3<f64>) -> Vec<Vector3<f64>> {
    samples
        .iter()
        .filter_map(|s| {
            let nd = derotate(s, w);
            if nd == 0.0 || !nd.is_finite() {
                return None;
            }
            let f = matrix_a(s.point).transpose() * s.n0;
            Some(if nd > 0.0 { f } else { -f })
        })
        .collect()
}

pub fn agreement_count(features: &[Vector3<f64>], t: &Vector3<f64>) -> usize {
    features.iter().filter(|f| f.dot(t) > 0.0).count()
}

/// Deterministic full-batch subgradient descent on
/// `½‖t‖² + C Σ max(0, 1 − fᵢᵀ t)`, written in the equivalent scaled form
/// `(λ/2)‖t‖² + (1/N) Σ hinge` with `λ = 1/(C N)` and step `1/(λ k)`.
pub fn hinge_svm(features: &[Vector3<f64>], c: f64, iterations: usize) -> Vector3<f64> {
    let n = features.len() as f64;
    let lambda = 1.0 / (c * n);
    let mut t = Vector3::zeros();
    for k in 1..=iterations {
        let eta = 1.0 / (lambda * k as f64);
        let push = features
            .iter()
            .filter(|f| f.dot(&t) < 1.0)
            .fold(Vector3::zeros(), |acc, f| acc + f);
        t = t * (1.0 - eta * lambda) + push * (eta / n);
    }
    t
}

/// Orthonormal tangent basis at the unit vector `t`.
fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if t.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = t.cross(&helper).normalize();
    let v = t.cross(&u);
    (u, v)
}

/// Pattern search over the sphere: move to the first of eight neighbours at
/// angular distance `step` that strictly improves agreement, otherwise halve
/// the step.
fn refine_agreement(features: &[Vector3<f64>], start: Vector3<f64>, p: &SvmParams) -> Vector3<f64> {
    let mut t = start.normalize();
    let mut score = agreement_count(features, &t);
    let mut step = p.search_step_deg.to_radians();
    let min_step = p.search_min_step_deg.to_radians();
    while step > min_step {
        let (u, v) = tangent_basis(&t);
        let mut moved = false;
        for k in 0..8 {
            let phi = std::f64::consts::TAU * k as f64 / 8.0;
            let cand = (t * step.cos() + (u * phi.cos() + v * phi.sin()) * step.sin()).normalize();
            let s = agreement_count(features, &cand);
            if s > score {
                score = s;
                t = cand;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    t
}

/// Mean of the grid directions around `t` that reach the best agreement.
fn center_plateau(features: &[Vector3<f64>], t: Vector3<f64>, p: &SvmParams) -> Vector3<f64> {
    let (u, v) = tangent_basis(&t);
    let half = (p.center_radius_deg / p.center_spacing_deg).round() as i64;
    let spacing = p.center_spacing_deg.to_radians();
    let mut best = 0usize;
    let mut acc = Vector3::zeros();
    for i in -half..=half {
        for j in -half..=half {
            let d = (t + u * (i as f64 * spacing) + v * (j as f64 * spacing)).normalize();
            let s = agreement_count(features, &d);
            if s > best {
                best = s;
                acc = d;
            } else if s == best {
                acc += d;
            }
        }
    }
    if acc.norm() > 0.0 {
        acc.normalize()
    } else {
        t
    }
}

/// Translation direction of the samples' background motion given the IMU
/// rotation `w`, plus per-sample residuals of the scaled model.
pub fn estimate_translation_svm(
    samples: &[NormalFlowSample],
    w: &Vector3<f64>,
    params: &SvmParams,
) -> Result<TranslationEstimate> {
    let features = sign_features(samples, w);
    if features.len() < params.min_samples {
        return Err(Error::InsufficientSupport(format!(
            "{} labeled samples, need {}",
            features.len(),
            params.min_samples
        )));
    }
    let init = hinge_svm(&features, params.c, params.iterations);
    let init = if init.norm() > 0.0 {
        init
    } else {
        features.iter().fold(Vector3::zeros(), |a, f| a + f)
    };
    if init.norm() == 0.0 {
        return Err(Error::InsufficientSupport("no translation signal".into()));
    }
    let refined = refine_agreement(&features, init, params);
    let t_hat = center_plateau(&features, refined, params);

    let agreement = agreement_count(&features, &t_hat) as f64 / features.len() as f64;
    if agreement < params.min_agreement {
        return Err(Error::InsufficientSupport(format!(
            "sign agreement {:.3} below {:.3}",
            agreement, params.min_agreement
        )));
    }

    let (num, den) = samples.iter().fold((0.0, 0.0), |(num, den), s| {
        let g = (matrix_a(s.point) * t_hat).dot(&s.n0);
        (num + g * derotate(s, w), den + g * g)
    });
    let scale = if den > 0.0 { num / den } else { 0.0 };
    let direction = Unit::new_normalize(t_hat);
    let t = direction.into_inner() * scale;
    let residuals = translation_residuals(samples, &t, w);
    Ok(TranslationEstimate {
        direction,
        scale,
        agreement,
        residuals,
    })
}

/// `n − ((A t)ᵀ n0 + (B w)ᵀ n0)` at unit depth.
pub fn translation_residuals(
    samples: &[NormalFlowSample],
    t: &Vector3<f64>,
    w: &Vector3<f64>,
) -> Vec<f64> {
    samples
        .iter()
        .map(|s| derotate(s, w) - (matrix_a(s.point) * t).dot(&s.n0))
        .collect()
}

/// Angle between two directions in degrees.
pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normal_flow_at, ImagePoint, MotionParams};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(n: usize, t: Vector3<f64>, w: Vector3<f64>, flip: f64, seed: u64) -> Vec<NormalFlowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motion = MotionParams::new(t, w);
        (0..n)
            .map(|_| {
                let p = ImagePoint::new(rng.random_range(-0.6..0.6), rng.random_range(-0.45..0.45));
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let n0 = Vector2::new(th.cos(), th.sin());
                let inv_z = 1.0 / rng.random_range(2.0..4.0);
                let mut n = normal_flow_at(p, &n0, &motion, inv_z);
                if rng.random_bool(flip) {
                    n = 2.0 * (crate::geometry::matrix_b(p) * w).dot(&n0) - n;
                }
                NormalFlowSample::new(p, n0, n).unwrap()
            })
            .collect()
    }

    #[test]
    fn lateral_translation_recovered() {
        let t = Vector3::new(1.0, 0.0, 0.0);
        let s = scene(5000, t, Vector3::zeros(), 0.0, 1);
        let est = estimate_translation_svm(&s, &Vector3::zeros(), &SvmParams::default()).unwrap();
        assert!(angle_deg(&est.direction, &t) < 1.0);
        assert!(est.agreement > 0.99);
    }

    #[test]
    fn rotation_is_removed_before_classification() {
        let t = Vector3::new(0.3, -0.4, 0.8);
        let w = Vector3::new(0.2, -0.1, 0.3);
        let s = scene(5000, t, w, 0.0, 2);
        let est = estimate_translation_svm(&s, &w, &SvmParams::default()).unwrap();
        assert!(angle_deg(&est.direction, &t) < 1.0);
        // scale fit against depths in [2, 4] lands between |t|/4 and |t|/2
        assert!(est.scale > t.norm() / 4.0 && est.scale < t.norm() / 2.0);
    }

    #[test]
    fn flipping_sample_orientation_keeps_direction() {
        let t = Vector3::new(0.5, 0.5, 0.2);
        let s = scene(2000, t, Vector3::zeros(), 0.0, 3);
        let flipped: Vec<_> = s
            .iter()
            .map(|x| NormalFlowSample {
                n0: -x.n0,
                n: -x.n,
                ..*x
            })
            .collect();
        let p = SvmParams::default();
        let a = estimate_translation_svm(&s, &Vector3::zeros(), &p).unwrap();
        let b = estimate_translation_svm(&flipped, &Vector3::zeros(), &p).unwrap();
        assert_eq!(a.direction, b.direction);
    }

    #[test]
    fn sign_noise_stays_within_five_degrees() {
        let t = Vector3::new(1.0, 0.0, 0.0);
        let s = scene(5000, t, Vector3::zeros(), 0.1, 4);
        let est = estimate_translation_svm(&s, &Vector3::zeros(), &SvmParams::default()).unwrap();
        assert!(angle_deg(&est.direction, &t) < 5.0);
    }

    #[test]
    fn too_few_or_no_signal_is_rejected() {
        let s = scene(30, Vector3::x(), Vector3::zeros(), 0.0, 5);
        assert!(matches!(
            estimate_translation_svm(&s, &Vector3::zeros(), &SvmParams::default()),
            Err(Error::InsufficientSupport(_))
        ));
        let still = scene(500, Vector3::zeros(), Vector3::zeros(), 0.0, 6);
        assert!(matches!(
            estimate_translation_svm(&still, &Vector3::zeros(), &SvmParams::default()),
            Err(Error::InsufficientSupport(_))
        ));
    }

    #[test]
    fn random_signs_fail_agreement_threshold() {
        let mut s = scene(2000, Vector3::x(), Vector3::zeros(), 0.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        s.iter_mut().for_each(|x| x.n = rng.random_range(-1.0..1.0));
        let p = SvmParams {
            min_agreement: 0.9,
            ..Default::default()
        };
        assert!(estimate_translation_svm(&s, &Vector3::zeros(), &p).is_err());
    }
}
