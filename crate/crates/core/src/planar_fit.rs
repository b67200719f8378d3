//! Global planar-scene fit of the eight-parameter flow model to all normal
//! flow samples of a slice.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_c, NormalFlowSample, PlaneParams};

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// Relative pivot tolerance of the LDLᵀ factorization, scaled by the trace.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFitResult {
    pub a: PlaneParams,
    /// Observed minus predicted normal flow, one per sample.
    pub residuals: Vec<f64>,
    /// Ratio of the largest to smallest eigenvalue of the normal matrix.
    pub condition_estimate: f64,
}

/// `C(x)ᵀ n0`: the row of the linear system contributed by one sample.
fn constraint_row(s: &NormalFlowSample) -> Vec8 {
    matrix_c(s.point).transpose() * s.n0
}

/// Normal equations `(Σ r rᵀ) a = Σ r n`.
fn accumulate(samples: &[NormalFlowSample]) -> (Mat8, Vec8) {
    samples.iter().fold(
        (Mat8::zeros(), Vec8::zeros()),
        |(mut m, mut b), s| {
            let r = constraint_row(s);
            m += r * r.transpose();
            b += r * s.n;
            (m, b)
        },
    )
}

/// Solves a symmetric positive semi-definite system by LDLᵀ, failing when a
/// pivot drops below `tol`.
fn solve_ldlt(m: &Mat8, b: &Vec8, tol: f64) -> Option<Vec8> {
    let mut l = Mat8::identity();
    let mut d = Vec8::zeros();
    for j in 0..8 {
        let mut dj = m[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(dj > tol) {
            return None;
        }
        d[j] = dj;
        for i in (j + 1)..8 {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / dj;
        }
    }
    // L z = b, D y = z, Lᵀ x = y
    let mut z = *b;
    for i in 0..8 {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
    }
    for i in 0..8 {
        z[i] /= d[i];
    }
    for i in (0..8).rev() {
        for k in (i + 1)..8 {
            z[i] -= l[(k, i)] * z[k];
        }
    }
    Some(z)
}

/// Least-squares fit of the planar flow model to every sample.
pub fn fit_plane(samples: &[NormalFlowSample]) -> Result<PlaneFitResult> {
    if samples.len() < 8 {
        return Err(Error::DegenerateSystem(format!(
            "plane fit needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    let (m, b) = accumulate(samples);
    let tol = PIVOT_TOLERANCE * m.trace();
    let solution = solve_ldlt(&m, &b, tol).ok_or_else(|| {
        Error::DegenerateSystem("planar normal matrix is rank deficient".into())
    })?;
    let a = PlaneParams(solution);

    let eig = SymmetricEigen::new(m).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition_estimate = if lo > 0.0 { hi / lo } else { f64::INFINITY };

    let residuals = samples
        .iter()
        .zip(predict_normal_flow(&a, samples))
        .map(|(s, pred)| s.n - pred)
        .collect();
    Ok(PlaneFitResult {
        a,
        residuals,
        condition_estimate,
    })
}

/// `n0ᵀ C(x) a` for every sample.
pub fn predict_normal_flow(a: &PlaneParams, samples: &[NormalFlowSample]) -> Vec<f64> {
    samples.iter().map(|s| constraint_row(s).dot(&a.0)).collect()
}

/// Residual sum of squares of `a` over the samples.
pub fn residual_sum_of_squares(a: &PlaneParams, samples: &[NormalFlowSample]) -> f64 {
    samples
        .iter()
        .zip(predict_normal_flow(a, samples))
        .map(|(s, p)| (s.n - p).powi(2))
        .sum()
}
