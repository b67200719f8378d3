//! Temporal background maintenance: warping the previous background into the
//! current slice, matching it against the over-segmentation, estimating the
//! background translation, and the persistent background map.

mod map;
mod svm;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::geometry::{flow_at, Intrinsics, MotionParams};

pub use map::{background_similarity, update_map, BackgroundMap, MapParams};
pub use svm::{
    agreement_count, angle_deg, estimate_translation_svm, hinge_svm, sign_features,
    translation_residuals, SvmParams, TranslationEstimate,
};

/// What the next step needs to know about the previous background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundState {
    /// Pixel coordinates of the previous background events.
    pub mask: Vec<[f64; 2]>,
    /// Background motion; `t` is translation over depth at unit depth.
    pub motion: MotionParams,
    pub map: BackgroundMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Pixel radius within which an event counts as matched.
    pub radius: f64,
    /// A cluster matches when its matched fraction exceeds this.
    pub theta: f64,
    /// Constant scene depth used for warping, metres.
    pub warp_depth: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            radius: 2.0,
            theta: 0.5,
            warp_depth: 1.0,
        }
    }
}

/// Displaces pixel points by `dt` times the motion field of `motion` at
/// constant depth `depth`.
pub fn warp_points(
    points: &[[f64; 2]],
    motion: &MotionParams,
    dt: f64,
    depth: f64,
    intrinsics: &Intrinsics,
) -> Vec<[f64; 2]> {
    let inv_depth = 1.0 / depth;
    points
        .iter()
        .map(|&[px, py]| {
            let p = intrinsics.to_calibrated(px, py);
            let u = flow_at(p, motion, inv_depth) * dt;
            [px + u.x * intrinsics.fx, py + u.y * intrinsics.fy]
        })
        .collect()
}

/// Warps the previous background mask into the current slice.
pub fn warp_background(
    prev: &BackgroundState,
    dt: f64,
    params: &MatchParams,
    intrinsics: &Intrinsics,
) -> Vec<[f64; 2]> {
    warp_points(&prev.mask, &prev.motion, dt, params.warp_depth, intrinsics)
}

/// Uniform-grid bucket index over points for fixed-radius queries.
struct PointIndex<'a> {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: &'a [[f64; 2]],
}

impl<'a> PointIndex<'a> {
    fn new(points: &'a [[f64; 2]], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets
                .entry(((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        Self {
            cell,
            buckets,
            points,
        }
    }

    fn any_within(&self, q: [f64; 2], radius: f64) -> bool {
        let bx = (q[0] / self.cell).floor() as i64;
        let by = (q[1] / self.cell).floor() as i64;
        let r2 = radius * radius;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = self.buckets.get(&(bx + dx, by + dy)) {
                    for &i in ids {
                        let p = self.points[i];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 <= r2 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Fraction of each cluster's events lying within `radius` of a warped point.
pub fn matched_fractions(
    warped: &[[f64; 2]],
    pixels: &[[f64; 2]],
    clusters: &ClusterSet,
    radius: f64,
) -> Vec<f64> {
    let index = PointIndex::new(warped, radius.max(1e-9));
    let mut hit = vec![0usize; clusters.k];
    let mut total = vec![0usize; clusters.k];
    for (p, &l) in pixels.iter().zip(&clusters.labels) {
        total[l] += 1;
        if index.any_within(*p, radius) {
            hit[l] += 1;
        }
    }
    hit.iter()
        .zip(&total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect()
}

/// Indices of clusters whose matched fraction exceeds `theta`.
pub fn match_clusters(
    warped: &[[f64; 2]],
    pixels: &[[f64; 2]],
    clusters: &ClusterSet,
    params: &MatchParams,
) -> Vec<usize> {
    matched_fractions(warped, pixels, clusters, params.radius)
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > params.theta)
        .map(|(i, _)| i)
        .collect()
}
