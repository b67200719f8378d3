//! Per-cluster translation fitting and greedy agglomerative merging of
//! over-segmented clusters into motion segments.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::background::BackgroundMap;
use crate::geometry::{derotate, matrix_a, NormalFlowSample};

/// Axis-aligned pixel rectangle, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> Option<Self> {
        points.into_iter().fold(None, |acc, p| {
            Some(match acc {
                None => BBox {
                    min_x: p[0],
                    min_y: p[1],
                    max_x: p[0],
                    max_y: p[1],
                },
                Some(b) => BBox {
                    min_x: b.min_x.min(p[0]),
                    min_y: b.min_y.min(p[1]),
                    max_x: b.max_x.max(p[0]),
                    max_y: b.max_y.max(p[1]),
                },
            })
        })
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            min_x: self.min_x.min(o.min_x),
            min_y: self.min_y.min(o.min_y),
            max_x: self.max_x.max(o.max_x),
            max_y: self.max_y.max(o.max_y),
        }
    }

    /// Overlap after growing both boxes by `dilation`; touching edges count.
    pub fn overlaps(&self, o: &BBox, dilation: f64) -> bool {
        self.min_x - dilation <= o.max_x + dilation
            && o.min_x - dilation <= self.max_x + dilation
            && self.min_y - dilation <= o.max_y + dilation
            && o.min_y - dilation <= self.max_y + dilation
    }

    pub fn contains(&self, p: &[f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCandidate {
    pub event_indices: Vec<usize>,
    /// Translation at unit depth.
    pub t: Vector3<f64>,
    /// Mean absolute residual of the member events.
    pub mean_residual: f64,
    pub bbox: BBox,
    pub is_bg_like: bool,
    /// Indices of the input candidates merged into this one.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    pub threshold: f64,
    pub lambda_r: f64,
    pub bg_penalty: f64,
    pub bbox_dilation: f64,
    pub tikhonov: f64,
    /// Map support above which a candidate is flagged background-like.
    pub bg_like_threshold: f64,
    pub fit: TranslationFit,
}

/// Normal equations of the per-cluster translation fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationFit {
    /// `Σ (f fᵀ + λI) t = Σ f n_derot` with `f = Aᵀ n0`: every event
    /// constrains only the flow component along its edge normal.
    #[default]
    Projected,
    /// `Σ (AᵀA + λI) t = Σ Aᵀ (n_derot n0)`, which treats the normal flow
    /// vector as if it were the full flow. Biased unless every `n0` lies
    /// along the flow.
    FullFlow,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            threshold: -0.15,
            lambda_r: 0.5,
            bg_penalty: 1.0,
            bbox_dilation: 2.0,
            tikhonov: 1e-6,
            bg_like_threshold: 0.5,
            fit: TranslationFit::Projected,
        }
    }
}

/// Per-event data shared by every candidate of one slice.
#[derive(Debug, Clone, Copy)]
pub struct MergeContext<'a> {
    pub samples: &'a [NormalFlowSample],
    pub pixels: &'a [[f64; 2]],
    pub residuals: &'a [f64],
    pub w: Vector3<f64>,
    pub map: Option<&'a BackgroundMap>,
}

/// Tikhonov-regularized translation of a cluster at unit depth from its
/// derotated normal flow. See [`TranslationFit`].
pub fn fit_cluster_translation<'a>(
    samples: impl IntoIterator<Item = &'a NormalFlowSample>,
    w: &Vector3<f64>,
    lambda: f64,
    fit: TranslationFit,
) -> Vector3<f64> {
    let mut lhs = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for s in samples {
        let a = matrix_a(s.point);
        let n = derotate(s, w);
        match fit {
            TranslationFit::Projected => {
                let f = a.transpose() * s.n0;
                lhs += f * f.transpose();
                rhs += f * n;
            }
            TranslationFit::FullFlow => {
                lhs += a.transpose() * a;
                rhs += a.transpose() * (s.n0 * n);
            }
        }
        lhs += Matrix3::identity() * lambda;
    }
    lhs.cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(Vector3::zeros)
}

/// Motion and residual similarity, at most zero. A background penalty is
/// subtracted when exactly one of the two is background-like.
pub fn similarity(
    ci: &SegmentCandidate,
    cj: &SegmentCandidate,
    lambda_r: f64,
    bg_penalty: f64,
) -> f64 {
    let denom = ci.t.norm_squared() + cj.t.norm_squared();
    let motion = if denom == 0.0 {
        0.0
    } else {
        -(ci.t - cj.t).norm_squared() / denom
    };
    let dr = ci.mean_residual - cj.mean_residual;
    let penalty = if ci.is_bg_like != cj.is_bg_like {
        bg_penalty
    } else {
        0.0
    };
    motion - lambda_r * dr * dr - penalty
}

/// Builds a candidate from member events.
pub fn build_candidate(
    ctx: &MergeContext<'_>,
    event_indices: Vec<usize>,
    members: Vec<usize>,
    params: &MergeParams,
) -> Option<SegmentCandidate> {
    let bbox = BBox::from_points(event_indices.iter().map(|&i| &ctx.pixels[i]))?;
    let t = fit_cluster_translation(
        event_indices.iter().map(|&i| &ctx.samples[i]),
        &ctx.w,
        params.tikhonov,
        params.fit,
    );
    let mean_residual = event_indices
        .iter()
        .map(|&i| ctx.residuals[i].abs())
        .sum::<f64>()
        / event_indices.len() as f64;
    let is_bg_like = ctx
        .map
        .map(|m| {
            let pts: Vec<[f64; 2]> = event_indices.iter().map(|&i| ctx.pixels[i]).collect();
            m.support(&pts) > params.bg_like_threshold
        })
        .unwrap_or(false);
    Some(SegmentCandidate {
        event_indices,
        t,
        mean_residual,
        bbox,
        is_bg_like,
        members,
    })
}

fn combine(
    ctx: &MergeContext<'_>,
    a: &SegmentCandidate,
    b: &SegmentCandidate,
    params: &MergeParams,
) -> SegmentCandidate {
    let mut events = a.event_indices.clone();
    events.extend_from_slice(&b.event_indices);
    events.sort_unstable();
    let mut members = a.members.clone();
    members.extend_from_slice(&b.members);
    members.sort_unstable();
    let mut merged =
        build_candidate(ctx, events, members, params).expect("union of non-empty candidates");
    if ctx.map.is_none() {
        merged.is_bg_like = a.is_bg_like || b.is_bg_like;
    }
    merged
}

fn pair_score(a: &SegmentCandidate, b: &SegmentCandidate, params: &MergeParams) -> Option<f64> {
    a.bbox
        .overlaps(&b.bbox, params.bbox_dilation)
        .then(|| similarity(a, b, params.lambda_r, params.bg_penalty))
}

/// Greedy agglomeration: repeatedly merge the spatially connected pair with
/// the highest similarity above the threshold. Ties go to the lowest `(i, j)`.
pub fn hierarchical_merge(
    mut candidates: Vec<SegmentCandidate>,
    ctx: &MergeContext<'_>,
    params: &MergeParams,
) -> Vec<SegmentCandidate> {
    let n = candidates.len();
    let mut scores: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            scores[i][j] = pair_score(&candidates[i], &candidates[j], params);
        }
    }
    while candidates.len() >= 2 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, row) in scores.iter().enumerate() {
            for (j, s) in row.iter().enumerate().skip(i + 1) {
                if let Some(s) = *s {
                    if s > params.threshold && best.is_none_or(|(b, _, _)| s > b) {
                        best = Some((s, i, j));
                    }
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let merged = combine(ctx, &candidates[i], &candidates[j], params);
        candidates[i] = merged;
        candidates.remove(j);
        scores.remove(j);
        for row in scores.iter_mut() {
            row.remove(j);
        }
        for k in 0..candidates.len() {
            if k == i {
                continue;
            }
            let (lo, hi) = (k.min(i), k.max(i));
            scores[lo][hi] = pair_score(&candidates[lo], &candidates[hi], params);
        }
    }
    candidates
}
