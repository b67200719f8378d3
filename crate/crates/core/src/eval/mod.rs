//! Segmentation and motion metrics against ground truth.

mod report;

use nalgebra::{Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{matrix_a, ImagePoint};
use crate::lie::{inverse, log_se3, validate_rigid};

pub use report::{evaluate, EvalReport, FrameEval, ObjectMotionFrame, ObjectSeries};

/// Matches of ground-truth objects to predicted segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// `(gt label, predicted label, intersection)` per matched object, by
    /// ascending ground-truth label.
    pub pairs: Vec<(u32, u32, usize)>,
    /// Ground-truth objects present in the frame, ascending.
    pub objects: Vec<u32>,
}

fn counts(labels: &[u32]) -> std::collections::BTreeMap<u32, usize> {
    let mut m = std::collections::BTreeMap::new();
    for &l in labels.iter().filter(|&&l| l != 0) {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Greedy one-to-one matching of foreground labels by decreasing overlap;
/// ties go to the lower ground-truth label, then the lower predicted label.
pub fn match_segments(pred: &[u32], gt: &[u32]) -> Result<Matching> {
    if pred.len() != gt.len() {
        return Err(Error::length_mismatch("pred", pred.len(), "gt", gt.len()));
    }
    let mut overlap = std::collections::BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 && g != 0 {
            *overlap.entry((g, p)).or_insert(0usize) += 1;
        }
    }
    let mut cand: Vec<((u32, u32), usize)> = overlap.into_iter().collect();
    cand.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used_g = std::collections::BTreeSet::new();
    let mut used_p = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    for ((g, p), c) in cand {
        if !used_g.contains(&g) && !used_p.contains(&p) {
            used_g.insert(g);
            used_p.insert(p);
            pairs.push((g, p, c));
        }
    }
    pairs.sort_unstable();
    Ok(Matching {
        pairs,
        objects: counts(gt).into_keys().collect(),
    })
}

/// Foreground IoU of one frame: each ground-truth object is scored against
/// its matched predicted segment and the frame value is the mean over
/// objects. `None` when the frame has no ground-truth object.
pub fn iou(pred: &[u32], gt: &[u32]) -> Result<Option<f64>> {
    let m = match_segments(pred, gt)?;
    if m.objects.is_empty() {
        return Ok(None);
    }
    let gt_sizes = counts(gt);
    let pred_sizes = counts(pred);
    let total: f64 = m
        .objects
        .iter()
        .map(|g| {
            m.pairs.iter().find(|(pg, _, _)| pg == g).map_or(0.0, |&(_, p, inter)| {
                inter as f64 / (gt_sizes[g] + pred_sizes[&p] - inter) as f64
            })
        })
        .sum();
    Ok(Some(total / m.objects.len() as f64))
}

/// Per-axis root mean square error.
pub fn rmse_velocity(est: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<[f64; 3]> {
    if est.len() != gt.len() {
        return Err(Error::length_mismatch("estimate", est.len(), "ground truth", gt.len()));
    }
    if est.is_empty() {
        return Ok([0.0; 3]);
    }
    let mut out = [0.0; 3];
    for (e, g) in est.iter().zip(gt) {
        for a in 0..3 {
            out[a] += (e[a] - g[a]).powi(2);
        }
    }
    Ok(out.map(|s| (s / est.len() as f64).sqrt()))
}

/// Relative motion between consecutive frames and its image-plane
/// projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    /// Twist rate `[v, ω]` of `T_co(k+1) T_co(k)⁻¹` divided by `dt`.
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
    /// `A(centroid) v`.
    pub delta: [f64; 2],
}

/// Object motion in the camera frame between boundaries `k` and `k + 1` from
/// world poses of the object and the camera.
pub fn relative_object_motion(
    world_from_object: &[Matrix4<f64>],
    world_from_camera: &[Matrix4<f64>],
    centroids: &[ImagePoint],
    dt: f64,
) -> Result<Vec<RelativeMotion>> {
    if world_from_object.len() != world_from_camera.len() {
        return Err(Error::length_mismatch(
            "object poses",
            world_from_object.len(),
            "camera poses",
            world_from_camera.len(),
        ));
    }
    let steps = world_from_object.len().saturating_sub(1);
    if centroids.len() != steps {
        return Err(Error::length_mismatch("centroids", centroids.len(), "pose intervals", steps));
    }
    if !(dt > 0.0) {
        return Err(Error::Validation("dt must be positive".into()));
    }
    for t in world_from_object.iter().chain(world_from_camera) {
        validate_rigid(t)?;
    }
    let cam_from_obj: Vec<Matrix4<f64>> = world_from_object
        .iter()
        .zip(world_from_camera)
        .map(|(o, c)| inverse(c) * o)
        .collect();
    (0..steps)
        .map(|k| {
            let delta = cam_from_obj[k + 1] * inverse(&cam_from_obj[k]);
            let xi = log_se3(&delta)? / dt;
            let v = Vector3::new(xi[0], xi[1], xi[2]);
            let d = matrix_a(centroids[k]) * v;
            Ok(RelativeMotion {
                v,
                w: Vector3::new(xi[3], xi[4], xi[5]),
                delta: [d.x, d.y],
            })
        })
        .collect()
}

/// Camera body velocity `[v, ω]` between consecutive boundaries.
pub fn camera_velocity(world_from_camera: &[Matrix4<f64>], dt: f64) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    world_from_camera
        .windows(2)
        .map(|p| {
            let xi = log_se3(&(inverse(&p[0]) * p[1]))? / dt;
            Ok((Vector3::new(xi[0], xi[1], xi[2]), Vector3::new(xi[3], xi[4], xi[5])))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{compose, exp_se3};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector6};

    #[test]
    fn iou_fixtures() {
        let gt = [0, 1, 1, 1, 0, 0];
        assert_eq!(iou(&gt, &gt).unwrap(), Some(1.0));
        assert_eq!(iou(&[1, 0, 0, 0, 1, 1], &gt).unwrap(), Some(0.0));
        assert_eq!(iou(&[0; 6], &[0; 6]).unwrap(), None);
        assert!(matches!(iou(&[0; 3], &[0; 4]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn counted_fixture_eighty_over_hundred() {
        // 80 shared, 10 only predicted, 10 only ground truth, 20 background
        let mut pred = vec![5u32; 90];
        let mut gt = vec![2u32; 80];
        gt.extend([0; 10]);
        pred.extend([0; 10]);
        gt.extend([2; 10]);
        pred.extend([0; 20]);
        gt.extend([0; 20]);
        assert_eq!(iou(&pred, &gt).unwrap(), Some(0.8));
    }

    #[test]
    fn two_objects_average_and_greedy_ties() {
        // object 1 takes the shared prediction through the larger overlap,
        // leaving object 2 unmatched
        let gt = [1, 1, 1, 2, 0];
        let pred = [7, 7, 7, 7, 0];
        // obj1: 3 / 4, obj2: 0
        assert_eq!(iou(&pred, &gt).unwrap(), Some(0.375));
        // equal overlaps go to the lower ground-truth label
        let m = match_segments(&[3, 3], &[2, 1]).unwrap();
        assert_eq!(m.pairs, vec![(1, 3, 1)]);
    }

    #[test]
    fn rmse_examples() {
        let gt = [[0.1, 0.2, 0.3], [0.0, -0.1, 0.5]];
        assert_eq!(rmse_velocity(&gt, &gt).unwrap(), [0.0; 3]);
        let off: Vec<[f64; 3]> = gt.iter().map(|g| [g[0] + 0.1, g[1], g[2]]).collect();
        let r = rmse_velocity(&off, &gt).unwrap();
        assert_abs_diff_eq!(r[0], 0.1, epsilon = 1e-15);
        assert_eq!([r[1], r[2]], [0.0, 0.0]);
        assert!(rmse_velocity(&off[..1], &gt).is_err());
    }

    #[test]
    fn relative_motion_examples() {
        let id = Matrix4::identity();
        let c = [ImagePoint::new(0.1, -0.2)];
        let still = relative_object_motion(&[id, id], &[id, id], &c, 0.05).unwrap();
        assert_eq!(still[0].v, Vector3::zeros());
        assert_eq!(still[0].w, Vector3::zeros());

        let shifted = compose(&Matrix3::identity(), &Vector3::new(0.1, 0.0, 0.0));
        let m = relative_object_motion(&[id, shifted], &[id, id], &c, 0.05).unwrap();
        assert_abs_diff_eq!(m[0].v, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m[0].delta[0], -2.0, epsilon = 1e-12);

        // a moving camera sees a static object move the opposite way
        let cam = exp_se3(&Vector6::new(0.0, 0.01, 0.0, 0.0, 0.0, 0.0));
        let m = relative_object_motion(&[id, id], &[id, cam], &c, 0.01).unwrap();
        assert_abs_diff_eq!(m[0].v, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-12);

        let mut skew = id;
        skew[(0, 1)] = 1e-3;
        assert!(matches!(
            relative_object_motion(&[id, skew], &[id, id], &c, 0.05),
            Err(Error::Validation(_))
        ));
    }
}
