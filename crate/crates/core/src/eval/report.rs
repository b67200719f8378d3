//! Scoring a run against a recording's ground truth. The JSON schema is
//! documented in `docs/REPORT.md`.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{camera_velocity, iou, match_segments, relative_object_motion, rmse_velocity};
use crate::data::Recording;
use crate::error::{Error, Result};
use crate::geometry::{matrix_a, ImagePoint};
use crate::pipeline::RunOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub index: usize,
    /// `None` for frames without a ground-truth object.
    pub iou: Option<f64>,
    pub gt_objects: Vec<u32>,
    /// `[gt label, predicted ID]` pairs.
    pub matches: Vec<[u32; 2]>,
    pub predicted_segments: usize,
    pub reinitialized: bool,
    pub failed: bool,
    /// Estimated direction times the true speed, m/s.
    pub velocity_est: Option<[f64; 3]>,
    pub velocity_gt: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotionFrame {
    pub index: usize,
    /// Image-plane translation `A(centroid) v`, ground truth.
    pub gt: [f64; 2],
    /// Same from the matched segment, with the true speed.
    pub est: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSeries {
    pub object: u32,
    pub frames: Vec<ObjectMotionFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameEval>,
    /// Mean over frames with a ground-truth object.
    pub mean_iou: Option<f64>,
    /// Per-axis RMSE over frames with a defined translation.
    pub velocity_rmse: Option<[f64; 3]>,
    pub object_motion: Vec<ObjectSeries>,
    /// Changes of the predicted ID matched to the same object.
    pub id_switches: usize,
    pub failed_steps: usize,
}

fn calibrated_centroid(rec: &Recording, k: usize, idx: &[usize]) -> Option<ImagePoint> {
    if idx.is_empty() {
        return None;
    }
    let s = &rec.slices[k];
    let n = idx.len() as f64;
    let px = idx.iter().map(|&i| s.x[i]).sum::<f64>() / n;
    let py = idx.iter().map(|&i| s.y[i]).sum::<f64>() / n;
    Some(rec.intrinsics.to_calibrated(px, py))
}

/// Scores `run` against the ground truth stored in `rec`.
pub fn evaluate(rec: &Recording, run: &RunOutput) -> Result<EvalReport> {
    if !rec.has_labels() {
        return Err(Error::Validation("recording has no ground-truth labels".into()));
    }
    if run.steps.len() != rec.slices.len() {
        return Err(Error::length_mismatch("run steps", run.steps.len(), "recording slices", rec.slices.len()));
    }
    let dt_of = |k: usize| rec.slices[k].duration();
    let cam_vel = match &rec.poses {
        Some(p) => Some(
            p.camera
                .windows(2)
                .enumerate()
                .map(|(k, w)| camera_velocity(w, dt_of(k)).map(|v| v[0].0))
                .collect::<Result<Vec<Vector3<f64>>>>()?,
        ),
        None => None,
    };

    let mut frames = Vec::with_capacity(rec.slices.len());
    let mut assigned: Vec<Vec<(usize, u32)>> = Vec::new();
    let mut object_motion: Vec<ObjectSeries> = Vec::new();
    for (k, (slice, record)) in rec.slices.iter().zip(&run.steps).enumerate() {
        let gt = slice.labels.as_ref().expect("labels checked above");
        let empty = vec![0u32; gt.len()];
        let (pred, out) = match &record.output {
            Some(o) => (&o.labels, Some(o)),
            None => (&empty, None),
        };
        if pred.len() != gt.len() {
            return Err(Error::length_mismatch("predicted labels", pred.len(), "ground-truth labels", gt.len()));
        }
        let m = match_segments(pred, gt)?;
        let frame_iou = iou(pred, gt)?;
        for &(g, p, _) in &m.pairs {
            let g = g as usize;
            if assigned.len() < g {
                assigned.resize(g, Vec::new());
            }
            assigned[g - 1].push((k, p));
        }

        let (velocity_est, velocity_gt) = match (&cam_vel, out) {
            (Some(v), Some(o)) => {
                let gt_v = v[k];
                let est = o
                    .egomotion
                    .direction
                    .filter(|_| o.egomotion.translation_defined)
                    .map(|d| (Vector3::from(d) * gt_v.norm()).into());
                (est, Some(gt_v.into()))
            }
            (Some(v), None) => (None, Some(v[k].into())),
            _ => (None, None),
        };

        if let Some(p) = &rec.poses {
            for &g in &m.objects {
                let oi = g as usize - 1;
                let Some(series) = p.objects.get(oi) else { continue };
                let gt_idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == g).collect();
                let Some(c) = calibrated_centroid(rec, k, &gt_idx) else { continue };
                let rel = relative_object_motion(&series[k..=k + 1], &p.camera[k..=k + 1], &[c], dt_of(k))?[0];
                let est = m.pairs.iter().find(|(pg, _, _)| *pg == g).and_then(|&(_, pid, _)| {
                    let seg = out?.segments.iter().find(|s| s.id == pid)?;
                    let t = seg.motion.t;
                    if t.norm() == 0.0 {
                        return None;
                    }
                    // segment t is the camera relative to the object; the
                    // object point moves the opposite way
                    let v = -t.normalize() * rel.v.norm();
                    let pidx: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == pid).collect();
                    let d = matrix_a(calibrated_centroid(rec, k, &pidx)?) * v;
                    Some([d.x, d.y])
                });
                if object_motion.iter().all(|s| s.object != g) {
                    object_motion.push(ObjectSeries {
                        object: g,
                        frames: Vec::new(),
                    });
                }
                let series = object_motion.iter_mut().find(|s| s.object == g).expect("inserted");
                series.frames.push(ObjectMotionFrame {
                    index: k,
                    gt: rel.delta,
                    est,
                });
            }
        }

        let predicted: std::collections::BTreeSet<u32> = pred.iter().copied().filter(|&l| l != 0).collect();
        frames.push(FrameEval {
            index: k,
            iou: frame_iou,
            gt_objects: m.objects.clone(),
            matches: m.pairs.iter().map(|&(g, p, _)| [g, p]).collect(),
            predicted_segments: predicted.len(),
            reinitialized: out.is_some_and(|o| o.reinitialized),
            failed: out.is_none(),
            velocity_est,
            velocity_gt,
        });
    }
    object_motion.sort_by_key(|s| s.object);

    let scored: Vec<f64> = frames.iter().filter_map(|f| f.iou).collect();
    let mean_iou = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let (est, gt): (Vec<[f64; 3]>, Vec<[f64; 3]>) = frames
        .iter()
        .filter_map(|f| Some((f.velocity_est?, f.velocity_gt?)))
        .unzip();
    let velocity_rmse = if est.is_empty() { None } else { Some(rmse_velocity(&est, &gt)?) };
    let id_switches = assigned
        .iter()
        .map(|a| a.windows(2).filter(|w| w[0].1 != w[1].1).count())
        .sum();
    Ok(EvalReport {
        failed_steps: frames.iter().filter(|f| f.failed).count(),
        frames,
        mean_iou,
        velocity_rmse,
        object_motion,
        id_switches,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Fixed-width table followed by the summary lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5}  {:>6}  {:>7}  {:>8}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}",
            "frame", "iou", "objects", "segments", "reinit", "vx_est", "vx_gt", "vy_est", "vy_gt"
        );
        for f in &self.frames {
            let v = |o: Option<[f64; 3]>, a: usize| opt(o.map(|v| v[a]));
            let _ = writeln!(
                s,
                "{:>5}  {:>6}  {:>7}  {:>8}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}",
                f.index,
                if f.failed { "fail".to_string() } else { opt(f.iou) },
                f.gt_objects.len(),
                f.predicted_segments,
                if f.reinitialized { "yes" } else { "no" },
                v(f.velocity_est, 0),
                v(f.velocity_gt, 0),
                v(f.velocity_est, 1),
                v(f.velocity_gt, 1),
            );
        }
        let _ = writeln!(s, "mean IoU: {}", opt(self.mean_iou));
        match self.velocity_rmse {
            Some(r) => {
                let _ = writeln!(s, "velocity RMSE (m/s): x {:.4}  y {:.4}  z {:.4}", r[0], r[1], r[2]);
            }
            None => {
                let _ = writeln!(s, "velocity RMSE (m/s): -");
            }
        }
        let _ = writeln!(s, "id switches: {}", self.id_switches);
        let _ = writeln!(s, "failed steps: {}", self.failed_steps);
        s
    }

    /// One row per frame.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "frame,iou,gt_objects,predicted_segments,reinitialized,failed,vx_est,vy_est,vz_est,vx_gt,vy_gt,vz_gt\n",
        );
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for f in &self.frames {
            let e = |a: usize| cell(f.velocity_est.map(|v| v[a]));
            let g = |a: usize| cell(f.velocity_gt.map(|v| v[a]));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                f.index,
                cell(f.iou),
                f.gt_objects.len(),
                f.predicted_segments,
                f.reinitialized,
                f.failed,
                e(0),
                e(1),
                e(2),
                g(0),
                g(1),
                g(2)
            );
        }
        s
    }
}
