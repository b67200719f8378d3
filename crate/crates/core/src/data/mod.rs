//! Recordings of normal-flow event slices, their on-disk container, and the
//! synthetic scene simulator that produces them with ground truth.

mod format;
mod sim;

use nalgebra::{Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, NormalFlowSample};
use crate::lie::validate_rigid;

pub use format::{decode_recording, encode_recording, load_recording, save_recording, FORMAT_VERSION, MAGIC};
pub use sim::{simulate, CameraSpec, ObjectSpec, PlaneSpec, SceneSpec};

/// Events of one time window with their normal flow and the IMU rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub t_start: f64,
    pub t_end: f64,
    /// Gyroscope rate over the slice, rad/s.
    pub imu_w: [f64; 3],
    /// Event timestamps, s.
    pub t: Vec<f64>,
    /// Event pixel columns and rows.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Signed normal-flow magnitude, calibrated units per second.
    pub n: Vec<f64>,
    pub n0x: Vec<f64>,
    pub n0y: Vec<f64>,
    /// Ground-truth labels: 0 background, `i + 1` for object `i`.
    pub labels: Option<Vec<u32>>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn pixels(&self) -> Vec<[f64; 2]> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| [x, y]).collect()
    }

    pub fn imu(&self) -> Vector3<f64> {
        Vector3::from(self.imu_w)
    }

    /// Normal-flow samples at calibrated coordinates.
    pub fn samples(&self, k: &Intrinsics) -> Result<Vec<NormalFlowSample>> {
        (0..self.len())
            .map(|i| {
                NormalFlowSample::new(
                    k.to_calibrated(self.x[i], self.y[i]),
                    Vector2::new(self.n0x[i], self.n0y[i]),
                    self.n[i],
                )
            })
            .collect()
    }

    fn validate(&self, index: usize, width: u32, height: u32) -> Result<()> {
        let n = self.t.len();
        let columns = [
            ("x", self.x.len()),
            ("y", self.y.len()),
            ("n", self.n.len()),
            ("n0x", self.n0x.len()),
            ("n0y", self.n0y.len()),
        ];
        for (name, len) in columns {
            if len != n {
                return Err(Error::length_mismatch("t", n, name, len));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::length_mismatch("t", n, "labels", l.len()));
            }
        }
        let bad = |what: &str| Err(Error::Validation(format!("slice {index}: {what}")));
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_end < self.t_start {
            return bad("window is not a finite increasing interval");
        }
        if self.imu_w.iter().any(|v| !v.is_finite()) {
            return bad("non-finite IMU rate");
        }
        for i in 0..n {
            if !(self.t[i] >= self.t_start && self.t[i] <= self.t_end) {
                return bad("event time outside the slice window");
            }
            if !(self.x[i] >= 0.0 && self.x[i] < width as f64 && self.y[i] >= 0.0 && self.y[i] < height as f64) {
                return bad("event outside the sensor");
            }
            if !self.n[i].is_finite() {
                return bad("non-finite normal flow");
            }
            let norm = self.n0x[i].hypot(self.n0y[i]);
            if !((norm - 1.0).abs() <= 1e-9) {
                return bad("normal direction is not a unit vector");
            }
        }
        if self.t.windows(2).any(|w| w[1] < w[0]) {
            return bad("event times are not sorted");
        }
        Ok(())
    }
}

/// Poses at every slice boundary: entry `k` is at `slices[k].t_start` and the
/// last one at the end of the final slice.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthPoses {
    /// Camera-to-world transforms.
    pub camera: Vec<Matrix4<f64>>,
    /// Object-to-world transforms, one series per object.
    pub objects: Vec<Vec<Matrix4<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub slices: Vec<Slice>,
    pub poses: Option<GroundTruthPoses>,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        if !self.intrinsics.is_valid() {
            return Err(Error::Validation("intrinsics must be finite with positive focal lengths".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("resolution must be positive".into()));
        }
        for (i, s) in self.slices.iter().enumerate() {
            s.validate(i, self.width, self.height)?;
        }
        if self.slices.windows(2).any(|w| w[1].t_start < w[0].t_end) {
            return Err(Error::Validation("slice windows are not monotone".into()));
        }
        let with_labels = self.slices.iter().filter(|s| s.labels.is_some()).count();
        if with_labels != 0 && with_labels != self.slices.len() {
            return Err(Error::Validation("labels must be present on all slices or none".into()));
        }
        if let Some(p) = &self.poses {
            let expected = self.slices.len() + 1;
            if p.camera.len() != expected {
                return Err(Error::length_mismatch("slice boundaries", expected, "camera poses", p.camera.len()));
            }
            for series in &p.objects {
                if series.len() != expected {
                    return Err(Error::length_mismatch("slice boundaries", expected, "object poses", series.len()));
                }
            }
            for t in p.camera.iter().chain(p.objects.iter().flatten()) {
                validate_rigid(t)?;
            }
        }
        Ok(())
    }

    pub fn has_labels(&self) -> bool {
        self.slices.first().is_some_and(|s| s.labels.is_some())
    }

    pub fn event_count(&self) -> usize {
        self.slices.iter().map(Slice::len).sum()
    }
}
