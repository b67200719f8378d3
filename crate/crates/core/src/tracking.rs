//! Constant-velocity Kalman tracking of segment centroids with greedy
//! gated association. Track ID 0 is reserved for the background.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

pub const BACKGROUND_ID: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Process noise intensity, px²/s³.
    pub q: f64,
    /// Measurement variance, px².
    pub r: f64,
    /// Association gate radius, px.
    pub gate: f64,
    /// Tracks missed more than this many steps are dropped.
    pub max_misses: u32,
    /// Initial velocity variance of a new track, px²/s².
    pub initial_velocity_var: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 4.0,
            gate: 30.0,
            max_misses: 3,
            initial_velocity_var: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    /// `[cx, cy, vx, vy]` in px and px/s.
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub age: u32,
    pub misses: u32,
}

impl Track {
    pub fn new(id: u32, centroid: Vector2<f64>, params: &TrackerParams) -> Self {
        Self {
            id,
            state: Vector4::new(centroid.x, centroid.y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(
                params.r,
                params.r,
                params.initial_velocity_var,
                params.initial_velocity_var,
            )),
            age: 1,
            misses: 0,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.state[0], self.state[1])
    }
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn observation() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Constant-velocity prediction with `Q = q·diag(dt², dt², dt, dt)`.
pub fn predict(track: &Track, dt: f64, params: &TrackerParams) -> Track {
    let f = transition(dt);
    let q = Matrix4::from_diagonal(&Vector4::new(dt * dt, dt * dt, dt, dt)) * params.q;
    let p = f * track.covariance * f.transpose() + q;
    Track {
        state: f * track.state,
        covariance: (p + p.transpose()) * 0.5,
        ..track.clone()
    }
}

fn innovation_cov(track: &Track, params: &TrackerParams) -> Matrix2<f64> {
    let h = observation();
    h * track.covariance * h.transpose() + Matrix2::identity() * params.r
}

/// Kalman correction with a position measurement, Joseph-form covariance.
pub fn update(track: &Track, z: Vector2<f64>, params: &TrackerParams) -> Track {
    let h = observation();
    let s = innovation_cov(track, params);
    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
    let k = track.covariance * h.transpose() * s_inv;
    let innovation = z - h * track.state;
    let ikh = Matrix4::identity() - k * h;
    let r = Matrix2::identity() * params.r;
    let p = ikh * track.covariance * ikh.transpose() + k * r * k.transpose();
    Track {
        state: track.state + k * innovation,
        covariance: (p + p.transpose()) * 0.5,
        misses: 0,
        age: track.age + 1,
        ..track.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, measurement index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_measurements: Vec<usize>,
}

/// Greedy assignment among pairs whose Euclidean distance is inside the gate,
/// by increasing Gaussian cost `νᵀS⁻¹ν + ln det S`. The log-determinant keeps
/// a young track, whose wide covariance makes every measurement look close,
/// from taking a measurement that a settled track predicts well.
pub fn associate(tracks: &[Track], measurements: &[Vector2<f64>], params: &TrackerParams) -> Association {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        let s = innovation_cov(t, params);
        let s_inv = s.try_inverse().unwrap_or_else(Matrix2::identity);
        let log_det = s.determinant().max(f64::MIN_POSITIVE).ln();
        for (mi, z) in measurements.iter().enumerate() {
            let nu = z - t.position();
            if nu.norm() <= params.gate {
                pairs.push(((nu.transpose() * s_inv * nu)[0] + log_det, ti, mi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut meas_used = vec![false; measurements.len()];
    let mut out = Association::default();
    for (_, ti, mi) in pairs {
        if !track_used[ti] && !meas_used[mi] {
            track_used[ti] = true;
            meas_used[mi] = true;
            out.matches.push((ti, mi));
        }
    }
    out.matches.sort_unstable();
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !track_used[i]).collect();
    out.unmatched_measurements = (0..measurements.len()).filter(|&i| !meas_used[i]).collect();
    out
}

/// A segment handed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentObservation {
    pub centroid: Vector2<f64>,
    pub is_background: bool,
}

/// Owns the live tracks and the ID counter of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub params: TrackerParams,
    pub tracks: Vec<Track>,
    next_id: u32,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    /// Predicts, associates, updates, births and retires; returns the track
    /// ID of every observation in input order.
    pub fn step(&mut self, observations: &[SegmentObservation], dt: f64) -> Vec<u32> {
        let mut ids = vec![BACKGROUND_ID; observations.len()];
        if dt > 0.0 {
            self.tracks = self
                .tracks
                .iter()
                .map(|t| predict(t, dt, &self.params))
                .collect();
        }
        let fg: Vec<usize> = (0..observations.len())
            .filter(|&i| !observations[i].is_background)
            .collect();
        let centroids: Vec<Vector2<f64>> = fg.iter().map(|&i| observations[i].centroid).collect();
        let assoc = associate(&self.tracks, &centroids, &self.params);

        for &(ti, mi) in &assoc.matches {
            self.tracks[ti] = update(&self.tracks[ti], centroids[mi], &self.params);
            ids[fg[mi]] = self.tracks[ti].id;
        }
        for &ti in &assoc.unmatched_tracks {
            self.tracks[ti].misses += 1;
            self.tracks[ti].age += 1;
        }
        let max_misses = self.params.max_misses;
        self.tracks.retain(|t| t.misses <= max_misses);
        for &mi in &assoc.unmatched_measurements {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track::new(id, centroids[mi], &self.params));
            ids[fg[mi]] = id;
        }
        ids
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }
}
