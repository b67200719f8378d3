//! The recursive per-slice engine: over-segmentation, residual segregation,
//! temporal background matching with translation recovery, hierarchical
//! merging and tracking, then a refined background motion for the next step.

use log::{debug, warn};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::background::{
    background_similarity, estimate_translation_svm, matched_fractions, translation_residuals,
    update_map, warp_background, BackgroundMap, BackgroundState, TranslationEstimate,
};
use crate::clustering::{over_segment, segregate_by_residual, smooth_residuals};
use crate::config::Config;
use crate::data::{Recording, Slice};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, MotionParams, NormalFlowSample};
use crate::merging::{build_candidate, hierarchical_merge, MergeContext, SegmentCandidate};
use crate::planar_fit::fit_plane;
use crate::tracking::{SegmentObservation, Tracker, BACKGROUND_ID};

/// Sensor geometry shared by every step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

impl Sensor {
    pub fn of(rec: &Recording) -> Self {
        Self {
            intrinsics: rec.intrinsics,
            width: rec.width as usize,
            height: rec.height as usize,
        }
    }
}

/// One slice of events with their normal flow and the IMU rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub t_start: f64,
    pub t_end: f64,
    pub times: Vec<f64>,
    pub pixels: Vec<[f64; 2]>,
    pub samples: Vec<NormalFlowSample>,
    pub imu_w: Vector3<f64>,
}

impl StepInput {
    pub fn from_slice(slice: &Slice, intrinsics: &Intrinsics) -> Result<Self> {
        Ok(Self {
            t_start: slice.t_start,
            t_end: slice.t_end,
            times: slice.t.clone(),
            pixels: slice.pixels(),
            samples: slice.samples(intrinsics)?,
            imu_w: slice.imu(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn validate(&self, fov_limit: f64) -> Result<()> {
        if self.pixels.len() != self.samples.len() {
            return Err(Error::length_mismatch("pixels", self.pixels.len(), "flow", self.samples.len()));
        }
        if self.times.len() != self.samples.len() {
            return Err(Error::length_mismatch("times", self.times.len(), "flow", self.samples.len()));
        }
        if self.times.iter().any(|&t| !(t >= self.t_start && t <= self.t_end)) {
            return Err(Error::Validation("event time outside the slice window".into()));
        }
        if self.samples.iter().any(|s| !s.point.within_fov(fov_limit)) {
            return Err(Error::Validation("event outside the field-of-view limit".into()));
        }
        if !self.imu_w.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("non-finite IMU rate".into()));
        }
        Ok(())
    }
}

/// Motion of one output segment. `t` is translation over depth, i.e. the
/// translation at unit depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMotion {
    pub id: u32,
    pub motion: MotionParams,
    pub events: usize,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Egomotion {
    /// Rotation from the IMU and translation at unit depth.
    pub motion: MotionParams,
    /// Unit translation direction, when the slice constrains it.
    pub direction: Option<[f64; 3]>,
    pub translation_defined: bool,
    /// Fraction of background samples agreeing with the direction.
    pub agreement: f64,
}

/// Everything a step hands to the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    /// Number of steps already processed.
    pub step: usize,
    pub last_time: Option<f64>,
    pub background: Option<BackgroundState>,
    pub tracker: Tracker,
}

impl PipelineState {
    pub fn new(config: &Config) -> Self {
        Self {
            step: 0,
            last_time: None,
            background: None,
            tracker: Tracker::new(config.tracker),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// One label per input event; 0 is background, others are track IDs.
    pub labels: Vec<u32>,
    /// Background first, then foreground segments by ascending ID.
    pub segments: Vec<SegmentMotion>,
    pub egomotion: Egomotion,
    /// Set when the temporal stage failed and residual-only segregation was
    /// used instead.
    pub reinitialized: bool,
    #[serde(skip)]
    pub next: Option<PipelineState>,
}

fn centroid(pixels: &[[f64; 2]], idx: &[usize]) -> [f64; 2] {
    let n = idx.len().max(1) as f64;
    let (sx, sy) = idx
        .iter()
        .fold((0.0, 0.0), |(x, y), &i| (x + pixels[i][0], y + pixels[i][1]));
    [sx / n, sy / n]
}

fn gather<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Residual-only background clusters: those whose events are mostly on the
/// low-residual side.
fn residual_background(members: &[Vec<usize>], foreground: &[bool]) -> Vec<bool> {
    members
        .iter()
        .map(|m| !m.is_empty() && 2 * m.iter().filter(|&&i| foreground[i]).count() < m.len())
        .collect()
}

fn union(members: &[Vec<usize>], chosen: &[bool]) -> Vec<usize> {
    let mut out: Vec<usize> = members
        .iter()
        .zip(chosen)
        .filter(|(_, &c)| c)
        .flat_map(|(m, _)| m.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

fn estimate(input: &StepInput, idx: &[usize], config: &Config) -> Result<TranslationEstimate> {
    estimate_translation_svm(&gather(&input.samples, idx), &input.imu_w, &config.svm)
}

/// Runs one recursive step from `prev` and returns the outputs together with
/// the state for the next step.
pub fn step(input: &StepInput, prev: &PipelineState, sensor: &Sensor, config: &Config) -> Result<StepOutput> {
    if input.is_empty() {
        return Err(Error::EmptySlice);
    }
    input.validate(config.pipeline.fov_limit)?;
    let n = input.len();
    let w = input.imu_w;
    let pixels = &input.pixels;
    let samples = &input.samples;

    // over-segmentation
    let clusters = over_segment(pixels, samples, &config.over_segment_params())?;
    let members = clusters.members();

    // residual segregation under the planar-scene model
    let mut reinitialized = false;
    let plane_residuals = match fit_plane(samples) {
        Ok(fit) => fit.residuals,
        Err(Error::DegenerateSystem(msg)) => {
            debug!("plane fit degenerate ({msg}); treating the slice as background");
            reinitialized = true;
            vec![0.0; n]
        }
        Err(e) => return Err(e),
    };
    let (_, smoothed) = smooth_residuals(
        pixels,
        &plane_residuals,
        config.pipeline.smoothing_sigma,
        sensor.width,
        sensor.height,
    )?;
    let seg = segregate_by_residual(&smoothed);
    let mut residual_fg = vec![false; n];
    seg.foreground.iter().for_each(|&i| residual_fg[i] = true);
    let residual_bg_clusters = residual_background(&members, &residual_fg);

    // coarse background from temporal matching
    let dt = prev.last_time.map_or(0.0, |t| input.t_start - t);
    let temporal = prev.step >= config.pipeline.init_frames;
    let mut coarse = match (&prev.background, temporal) {
        (Some(bg), true) => {
            let warped = warp_background(bg, dt, &config.matching, &sensor.intrinsics);
            let frac = matched_fractions(&warped, pixels, &clusters, config.matching.radius);
            frac.iter()
                .zip(&residual_bg_clusters)
                .map(|(&f, &r)| f > config.matching.theta && r)
                .collect()
        }
        _ => residual_bg_clusters.clone(),
    };
    if temporal && !coarse.iter().any(|&c| c) {
        reinitialized = true;
        coarse = residual_bg_clusters.clone();
    }
    let mut coarse_events = union(&members, &coarse);
    let coarse_estimate = match estimate(input, &coarse_events, config) {
        Ok(e) => Some(e),
        Err(Error::InsufficientSupport(msg)) => {
            debug!("coarse background translation failed: {msg}");
            if coarse != residual_bg_clusters {
                reinitialized = true;
                coarse = residual_bg_clusters.clone();
                coarse_events = union(&members, &coarse);
                estimate(input, &coarse_events, config).ok()
            } else {
                None
            }
        }
        Err(e) => return Err(e),
    };
    let residuals = match &coarse_estimate {
        Some(e) => translation_residuals(samples, &e.translation(), &w),
        None => plane_residuals.clone(),
    };

    // persistent background map
    let prev_map = prev
        .background
        .as_ref()
        .map(|b| b.map.clone())
        .unwrap_or_else(|| BackgroundMap::new(sensor.width, sensor.height));
    let coarse_pixels = gather(pixels, &coarse_events);
    let map = if prev_map.is_empty() {
        let mut m = prev_map.clone();
        m.seed(&coarse_pixels, &config.map);
        m
    } else {
        let s = background_similarity(&prev_map, &coarse_pixels, &config.map);
        update_map(&prev_map, &coarse_pixels, s, &config.map)
    };
    let flag_map = if prev_map.is_empty() { &map } else { &prev_map };

    // refined merging
    let ctx = MergeContext {
        samples,
        pixels,
        residuals: &residuals,
        w,
        map: Some(flag_map),
    };
    let mut candidates: Vec<SegmentCandidate> = Vec::new();
    if let Some(c) = build_candidate(&ctx, coarse_events.clone(), vec![0], &config.merge) {
        candidates.push(c);
    }
    for (ci, m) in members.iter().enumerate() {
        if !coarse[ci] && !m.is_empty() {
            let id = candidates.len();
            candidates.extend(build_candidate(&ctx, m.clone(), vec![id], &config.merge));
        }
    }
    let has_bg_candidate = !coarse_events.is_empty();
    let merged = hierarchical_merge(candidates, &ctx, &config.merge);

    let mut background_events: Vec<usize> = Vec::new();
    let mut foreground: Vec<&SegmentCandidate> = Vec::new();
    for seg in &merged {
        let is_bg = has_bg_candidate && seg.members.contains(&0);
        if is_bg || seg.event_indices.len() < config.pipeline.min_segment_events {
            background_events.extend(&seg.event_indices);
        } else {
            foreground.push(seg);
        }
    }
    background_events.sort_unstable();

    // tracking
    let observations: Vec<SegmentObservation> = foreground
        .iter()
        .map(|s| {
            let c = centroid(pixels, &s.event_indices);
            SegmentObservation {
                centroid: Vector2::new(c[0], c[1]),
                is_background: false,
            }
        })
        .collect();
    let mut tracker = prev.tracker.clone();
    let ids = tracker.step(&observations, dt);
    let mut labels = vec![BACKGROUND_ID; n];
    for (seg, &id) in foreground.iter().zip(&ids) {
        seg.event_indices.iter().for_each(|&i| labels[i] = id);
    }

    // background motion for the next step, from the refined background
    let refined = estimate(input, &background_events, config);
    let (egomotion, bg_t) = match (&refined, &coarse_estimate) {
        (Ok(e), _) => (translation_output(e, w), e.translation()),
        (Err(err), Some(e)) => {
            debug!("refined background translation failed ({err}); keeping the coarse estimate");
            (translation_output(e, w), e.translation())
        }
        (Err(_), None) => (
            Egomotion {
                motion: MotionParams::new(Vector3::zeros(), w),
                direction: None,
                translation_defined: false,
                agreement: 0.0,
            },
            Vector3::zeros(),
        ),
    };
    if reinitialized {
        warn!("step {}: temporal stage fell back to residual segregation", prev.step);
    }

    let mut segments = vec![SegmentMotion {
        id: BACKGROUND_ID,
        motion: egomotion.motion,
        events: background_events.len(),
        centroid: centroid(pixels, &background_events),
    }];
    let mut fg_segments: Vec<SegmentMotion> = foreground
        .iter()
        .zip(&ids)
        .map(|(s, &id)| SegmentMotion {
            id,
            motion: MotionParams::new(s.t, w),
            events: s.event_indices.len(),
            centroid: centroid(pixels, &s.event_indices),
        })
        .collect();
    fg_segments.sort_by_key(|s| s.id);
    segments.extend(fg_segments);

    let next = PipelineState {
        step: prev.step + 1,
        last_time: Some(input.t_start),
        background: Some(BackgroundState {
            mask: gather(pixels, &background_events),
            motion: MotionParams::new(bg_t, w),
            map,
        }),
        tracker,
    };
    Ok(StepOutput {
        labels,
        segments,
        egomotion,
        reinitialized,
        next: Some(next),
    })
}

fn translation_output(e: &TranslationEstimate, w: Vector3<f64>) -> Egomotion {
    let d = e.direction.into_inner();
    Egomotion {
        motion: MotionParams::new(e.translation(), w),
        direction: Some([d.x, d.y, d.z]),
        translation_defined: true,
        agreement: e.agreement,
    }
}

/// Outcome of one step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub t_start: f64,
    pub output: Option<StepOutput>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: Config,
    pub steps: Vec<StepRecord>,
}

impl RunOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run output serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("run output: {e}")))
    }
}

/// Threads the state through every input. A failing step is recorded and
/// skipped. Only the step counter advances, so the next step warps the last
/// good background across the whole gap.
pub fn run(inputs: &[StepInput], sensor: &Sensor, config: &Config) -> Result<RunOutput> {
    if inputs.is_empty() {
        return Err(Error::Validation("run needs at least one slice".into()));
    }
    let mut state = PipelineState::new(config);
    let mut steps = Vec::with_capacity(inputs.len());
    for (index, input) in inputs.iter().enumerate() {
        match step(input, &state, sensor, config) {
            Ok(mut out) => {
                state = out.next.take().expect("step returns its next state");
                steps.push(StepRecord {
                    index,
                    t_start: input.t_start,
                    output: Some(out),
                    error: None,
                });
            }
            Err(e) => {
                warn!("step {index} failed: {e}");
                state.step += 1;
                steps.push(StepRecord {
                    index,
                    t_start: input.t_start,
                    output: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(RunOutput {
        config: *config,
        steps,
    })
}

/// Builds step inputs from a recording and runs it.
pub fn run_recording(rec: &Recording, config: &Config) -> Result<RunOutput> {
    let inputs = rec
        .slices
        .iter()
        .map(|s| StepInput::from_slice(s, &rec.intrinsics))
        .collect::<Result<Vec<_>>>()?;
    run(&inputs, &Sensor::of(rec), config)
}
