//! Synthetic event scenes built from textured planar patches.
//!
//! Every patch is rigid in its own frame and carries random straight texture
//! segments. Events are sampled along the projected segments, land on integer
//! pixels, and carry the exact normal flow of the analytic motion field at
//! that pixel. The background patches are fixed in the world; each object
//! patch has its own camera-relative motion.

use nalgebra::{Matrix4, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{GroundTruthPoses, Recording, Slice};
use crate::error::{Error, Result};
use crate::geometry::{flow_at, Intrinsics, MotionParams};
use crate::lie::{exp_se3, inverse, rotation, translation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    /// Body-frame translational velocity, m/s.
    pub t: [f64; 3],
    /// Body-frame angular velocity, rad/s.
    pub w: [f64; 3],
}

/// A textured planar patch. `plane = [α, β, γ, d]` gives depth through
/// `d / Z = αx + βy + γ` in calibrated coordinates of the reference camera
/// frame; `region = [x0, y0, x1, y1]` is its pixel extent in that frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub plane: [f64; 4],
    pub region: [f64; 4],
}

/// An independently moving planar patch. `t` and `w` are the motion of the
/// camera relative to the object, i.e. the parameters that generate the
/// object's flow. The reference frame is the camera at `appear_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub plane: [f64; 4],
    pub region: [f64; 4],
    pub t: [f64; 3],
    pub w: [f64; 3],
    #[serde(default)]
    pub appear_step: usize,
    /// First step at which the object is gone.
    #[serde(default)]
    pub vanish_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    /// Slice length, s.
    #[serde(default = "default_slice_duration")]
    pub slice_duration: f64,
    /// Expected events per pixel of projected texture edge per second.
    pub event_rate: f64,
    /// Texture segments per 1000 px² of patch region.
    pub texture_density: f64,
    /// Range of texture segment lengths in reference-frame pixels.
    pub segment_length: [f64; 2],
    /// Gaussian noise on `n`, relative to the slice RMS of `n`.
    #[serde(default)]
    pub flow_noise: f64,
    /// Fraction of events whose `n` is replaced by a uniform draw.
    #[serde(default)]
    pub outlier_fraction: f64,
    /// Gaussian noise on the IMU rate, rad/s.
    #[serde(default)]
    pub imu_noise: f64,
    pub camera: CameraSpec,
    pub background: Vec<PlaneSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn default_slice_duration() -> f64 {
    0.025
}

impl Default for SceneSpec {
    /// A translating, slightly rotating camera over a tilted wall with one
    /// object sliding in front of it.
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            intrinsics: Intrinsics {
                fx: 250.0,
                fy: 250.0,
                cx: 160.0,
                cy: 120.0,
            },
            slice_duration: default_slice_duration(),
            event_rate: 200.0,
            texture_density: 8.0,
            segment_length: [3.0, 8.0],
            flow_noise: 0.0,
            outlier_fraction: 0.0,
            imu_noise: 0.0,
            camera: CameraSpec {
                t: [0.4, 0.1, 0.2],
                w: [0.02, -0.03, 0.05],
            },
            background: vec![PlaneSpec {
                plane: [0.05, -0.1, 1.0, 4.0],
                region: [0.0, 0.0, 320.0, 240.0],
            }],
            objects: vec![ObjectSpec {
                plane: [0.0, 0.0, 1.0, 1.5],
                region: [60.0, 70.0, 140.0, 150.0],
                t: [-0.8, 0.3, 0.2],
                w: [0.02, -0.03, 0.05],
                appear_step: 0,
                vanish_step: None,
            }],
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::Validation(msg)
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene spec serializes")
    }

    fn check_patch(&self, what: &str, plane: &[f64; 4], region: &[f64; 4]) -> Result<()> {
        let [a, b, g, d] = *plane;
        if !(d > 0.0) || plane.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("{what}: plane offset d must be positive and finite")));
        }
        let [x0, y0, x1, y1] = *region;
        if !(0.0 <= x0 && x0 < x1 && x1 <= self.width as f64 && 0.0 <= y0 && y0 < y1 && y1 <= self.height as f64) {
            return Err(invalid(format!("{what}: region must lie within the frame")));
        }
        for (px, py) in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)] {
            let p = self.intrinsics.to_calibrated(px, py);
            if !(a * p.x + b * p.y + g > 0.0) {
                return Err(invalid(format!("{what}: plane is not in front of the camera over its region")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.intrinsics.is_valid() {
            return Err(invalid("sensor size and intrinsics must be positive".into()));
        }
        let nonneg = [
            ("event_rate", self.event_rate),
            ("texture_density", self.texture_density),
            ("flow_noise", self.flow_noise),
            ("imu_noise", self.imu_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.slice_duration > 0.0 && self.slice_duration.is_finite()) {
            return Err(invalid("slice_duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(invalid("outlier_fraction must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.segment_length;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid("segment_length must be an increasing positive range".into()));
        }
        let motion = self.camera.t.iter().chain(&self.camera.w);
        if motion.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("camera motion must be finite".into()));
        }
        for (i, b) in self.background.iter().enumerate() {
            self.check_patch(&format!("background {i}"), &b.plane, &b.region)?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            self.check_patch(&format!("object {i}"), &o.plane, &o.region)?;
            if o.t.iter().chain(&o.w).any(|v| !v.is_finite()) {
                return Err(invalid(format!("object {i}: motion must be finite")));
            }
            if o.vanish_step.is_some_and(|v| v <= o.appear_step) {
                return Err(invalid(format!("object {i}: vanish_step must follow appear_step")));
            }
        }
        Ok(())
    }
}

fn twist(t: &[f64; 3], w: &[f64; 3]) -> Vector6<f64> {
    Vector6::new(t[0], t[1], t[2], w[0], w[1], w[2])
}

/// A patch in its own rigid frame.
struct Surface {
    label: u32,
    normal: Vector3<f64>,
    offset: f64,
    corners: [Vector3<f64>; 4],
    segments: Vec<(Vector3<f64>, Vector3<f64>)>,
    motion: MotionParams,
    xi: Vector6<f64>,
    ref_time: f64,
    steps: (usize, Option<usize>),
}

/// The patch as seen from the camera at one instant.
struct Placed<'a> {
    surface: &'a Surface,
    /// Surface-to-camera transform.
    cam_from_surface: Matrix4<f64>,
    normal: Vector3<f64>,
    offset: f64,
}

impl Surface {
    fn new(
        label: u32,
        plane: &[f64; 4],
        region: &[f64; 4],
        motion: MotionParams,
        ref_time: f64,
        steps: (usize, Option<usize>),
        spec: &SceneSpec,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let normal = Vector3::new(plane[0], plane[1], plane[2]);
        let offset = plane[3];
        let k = spec.intrinsics;
        let lift = |px: f64, py: f64| {
            let p = k.to_calibrated(px, py);
            let ray = Vector3::new(p.x, p.y, 1.0);
            ray * (offset / normal.dot(&ray))
        };
        let [x0, y0, x1, y1] = *region;
        let corners = [lift(x0, y0), lift(x1, y0), lift(x1, y1), lift(x0, y1)];
        let area = (x1 - x0) * (y1 - y0);
        let count = (spec.texture_density * area / 1000.0).round() as usize;
        let [lmin, lmax] = spec.segment_length;
        let mut segments = Vec::with_capacity(count);
        let mut attempts = 0;
        while segments.len() < count && attempts < 100 * count.max(1) {
            attempts += 1;
            let cx = rng.random_range(x0..x1);
            let cy = rng.random_range(y0..y1);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let half = 0.5 * if lmax > lmin { rng.random_range(lmin..lmax) } else { lmin };
            let (s, c) = theta.sin_cos();
            let (ax, ay, bx, by) = (cx - half * c, cy - half * s, cx + half * c, cy + half * s);
            let inside = |x: f64, y: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;
            if inside(ax, ay) && inside(bx, by) {
                segments.push((lift(ax, ay), lift(bx, by)));
            }
        }
        Self {
            label,
            normal,
            offset,
            corners,
            segments,
            xi: Vector6::new(motion.t.x, motion.t.y, motion.t.z, motion.w.x, motion.w.y, motion.w.z),
            motion,
            ref_time,
            steps,
        }
    }

    fn active(&self, step: usize) -> bool {
        step >= self.steps.0 && self.steps.1.is_none_or(|v| step < v)
    }

    /// Camera-from-surface transform at time `tau`.
    fn pose(&self, tau: f64) -> Matrix4<f64> {
        inverse(&exp_se3(&(self.xi * (tau - self.ref_time))))
    }

    fn place(&self, tau: f64) -> Placed<'_> {
        let t = self.pose(tau);
        let normal = rotation(&t) * self.normal;
        Placed {
            surface: self,
            normal,
            offset: self.offset + normal.dot(&translation(&t)),
            cam_from_surface: t,
        }
    }
}

impl Placed<'_> {
    fn depth_along(&self, ray: &Vector3<f64>) -> Option<f64> {
        let z = self.offset / self.normal.dot(ray);
        (z.is_finite() && z > 0.0).then_some(z)
    }

    /// Whether the camera-frame point lies inside the patch outline.
    fn covers(&self, p_cam: &Vector3<f64>) -> bool {
        let r = rotation(&self.cam_from_surface);
        let p = r.transpose() * (p_cam - translation(&self.cam_from_surface));
        let c = &self.surface.corners;
        let m = &self.surface.normal;
        let signs: Vec<f64> = (0..4)
            .map(|i| m.dot(&(c[(i + 1) % 4] - c[i]).cross(&(p - c[i]))))
            .collect();
        signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
    }

    fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.cam_from_surface * p.push(1.0)).xyz()
    }
}

struct Event {
    t: f64,
    px: [f64; 2],
    n0: Vector2<f64>,
    n: f64,
    label: u32,
}

fn sample_slice(
    placed: &[Placed<'_>],
    spec: &SceneSpec,
    t_start: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let k = spec.intrinsics;
    let dt = spec.slice_duration;
    let project = |p: &Vector3<f64>| [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy];
    let mut events = Vec::new();
    for (si, s) in placed.iter().enumerate() {
        for (a, b) in &s.surface.segments {
            let (pa, pb) = (s.to_camera(a), s.to_camera(b));
            if pa.z <= 0.0 || pb.z <= 0.0 {
                continue;
            }
            let (qa, qb) = (project(&pa), project(&pb));
            let length = (qa[0] - qb[0]).hypot(qa[1] - qb[1]);
            let mean = spec.event_rate * length * dt;
            if !(mean > 0.0) {
                continue;
            }
            let count = Poisson::new(mean).map_or(0.0, |d| d.sample(rng)) as usize;
            let dir = pb - pa;
            for _ in 0..count {
                let u: f64 = rng.random();
                let flip = rng.random_bool(0.5);
                let t = t_start + rng.random::<f64>() * dt;
                let p = pa + dir * u;
                let q = project(&p);
                let px = [q[0].round(), q[1].round()];
                if px[0] < 0.0 || px[1] < 0.0 || px[0] > (spec.width - 1) as f64 || px[1] > (spec.height - 1) as f64 {
                    continue;
                }
                let x = k.to_calibrated(px[0], px[1]);
                let ray = Vector3::new(x.x, x.y, 1.0);
                let Some(z) = s.depth_along(&ray) else { continue };
                let occluded = placed.iter().enumerate().any(|(oi, o)| {
                    oi != si && o.depth_along(&ray).is_some_and(|zo| zo < z && o.covers(&(ray * zo)))
                });
                if occluded {
                    continue;
                }
                // image direction of the edge at the sampled point
                let (xp, yp) = (p.x / p.z, p.y / p.z);
                let e = Vector2::new(dir.x - xp * dir.z, dir.y - yp * dir.z);
                if e.norm() < 1e-12 {
                    continue;
                }
                let mut n0 = Vector2::new(-e.y, e.x).normalize();
                if flip {
                    n0 = -n0;
                }
                let n = flow_at(x, &s.surface.motion, 1.0 / z).dot(&n0);
                events.push(Event {
                    t,
                    px,
                    n0,
                    n,
                    label: s.surface.label,
                });
            }
        }
    }
    events
}

fn add_noise(events: &mut [Event], spec: &SceneSpec, rng: &mut ChaCha8Rng) {
    if events.is_empty() {
        return;
    }
    let rms = (events.iter().map(|e| e.n * e.n).sum::<f64>() / events.len() as f64).sqrt();
    if rms == 0.0 {
        return;
    }
    if spec.flow_noise > 0.0 {
        let noise = Normal::new(0.0, spec.flow_noise * rms).expect("finite sigma");
        events.iter_mut().for_each(|e| e.n += noise.sample(rng));
    }
    if spec.outlier_fraction > 0.0 {
        for e in events.iter_mut() {
            if rng.random_bool(spec.outlier_fraction) {
                e.n = rng.random_range(-3.0 * rms..3.0 * rms);
            }
        }
    }
}

/// Renders `steps` slices of the scene with full ground truth. The result is
/// a pure function of `(spec, steps, seed)`.
pub fn simulate(spec: &SceneSpec, steps: usize, seed: u64) -> Result<Recording> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = spec.slice_duration;
    let camera = MotionParams::new(Vector3::from(spec.camera.t), Vector3::from(spec.camera.w));
    let camera_xi = twist(&spec.camera.t, &spec.camera.w);

    let mut surfaces = Vec::new();
    for b in &spec.background {
        surfaces.push(Surface::new(0, &b.plane, &b.region, camera, 0.0, (0, None), spec, &mut rng));
    }
    for (i, o) in spec.objects.iter().enumerate() {
        let motion = MotionParams::new(Vector3::from(o.t), Vector3::from(o.w));
        let ref_time = o.appear_step as f64 * dt;
        let steps = (o.appear_step, o.vanish_step);
        surfaces.push(Surface::new(i as u32 + 1, &o.plane, &o.region, motion, ref_time, steps, spec, &mut rng));
    }

    let imu_noise = Normal::new(0.0, spec.imu_noise).expect("finite sigma");
    let mut slices = Vec::with_capacity(steps);
    for step in 0..steps {
        let t_start = step as f64 * dt;
        let placed: Vec<Placed<'_>> = surfaces
            .iter()
            .filter(|s| s.active(step))
            .map(|s| s.place(t_start))
            .collect();
        let mut events = sample_slice(&placed, spec, t_start, &mut rng);
        add_noise(&mut events, spec, &mut rng);
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let imu_w = [0, 1, 2].map(|i| {
            spec.camera.w[i] + if spec.imu_noise > 0.0 { imu_noise.sample(&mut rng) } else { 0.0 }
        });
        slices.push(Slice {
            t_start,
            t_end: (step + 1) as f64 * dt,
            imu_w,
            t: events.iter().map(|e| e.t).collect(),
            x: events.iter().map(|e| e.px[0]).collect(),
            y: events.iter().map(|e| e.px[1]).collect(),
            n: events.iter().map(|e| e.n).collect(),
            n0x: events.iter().map(|e| e.n0.x).collect(),
            n0y: events.iter().map(|e| e.n0.y).collect(),
            labels: Some(events.iter().map(|e| e.label).collect()),
        });
    }

    let world_from_camera = |tau: f64| exp_se3(&(camera_xi * tau));
    let boundaries: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let poses = GroundTruthPoses {
        camera: boundaries.iter().map(|&tau| world_from_camera(tau)).collect(),
        objects: surfaces
            .iter()
            .filter(|s| s.label > 0)
            .map(|s| {
                boundaries
                    .iter()
                    .map(|&tau| world_from_camera(tau) * s.pose(tau))
                    .collect()
            })
            .collect(),
    };
    let rec = Recording {
        intrinsics: spec.intrinsics,
        width: spec.width,
        height: spec.height,
        slices,
        poses: Some(poses),
    };
    rec.validate()?;
    Ok(rec)
}
