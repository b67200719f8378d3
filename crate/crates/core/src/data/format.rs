//! Little-endian single-file container; the byte layout is documented in
//! `docs/FORMAT.md`.

use std::path::Path;

use nalgebra::Matrix4;

use super::{GroundTruthPoses, Recording, Slice};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

pub const MAGIC: &[u8; 8] = b"NFSEGREC";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_LABELS: u32 = 1;
const FLAG_CAMERA_POSES: u32 = 1 << 1;
const FLAG_OBJECT_POSES: u32 = 1 << 2;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn pose(&mut self, t: &Matrix4<f64>) {
        // top 3x4 block, column-major
        for c in 0..4 {
            for r in 0..3 {
                self.f64(t[(r, c)]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} length overflows")))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what} length overflows")))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn pose(&mut self, what: &str) -> Result<Matrix4<f64>> {
        let v = self.f64s(12, what)?;
        let mut t = Matrix4::identity();
        for c in 0..4 {
            for r in 0..3 {
                t[(r, c)] = v[c * 3 + r];
            }
        }
        Ok(t)
    }
}

/// Serializes a validated recording.
pub fn encode_recording(rec: &Recording) -> Result<Vec<u8>> {
    rec.validate()?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let mut flags = 0;
    if rec.has_labels() {
        flags |= FLAG_LABELS;
    }
    if rec.poses.is_some() {
        flags |= FLAG_CAMERA_POSES | FLAG_OBJECT_POSES;
    }
    w.u32(flags);
    w.u32(rec.width);
    w.u32(rec.height);
    let k = rec.intrinsics;
    w.f64s(&[k.fx, k.fy, k.cx, k.cy]);
    w.u32(rec.slices.len() as u32);
    let n_objects = rec.poses.as_ref().map_or(0, |p| p.objects.len());
    w.u32(n_objects as u32);
    for s in &rec.slices {
        w.f64(s.t_start);
        w.f64(s.t_end);
        w.f64s(&s.imu_w);
        w.u64(s.len() as u64);
        for col in [&s.t, &s.x, &s.y, &s.n, &s.n0x, &s.n0y] {
            w.f64s(col);
        }
        if let Some(l) = &s.labels {
            l.iter().for_each(|&v| w.u32(v));
        }
    }
    if let Some(p) = &rec.poses {
        p.camera.iter().for_each(|t| w.pose(t));
        p.objects.iter().flatten().for_each(|t| w.pose(t));
    }
    Ok(w.0)
}

/// Parses and validates a recording; trailing bytes are an error.
pub fn decode_recording(buf: &[u8]) -> Result<Recording> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic header".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let flags = r.u32("flags")?;
    if flags & !(FLAG_LABELS | FLAG_CAMERA_POSES | FLAG_OBJECT_POSES) != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
    }
    let width = r.u32("width")?;
    let height = r.u32("height")?;
    let intrinsics = Intrinsics {
        fx: r.f64("fx")?,
        fy: r.f64("fy")?,
        cx: r.f64("cx")?,
        cy: r.f64("cy")?,
    };
    let n_slices = r.u32("slice count")? as usize;
    let n_objects = r.u32("object count")? as usize;
    let mut slices = Vec::with_capacity(n_slices.min(1 << 16));
    for i in 0..n_slices {
        let t_start = r.f64("slice start")?;
        let t_end = r.f64("slice end")?;
        let imu = r.f64s(3, "imu rate")?;
        let n = usize::try_from(r.u64("event count")?)
            .map_err(|_| Error::Format(format!("slice {i}: event count overflows")))?;
        let remaining = buf.len() - r.pos;
        if n > remaining / 48 {
            return Err(Error::Format(format!("slice {i}: event count {n} exceeds file size")));
        }
        let t = r.f64s(n, "timestamps")?;
        let x = r.f64s(n, "x")?;
        let y = r.f64s(n, "y")?;
        let nf = r.f64s(n, "normal flow")?;
        let n0x = r.f64s(n, "n0x")?;
        let n0y = r.f64s(n, "n0y")?;
        let labels = if flags & FLAG_LABELS != 0 {
            Some(r.u32s(n, "labels")?)
        } else {
            None
        };
        slices.push(Slice {
            t_start,
            t_end,
            imu_w: [imu[0], imu[1], imu[2]],
            t,
            x,
            y,
            n: nf,
            n0x,
            n0y,
            labels,
        });
    }
    let poses = if flags & FLAG_CAMERA_POSES != 0 {
        let camera = (0..=n_slices)
            .map(|_| r.pose("camera pose"))
            .collect::<Result<Vec<_>>>()?;
        let objects = if flags & FLAG_OBJECT_POSES != 0 {
            (0..n_objects)
                .map(|_| (0..=n_slices).map(|_| r.pose("object pose")).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Some(GroundTruthPoses { camera, objects })
    } else {
        None
    };
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let rec = Recording {
        intrinsics,
        width,
        height,
        slices,
        poses,
    };
    rec.validate().map_err(|e| match e {
        Error::Validation(m) => Error::Format(m),
        other => Error::Format(other.to_string()),
    })?;
    Ok(rec)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_recording(rec)?)?;
    Ok(())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    decode_recording(&std::fs::read(path)?)
}
