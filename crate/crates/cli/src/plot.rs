//! PNG output for `nfseg plot`. Charts carry no text: ground truth is blue,
//! the estimate red, the zero line black and grid lines gray.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};
use nfseg::data::Recording;
use nfseg::eval::EvalReport;
use nfseg::pipeline::RunOutput;

use crate::raster::{dot, label_color, line, BLACK, GRID, WHITE};

const GT: Rgb<u8> = Rgb([31, 90, 200]);
const EST: Rgb<u8> = Rgb([215, 40, 40]);
const W: u32 = 640;
const H: u32 = 320;
const MARGIN: f64 = 24.0;

/// One series: `(frame, value)` with gaps for missing values.
type Series = Vec<(usize, Option<f64>)>;

fn chart(gt: &Series, est: &Series) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, WHITE);
    let values: Vec<f64> = gt
        .iter()
        .chain(est)
        .filter_map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() {
        (lo, hi) = (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-6);
    (lo, hi) = (lo - pad, hi + pad);
    let frames: Vec<usize> = gt.iter().chain(est).map(|(k, _)| *k).collect();
    let f0 = frames.iter().copied().min().unwrap_or(0) as f64;
    let f1 = (frames.iter().copied().max().unwrap_or(0) as f64).max(f0 + 1.0);

    let (x0, x1) = (MARGIN, W as f64 - MARGIN);
    let (y0, y1) = (MARGIN, H as f64 - MARGIN);
    let px = |k: f64| x0 + (k - f0) / (f1 - f0) * (x1 - x0);
    let py = |v: f64| y1 - (v - lo) / (hi - lo) * (y1 - y0);

    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        line(&mut img, (x0, y), (x1, y), GRID, 1);
    }
    if f1 - f0 <= 60.0 {
        for k in f0 as usize..=f1 as usize {
            line(&mut img, (px(k as f64), y0), (px(k as f64), y1), GRID, 1);
        }
    }
    if lo < 0.0 && hi > 0.0 {
        line(&mut img, (x0, py(0.0)), (x1, py(0.0)), BLACK, 1);
    }
    for (a, b) in [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))] {
        line(&mut img, a, b, BLACK, 1);
    }

    for (series, color) in [(gt, GT), (est, EST)] {
        let mut last: Option<(f64, f64)> = None;
        for &(k, v) in series {
            match v.filter(|v| v.is_finite()) {
                Some(v) => {
                    let p = (px(k as f64), py(v));
                    if let Some(q) = last {
                        line(&mut img, q, p, color, 2);
                    }
                    dot(&mut img, p, 2, color);
                    last = Some(p);
                }
                None => last = None,
            }
        }
    }
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Per-object ΔX/ΔY charts and, when present, per-axis camera velocity
/// charts. Returns the number of files written.
pub fn motion_charts(report: &EvalReport, dir: &Path) -> Result<usize> {
    let mut written = 0;
    for s in &report.object_motion {
        for (axis, name) in [(0, "dx"), (1, "dy")] {
            let gt: Series = s.frames.iter().map(|f| (f.index, Some(f.gt[axis]))).collect();
            let est: Series = s.frames.iter().map(|f| (f.index, f.est.map(|e| e[axis]))).collect();
            save(&chart(&gt, &est), &dir.join(format!("object_{}_{name}.png", s.object)))?;
            written += 1;
        }
    }
    if report.frames.iter().any(|f| f.velocity_gt.is_some()) {
        for (axis, name) in [(0, "x"), (1, "y"), (2, "z")] {
            let gt: Series = report.frames.iter().map(|f| (f.index, f.velocity_gt.map(|v| v[axis]))).collect();
            let est: Series = report.frames.iter().map(|f| (f.index, f.velocity_est.map(|v| v[axis]))).collect();
            save(&chart(&gt, &est), &dir.join(format!("velocity_{name}.png")))?;
            written += 1;
        }
    }
    Ok(written)
}

/// One image per slice: predicted labels, with the ground truth on the left
/// when the recording has labels. Failed steps are skipped.
pub fn overlays(rec: &Recording, run: &RunOutput, dir: &Path) -> Result<usize> {
    if run.steps.len() != rec.slices.len() {
        bail!(
            "length mismatch: run steps has {} entries but recording slices has {}",
            run.steps.len(),
            rec.slices.len()
        );
    }
    let (w, h) = (rec.width, rec.height);
    let panels = if rec.has_labels() { 2 } else { 1 };
    let mut written = 0;
    for (k, (slice, step)) in rec.slices.iter().zip(&run.steps).enumerate() {
        let Some(out) = &step.output else { continue };
        if out.labels.len() != slice.len() {
            bail!(
                "length mismatch at slice {k}: predicted labels has {} entries but slice events has {}",
                out.labels.len(),
                slice.len()
            );
        }
        let mut img = RgbImage::from_pixel(w * panels, h, Rgb([245, 245, 245]));
        let mut paint = |offset: u32, labels: &[u32]| {
            for ((&x, &y), &l) in slice.x.iter().zip(&slice.y).zip(labels) {
                let (x, y) = (x as u32 + offset, y as u32);
                if x < img.width() && y < img.height() {
                    img.put_pixel(x, y, label_color(l));
                }
            }
        };
        if let Some(gt) = &slice.labels {
            paint(0, gt);
        }
        paint((panels - 1) * w, &out.labels);
        if panels == 2 {
            line(&mut img, (w as f64, 0.0), (w as f64, h as f64 - 1.0), BLACK, 1);
        }
        save(&img, &dir.join(format!("segmentation_{k:04}.png")))?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_marks_both_series() {
        let gt: Series = (0..5).map(|k| (k, Some(k as f64))).collect();
        let est: Series = (0..5).map(|k| (k, (k != 2).then_some(-(k as f64)))).collect();
        let img = chart(&gt, &est);
        assert!(img.pixels().any(|p| *p == GT));
        assert!(img.pixels().any(|p| *p == EST));
    }

    #[test]
    fn chart_survives_constant_and_empty_series() {
        let flat: Series = vec![(3, Some(0.5))];
        chart(&flat, &vec![(3, None)]);
        chart(&Vec::new(), &Vec::new());
    }
}
