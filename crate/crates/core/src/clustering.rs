//! Event over-segmentation and residual-driven foreground/background
//! segregation.

use std::cmp::Ordering;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormalFlowSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
}

impl ClusterSet {
    /// Member indices of every cluster, in ascending event order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn non_empty(&self) -> usize {
        self.members().iter().filter(|m| !m.is_empty()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 30,
            max_iter: 100,
            tol: 1e-6,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub clusters: ClusterSet,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Lloyd's k-means with k-means++ seeding over row-major `features`.
///
/// Points are processed in lexicographic feature order, so the resulting
/// partition does not depend on the order of the input rows.
pub fn kmeans(features: &[f64], dim: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if dim == 0 || features.is_empty() {
        return Err(Error::EmptySlice);
    }
    if features.len() % dim != 0 {
        return Err(Error::Validation("feature buffer is not a multiple of dim".into()));
    }
    if params.k == 0 {
        return Err(Error::Validation("k must be positive".into()));
    }
    let n = features.len() / dim;
    let row = |i: usize| &features[i * dim..(i + 1) * dim];

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex_cmp(row(a), row(b)));
    let pts: Vec<&[f64]> = order.iter().map(|&i| row(i)).collect();

    let k = params.k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_plus_plus(&pts, k, &mut rng);

    let mut assign = vec![0usize; n];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        iterations += 1;
        let obj = assign_step(&pts, &centroids, &mut assign);
        objective.push(obj);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in pts.iter().zip(&assign) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        let mut moved = 0.0f64;
        for c in 0..k {
            // empty clusters keep their centroid
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if moved <= params.tol {
            break;
        }
    }
    let final_obj = assign_step(&pts, &centroids, &mut assign);
    objective.push(final_obj);

    // Recompute means for the final assignment so centroids are exact means.
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in pts.iter().zip(&assign) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }

    let mut labels = vec![0usize; n];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = assign[pos];
    }
    Ok(KMeansResult {
        clusters: ClusterSet {
            labels,
            k,
            centroids,
        },
        objective,
        iterations,
    })
}

fn seed_plus_plus(pts: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(pts[rng.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        let c = pts[next].to_vec();
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_step(pts: &[&[f64]], centroids: &[Vec<f64>], assign: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (p, a) in pts.iter().zip(assign.iter_mut()) {
        let mut best = f64::INFINITY;
        let mut idx = 0;
        for (c, cen) in centroids.iter().enumerate() {
            let d = sq_dist(p, cen);
            if d < best {
                best = d;
                idx = c;
            }
        }
        *a = idx;
        total += best;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverSegmentParams {
    pub k: usize,
    /// Weight of the flow part of the feature.
    pub lambda: f64,
    /// Converts calibrated normal flow (1/s) into feature units comparable to
    /// pixels, i.e. focal length times a reference time span.
    pub flow_scale: f64,
    pub kmeans: KMeansParams,
}

impl Default for OverSegmentParams {
    fn default() -> Self {
        Self {
            k: 30,
            lambda: 0.5,
            flow_scale: 1000.0,
            kmeans: KMeansParams::default(),
        }
    }
}

/// k-means over `[x, y, λ·s·n·n0x, λ·s·n·n0y]` with pixel coordinates.
pub fn over_segment(
    pixels: &[[f64; 2]],
    flow: &[NormalFlowSample],
    params: &OverSegmentParams,
) -> Result<ClusterSet> {
    if pixels.is_empty() {
        return Err(Error::EmptySlice);
    }
    if pixels.len() != flow.len() {
        return Err(Error::length_mismatch("pixels", pixels.len(), "flow", flow.len()));
    }
    if params.k < 2 {
        return Err(Error::Validation("over-segmentation needs k >= 2".into()));
    }
    let scale = params.lambda * params.flow_scale;
    let features: Vec<f64> = pixels
        .iter()
        .zip(flow)
        .flat_map(|(p, s)| {
            let v = s.flow_vector() * scale;
            [p[0], p[1], v.x, v.y]
        })
        .collect();
    let km = KMeansParams {
        k: params.k,
        ..params.kmeans
    };
    Ok(kmeans(&features, 4, &km)?.clusters)
}

/// Smoothed residual magnitudes on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major, count-normalized; zero where no event contributes.
    pub values: Vec<f64>,
}

impl ResidualGrid {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Grid cell of a pixel coordinate, clamped into the sensor.
pub fn pixel_cell(p: [f64; 2], width: usize, height: usize) -> (usize, usize) {
    let clamp = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
    (clamp(p[0], width), clamp(p[1], height))
}

/// Truncated Gaussian taps `exp(-i²/2σ²)` for `i` in `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn convolve_separable(grid: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut tmp = vec![0.0; grid.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let xx = x as i64 + k as i64 - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += w * grid[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; grid.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let yy = y as i64 + k as i64 - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += w * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Splats `|residual|` and event counts onto the pixel grid, blurs both with
/// the same truncated Gaussian and divides, then samples back per event.
pub fn smooth_residuals(
    pixels: &[[f64; 2]],
    residuals: &[f64],
    sigma: f64,
    width: usize,
    height: usize,
) -> Result<(ResidualGrid, Vec<f64>)> {
    if pixels.len() != residuals.len() {
        return Err(Error::length_mismatch(
            "pixels",
            pixels.len(),
            "residuals",
            residuals.len(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::Validation("smoothing sigma must be positive".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Validation("grid must be non-empty".into()));
    }
    let mut mass = vec![0.0; width * height];
    let mut count = vec![0.0; width * height];
    let cells: Vec<(usize, usize)> = pixels
        .iter()
        .map(|&p| pixel_cell(p, width, height))
        .collect();
    for (&(x, y), r) in cells.iter().zip(residuals) {
        mass[y * width + x] += r.abs();
        count[y * width + x] += 1.0;
    }
    let taps = gaussian_taps(sigma);
    let mass = convolve_separable(&mass, width, height, &taps);
    let count = convolve_separable(&count, width, height, &taps);
    let values: Vec<f64> = mass
        .iter()
        .zip(&count)
        .map(|(m, c)| if *c > 0.0 { m / c } else { 0.0 })
        .collect();
    let per_event = cells.iter().map(|&(x, y)| values[y * width + x]).collect();
    Ok((
        ResidualGrid {
            width,
            height,
            values,
        },
        per_event,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Segregation {
    pub background: Vec<usize>,
    pub foreground: Vec<usize>,
}

/// Two-cluster split of scalar residuals; the lower-centered cluster is
/// background. Solved exactly on the sorted values.
pub fn segregate_by_residual(smoothed: &[f64]) -> Segregation {
    let n = smoothed.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| smoothed[i]).collect();
    if n < 2 || sorted[n - 1] - sorted[0] <= 1e-12 * sorted[n - 1].abs().max(1.0) {
        return Segregation {
            background: (0..n).collect(),
            foreground: Vec::new(),
        };
    }

    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |lo: usize, hi: usize| {
        let m = (hi - lo) as f64;
        let s = prefix[hi] - prefix[lo];
        (prefix_sq[hi] - prefix_sq[lo]) - s * s / m
    };
    let mut best = (f64::INFINITY, 0);
    for split in 1..n {
        if sorted[split] == sorted[split - 1] {
            continue;
        }
        let cost = sse(0, split) + sse(split, n);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let split = best.1;
    let mut background: Vec<usize> = order[..split].to_vec();
    let mut foreground: Vec<usize> = order[split..].to_vec();
    background.sort_unstable();
    foreground.sort_unstable();
    Segregation {
        background,
        foreground,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImagePoint;
    use nalgebra::Vector2;

    fn sample(n: f64, dir: (f64, f64)) -> NormalFlowSample {
        NormalFlowSample::new(ImagePoint::new(0.0, 0.0), Vector2::new(dir.0, dir.1), n).unwrap()
    }

    fn blobs() -> (Vec<[f64; 2]>, Vec<NormalFlowSample>) {
        let mut px = Vec::new();
        let mut flow = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                px.push([10.0 + i as f64, 10.0 + j as f64]);
                flow.push(sample(0.5, (1.0, 0.0)));
                px.push([80.0 + i as f64, 50.0 + j as f64]);
                flow.push(sample(0.5, (0.0, 1.0)));
            }
        }
        (px, flow)
    }

    #[test]
    fn two_blobs_split_exactly() {
        let (px, flow) = blobs();
        let params = OverSegmentParams {
            k: 2,
            ..Default::default()
        };
        let c = over_segment(&px, &flow, &params).unwrap();
        let a = c.labels[0];
        let b = c.labels[1];
        assert_ne!(a, b);
        for (i, &l) in c.labels.iter().enumerate() {
            assert_eq!(l, if i % 2 == 0 { a } else { b });
        }
    }

    #[test]
    fn duplicates_share_labels_and_k_bounds_clusters() {
        let (mut px, mut flow) = blobs();
        px.push(px[3]);
        flow.push(flow[3]);
        let c = over_segment(&px, &flow, &OverSegmentParams::default()).unwrap();
        assert_eq!(c.labels[3], *c.labels.last().unwrap());
        assert!(c.non_empty() <= 30);
        assert!(c.labels.iter().all(|&l| l < c.k));
    }

    #[test]
    fn empty_slice_is_an_error() {
        assert!(matches!(
            over_segment(&[], &[], &OverSegmentParams::default()),
            Err(Error::EmptySlice)
        ));
    }

    #[test]
    fn centroids_are_member_means_and_objective_decreases() {
        let (px, flow) = blobs();
        let feats: Vec<f64> = px
            .iter()
            .zip(&flow)
            .flat_map(|(p, s)| [p[0], p[1], s.n * 3.0])
            .collect();
        let res = kmeans(&feats, 3, &KMeansParams { k: 5, ..Default::default() }).unwrap();
        for w in res.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(res.iterations <= 100);
        for (c, members) in res.clusters.members().iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            for d in 0..3 {
                let mean = members.iter().map(|&i| feats[i * 3 + d]).sum::<f64>()
                    / members.len() as f64;
                assert!((mean - res.clusters.centroids[c][d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_event_smoothing_returns_its_residual() {
        let (grid, per_event) = smooth_residuals(&[[4.0, 4.0]], &[-0.7], 0.3, 10, 10).unwrap();
        assert!((per_event[0] - 0.7).abs() < 1e-6);
        assert!(grid.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn constant_field_is_preserved() {
        let px: Vec<[f64; 2]> = (0..400).map(|i| [(i % 20) as f64, (i / 20) as f64]).collect();
        let res = vec![0.25; px.len()];
        let (_, out) = smooth_residuals(&px, &res, 3.0, 20, 20).unwrap();
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn segregation_examples() {
        let mut r = vec![0.01; 100];
        r.extend(vec![1.0; 20]);
        let s = segregate_by_residual(&r);
        assert_eq!(s.foreground, (100..120).collect::<Vec<_>>());
        assert_eq!(s.background.len(), 100);

        let flat = segregate_by_residual(&[0.3; 50]);
        assert_eq!(flat.background.len(), 50);
        assert!(flat.foreground.is_empty());

        assert_eq!(segregate_by_residual(&[0.5]).background, vec![0]);
    }
}
