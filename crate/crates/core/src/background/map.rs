use serde::{Deserialize, Serialize};

use crate::clustering::pixel_cell;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Events mark every pixel within this Chebyshev radius.
    pub splat_radius: usize,
    /// Block size of the similarity histograms.
    pub histogram_block: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            alpha_min: 0.05,
            alpha_max: 0.5,
            splat_radius: 2,
            histogram_block: 8,
        }
    }
}

/// Persistent background occupancy at sensor resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMap {
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[0, 1]`.
    pub grid: Vec<f64>,
    pub alpha_last: f64,
}

impl BackgroundMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid: vec![0.0; width * height],
            alpha_last: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.grid.iter().all(|&v| v == 0.0)
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        let (x, y) = pixel_cell(p, self.width, self.height);
        self.grid[y * self.width + x]
    }

    /// Binary occupancy of `points`, each dilated by `radius`.
    pub fn rasterize(&self, points: &[[f64; 2]], radius: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        let r = radius as i64;
        for &p in points {
            let (cx, cy) = pixel_cell(p, self.width, self.height);
            for dy in -r..=r {
                for dx in -r..=r {
                    let x = cx as i64 + dx;
                    let y = cy as i64 + dy;
                    if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                        out[y as usize * self.width + x as usize] = 1.0;
                    }
                }
            }
        }
        out
    }

    /// Replaces the grid by the occupancy of `points`; used to start a map.
    pub fn seed(&mut self, points: &[[f64; 2]], params: &MapParams) {
        self.grid = self.rasterize(points, params.splat_radius);
        self.alpha_last = 1.0;
    }

    /// Block sums of a grid at `block`-pixel resolution.
    pub fn histogram(&self, grid: &[f64], block: usize) -> Vec<f64> {
        let bw = self.width.div_ceil(block);
        let bh = self.height.div_ceil(block);
        let mut hist = vec![0.0; bw * bh];
        for y in 0..self.height {
            for x in 0..self.width {
                hist[(y / block) * bw + x / block] += grid[y * self.width + x];
            }
        }
        hist
    }

    /// Mean map value under `points`.
    pub fn support(&self, points: &[[f64; 2]]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        points.iter().map(|&p| self.value_at(p)).sum::<f64>() / points.len() as f64
    }
}

/// EMA update `grid ← (1−α) grid + α raster` with `α` linear in similarity.
pub fn update_map(
    map: &BackgroundMap,
    background: &[[f64; 2]],
    similarity: f64,
    params: &MapParams,
) -> BackgroundMap {
    let s = similarity.clamp(0.0, 1.0);
    let alpha = params.alpha_min + (params.alpha_max - params.alpha_min) * s;
    let raster = map.rasterize(background, params.splat_radius);
    let grid = map
        .grid
        .iter()
        .zip(&raster)
        .map(|(g, r)| ((1.0 - alpha) * g + alpha * r).clamp(0.0, 1.0))
        .collect();
    BackgroundMap {
        width: map.width,
        height: map.height,
        grid,
        alpha_last: alpha,
    }
}

/// Cosine similarity of block histograms of the map and of the candidate's
/// occupancy.
pub fn background_similarity(map: &BackgroundMap, candidate: &[[f64; 2]], params: &MapParams) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let raster = map.rasterize(candidate, params.splat_radius);
    let a = map.histogram(&map.grid, params.histogram_block);
    let b = map.histogram(&raster, params.histogram_block);
    cosine(&a, &b)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}
