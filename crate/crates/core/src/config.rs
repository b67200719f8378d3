//! Run configuration, read from TOML. Every section and key is optional;
//! missing values take the defaults below. See `docs/CONFIG.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::{MapParams, MatchParams, SvmParams};
use crate::clustering::{KMeansParams, OverSegmentParams};
use crate::error::{Error, Result};
use crate::merging::MergeParams;
use crate::tracking::TrackerParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed of every stochastic stage.
    pub seed: u64,
    /// Leading steps whose coarse background comes from residuals only.
    pub init_frames: usize,
    /// Residual smoothing kernel width, px.
    pub smoothing_sigma: f64,
    /// Foreground segments with fewer events are returned to the background.
    pub min_segment_events: usize,
    /// Bound on `|x|` and `|y|` of calibrated event coordinates.
    pub fov_limit: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            init_frames: 2,
            smoothing_sigma: 3.0,
            min_segment_events: 40,
            fov_limit: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub lambda: f64,
    pub flow_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let o = OverSegmentParams::default();
        Self {
            k: o.k,
            lambda: o.lambda,
            flow_scale: o.flow_scale,
            max_iter: o.kmeans.max_iter,
            tol: o.kmeans.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub clustering: ClusteringConfig,
    pub svm: SvmParams,
    pub map: MapParams,
    pub matching: MatchParams,
    pub merge: MergeParams,
    pub tracker: TrackerParams,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn over_segment_params(&self) -> OverSegmentParams {
        let c = &self.clustering;
        OverSegmentParams {
            k: c.k,
            lambda: c.lambda,
            flow_scale: c.flow_scale,
            kmeans: KMeansParams {
                k: c.k,
                max_iter: c.max_iter,
                tol: c.tol,
                seed: self.pipeline.seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let p = &self.pipeline;
        if !(p.smoothing_sigma > 0.0) {
            return bad("pipeline.smoothing_sigma must be positive");
        }
        if !(p.fov_limit > 0.0) {
            return bad("pipeline.fov_limit must be positive");
        }
        if self.clustering.k < 2 || self.clustering.max_iter == 0 {
            return bad("clustering.k must be at least 2 and max_iter positive");
        }
        if !(self.clustering.lambda >= 0.0 && self.clustering.flow_scale >= 0.0) {
            return bad("clustering weights must be non-negative");
        }
        let m = &self.map;
        if !(0.0 <= m.alpha_min && m.alpha_min <= m.alpha_max && m.alpha_max <= 1.0) || m.histogram_block == 0 {
            return bad("map needs 0 <= alpha_min <= alpha_max <= 1 and a positive block");
        }
        if !(self.matching.radius >= 0.0 && self.matching.warp_depth > 0.0) {
            return bad("matching radius must be non-negative and warp_depth positive");
        }
        if !(self.svm.c > 0.0 && self.svm.search_min_step_deg > 0.0 && self.svm.center_spacing_deg > 0.0) {
            return bad("svm c, search_min_step_deg and center_spacing_deg must be positive");
        }
        let t = &self.tracker;
        if !(t.q >= 0.0 && t.r > 0.0 && t.gate >= 0.0 && t.initial_velocity_var > 0.0) {
            return bad("tracker noise terms must be positive");
        }
        Ok(())
    }
}
