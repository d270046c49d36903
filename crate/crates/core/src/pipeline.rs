//! Three-level coarse-to-fine depth estimation.
//!
//! Level 0 is the coarsest. Each level sweeps its hypotheses through the
//! plane-sweep cost volume and regularizes the result with three BP layers:
//! two on spatially pooled copies of the level's cost volume (factor 2 and 4)
//! and a final one at the level's own resolution. The final layer's unaries
//! are a weighted sum of the full-resolution softmax scores and the upsampled
//! beliefs of the pooled layers. Later levels refine per-pixel hypotheses
//! around the upscaled previous estimate, spaced by half the expected depth
//! error.

use serde::{Deserialize, Serialize};

use crate::bp::{bp_forward, normalization_factor, NormalizationContext, PairwiseParams};
use crate::costvol::{build_cost_volume, extract_features_scaled, FeatureView, DEFAULT_SENTINEL};
use crate::error::{Error, Result};
use crate::geometry::{baseline, BaselineMode, CameraModel, ViewSet};
use crate::raster::BilinearTap;
use crate::volumes::{
    downsample_hypotheses, downsample_volume, soft_argmax_depth, temperature_softmax, upsample_volume,
    weighted_combine, DepthMap, HypothesisVolume, ScoreVolume,
};

pub const LEVELS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Linear,
    #[default]
    InverseDepth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpscaleMode {
    Bilinear,
    /// Keeps depth discontinuities sharp, so refined windows straddle one surface.
    #[default]
    Nearest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Hypothesis count per level, coarsest first. Refined levels need even counts.
    pub hypotheses_per_level: [usize; LEVELS],
    /// Image downsampling factor per level, coarsest first.
    pub level_scales: [usize; LEVELS],
    pub initial_sampling: SamplingMode,
    /// Softmax temperatures of the three BP layers inside a level
    /// (full resolution, pooled by 2, pooled by 4).
    pub temperatures: [f64; 3],
    /// Weights of the full-resolution scores and the two upsampled pooled beliefs.
    pub combine_weights: [f64; 3],
    pub loss_weights: [f64; LEVELS],
    pub huber_epsilon: f64,
    pub upscale: UpscaleMode,
    pub sentinel: f64,
    /// Refined hypotheses are kept above `depth_floor_ratio * depth_min`.
    pub depth_floor_ratio: f64,
    pub pairwise: [PairwiseParams; LEVELS],
    pub sigma_p: f64,
    pub baseline_mode: BaselineMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hypotheses_per_level: [96, 32, 8],
            level_scales: [4, 2, 1],
            initial_sampling: SamplingMode::InverseDepth,
            temperatures: [0.03; 3],
            combine_weights: [1.0 / 3.0; 3],
            loss_weights: [1.0; LEVELS],
            huber_epsilon: 1.0,
            upscale: UpscaleMode::Nearest,
            sentinel: DEFAULT_SENTINEL,
            depth_floor_ratio: 0.1,
            pairwise: [PairwiseParams::default(); LEVELS],
            sigma_p: 1.0,
            baseline_mode: BaselineMode::Mean,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (l, &p) in self.hypotheses_per_level.iter().enumerate() {
            if p < 2 || p > u16::MAX as usize {
                return Err(Error::param(format!("level {l}: need at least 2 hypotheses, got {p}")));
            }
            if l > 0 && p % 2 != 0 {
                return Err(Error::param(format!(
                    "level {l}: refined levels need an even hypothesis count, got {p}"
                )));
            }
        }
        if self.level_scales.contains(&0) {
            return Err(Error::param("level scales must be positive"));
        }
        if self.level_scales.windows(2).any(|w| w[0] % w[1] != 0 || w[0] < w[1]) {
            return Err(Error::param(format!(
                "level scales {:?} must be non-increasing and nested",
                self.level_scales
            )));
        }
        if self.temperatures.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::param("temperatures must be positive and finite"));
        }
        if self
            .combine_weights
            .iter()
            .chain(&self.loss_weights)
            .any(|w| !w.is_finite())
        {
            return Err(Error::param("combine and loss weights must be finite"));
        }
        if !(self.huber_epsilon.is_finite() && self.huber_epsilon > 0.0) {
            return Err(Error::param("huber epsilon must be positive"));
        }
        if !(self.sentinel.is_finite() && self.sentinel > 0.0) {
            return Err(Error::param("sentinel must be positive"));
        }
        if !(self.depth_floor_ratio > 0.0 && self.depth_floor_ratio < 1.0) {
            return Err(Error::param("depth floor ratio must lie in (0, 1)"));
        }
        if !(self.sigma_p.is_finite() && self.sigma_p > 0.0) {
            return Err(Error::param("sigma_p must be positive"));
        }
        Ok(())
    }
}

/// The same `P` depths at every pixel, spanning the camera's depth range.
pub fn initial_hypotheses(
    cam: &CameraModel,
    labels: usize,
    height: usize,
    width: usize,
    mode: SamplingMode,
) -> Result<HypothesisVolume> {
    HypothesisVolume::uniform(&initial_ladder(cam, labels, mode)?, height, width)
}

fn initial_ladder(cam: &CameraModel, labels: usize, mode: SamplingMode) -> Result<Vec<f64>> {
    if labels < 2 {
        return Err(Error::usage(format!("need at least 2 hypotheses, got {labels}")));
    }
    let (lo, hi) = (cam.depth_min(), cam.depth_max());
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::usage(format!("invalid depth range [{lo}, {hi}]")));
    }
    let last = (labels - 1) as f64;
    let mut ladder: Vec<f64> = (0..labels)
        .map(|p| {
            let t = p as f64 / last;
            match mode {
                SamplingMode::Linear => lo + (hi - lo) * t,
                SamplingMode::InverseDepth => 1.0 / (1.0 / lo + (1.0 / hi - 1.0 / lo) * t),
            }
        })
        .collect();
    ladder[0] = lo;
    ladder[labels - 1] = hi;
    Ok(ladder)
}

/// Per-pixel hypothesis spacing; invalid where the depth estimate is invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMap {
    pub height: usize,
    pub width: usize,
    pub interval: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Half the expected depth error at each estimated depth.
pub fn auto_intervals(d_hat: &DepthMap, ctx: &NormalizationContext) -> IntervalMap {
    let n = d_hat.height() * d_hat.width();
    let mut interval = vec![0.0; n];
    let mut valid = vec![false; n];
    for (k, (&d, &ok)) in d_hat.depths().iter().zip(d_hat.valid_mask()).enumerate() {
        if ok {
            if let Ok(e) = normalization_factor(d, ctx) {
                interval[k] = e / 2.0;
                valid[k] = e > 0.0 && e.is_finite();
            }
        }
    }
    IntervalMap {
        height: d_hat.height(),
        width: d_hat.width(),
        interval,
        valid,
    }
}

/// Refined hypotheses and the pixels that received a usable window.
#[derive(Clone, Debug)]
pub struct RefinedHypotheses {
    pub volume: HypothesisVolume,
    /// False where the window collapsed; those pixels carry `fallback` instead.
    pub valid: Vec<bool>,
}

/// `H(p) = d_hat - (P/2 - p) * I` per pixel.
///
/// Entries at or below `depth_floor` are replaced by an even ladder from the
/// floor up to the first entry above it, so `H(P/2) = d_hat` still holds.
/// Pixels with an invalid estimate, a non-positive interval or `d_hat` at or
/// below the floor get the `fallback` ladder and are flagged invalid.
pub fn refine_hypotheses(
    d_hat: &DepthMap,
    intervals: &IntervalMap,
    labels: usize,
    depth_floor: f64,
    fallback: &[f64],
) -> Result<RefinedHypotheses> {
    if labels < 2 || !labels.is_multiple_of(2) {
        return Err(Error::usage(format!(
            "hypothesis count must be even and >= 2, got {labels}"
        )));
    }
    if fallback.len() != labels {
        return Err(Error::usage("fallback ladder length differs from the hypothesis count"));
    }
    let (h, w) = (d_hat.height(), d_hat.width());
    if intervals.height != h || intervals.width != w {
        return Err(Error::usage("interval map and depth map differ in size"));
    }
    let plane = h * w;
    let half = labels / 2;
    let mut depths = vec![0.0; labels * plane];
    let mut valid = vec![false; plane];
    let mut ladder = vec![0.0; labels];
    for px in 0..plane {
        let d = d_hat.depths()[px];
        let step = intervals.interval[px];
        let ok = d_hat.valid_mask()[px]
            && intervals.valid[px]
            && d.is_finite()
            && step.is_finite()
            && step > 0.0
            && d > depth_floor;
        if ok {
            for (p, v) in ladder.iter_mut().enumerate() {
                *v = d - (half as f64 - p as f64) * step;
            }
            ladder[half] = d;
            let first_above = ladder.iter().position(|&v| v > depth_floor).unwrap_or(half);
            if first_above > 0 {
                let top = ladder[first_above];
                for (p, v) in ladder.iter_mut().enumerate().take(first_above) {
                    *v = depth_floor + (top - depth_floor) * p as f64 / first_above as f64;
                }
            }
            valid[px] = ladder.windows(2).all(|w| w[1] > w[0]);
        }
        let src = if valid[px] { &ladder[..] } else { fallback };
        for p in 0..labels {
            depths[p * plane + px] = src[p];
        }
    }
    Ok(RefinedHypotheses {
        volume: HypothesisVolume::new(labels, h, w, depths)?,
        valid,
    })
}

/// Resample a depth map to a new size with pixel-center alignment. Bilinear
/// mode renormalizes over valid supports; pixels without any are invalid.
pub fn upscale_depth(d: &DepthMap, height: usize, width: usize, mode: UpscaleMode) -> Result<DepthMap> {
    let (sh, sw) = (d.height(), d.width());
    let ry = sh as f64 / height as f64;
    let rx = sw as f64 / width as f64;
    let n = height * width;
    let mut depth = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..height {
        let y = ((i as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        for j in 0..width {
            let x = ((j as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let k = i * width + j;
            match mode {
                UpscaleMode::Nearest => {
                    let (si, sj) = (y.round() as usize, x.round() as usize);
                    depth[k] = d.get(si, sj);
                    valid[k] = d.is_valid(si, sj);
                }
                UpscaleMode::Bilinear => {
                    let tap =
                        BilinearTap::new(x, y, sh, sw).ok_or_else(|| Error::usage("upscale sample outside source"))?;
                    let weights = [
                        (1.0 - tap.fx) * (1.0 - tap.fy),
                        tap.fx * (1.0 - tap.fy),
                        (1.0 - tap.fx) * tap.fy,
                        tap.fx * tap.fy,
                    ];
                    let mut acc = 0.0;
                    let mut mass = 0.0;
                    for (idx, wgt) in tap.indices(sw).iter().zip(weights) {
                        if wgt > 0.0 && d.valid_mask()[*idx] {
                            acc += wgt * d.depths()[*idx];
                            mass += wgt;
                        }
                    }
                    if mass > 0.0 {
                        depth[k] = acc / mass;
                        valid[k] = true;
                    }
                }
            }
        }
    }
    DepthMap::new(height, width, depth, valid)
}

/// Normalization context for a reference camera at its own resolution.
pub fn normalization_context(
    views: &ViewSet,
    reference: &CameraModel,
    cfg: &PipelineConfig,
) -> Result<NormalizationContext> {
    let sources: Vec<&CameraModel> = views.source_cameras().collect();
    let b = baseline(&views.reference.camera, &sources, cfg.baseline_mode)?;
    if b <= 0.0 {
        return Err(Error::usage("degenerate baseline: sources coincide with the reference"));
    }
    NormalizationContext::new(reference.focal(), b, cfg.sigma_p)
}

/// Per-level feature views (reference first) at `level_scales[level]`.
pub fn level_features(views: &ViewSet, cfg: &PipelineConfig, level: usize) -> Result<Vec<FeatureView>> {
    let factor = cfg.level_scales[level];
    std::iter::once(&views.reference)
        .chain(&views.sources)
        .map(|v| {
            Ok(FeatureView {
                camera: v.camera.downscaled(factor)?,
                features: extract_features_scaled(&v.image, factor)?,
            })
        })
        .collect()
}

/// Output of one hierarchy level.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub hypotheses: HypothesisVolume,
    pub cost: ScoreVolume,
    pub beliefs: ScoreVolume,
    pub depth: DepthMap,
}

/// Run one level on precomputed features.
pub fn run_level_features(
    features: &[FeatureView],
    views: &ViewSet,
    h: &HypothesisVolume,
    cfg: &PipelineConfig,
    level: usize,
) -> Result<LevelOutput> {
    if level >= LEVELS {
        return Err(Error::usage(format!("level must be below {LEVELS}, got {level}")));
    }
    let (reference, sources) = features.split_first().ok_or_else(|| Error::usage("no feature views"))?;
    let cost = build_cost_volume(reference, sources, h, cfg.sentinel)?;
    let ctx = normalization_context(views, &reference.camera, cfg)?;
    let params = &cfg.pairwise[level];
    let (_, height, width) = h.shape();

    let mut unaries = vec![temperature_softmax(&cost, cfg.temperatures[0])?];
    for (k, &t) in cfg.temperatures.iter().enumerate().skip(1) {
        let factor = 1 << k;
        let pooled = downsample_volume(&cost, factor)?;
        let pooled_h = downsample_hypotheses(h, factor)?;
        let pooled_ctx = NormalizationContext::new(ctx.focal() / factor as f64, ctx.baseline(), ctx.sigma_p())?;
        let u = temperature_softmax(&pooled, t)?;
        let (beliefs, _) = bp_forward(&u, &pooled_h, params, &pooled_ctx)?;
        let probs = temperature_softmax(&beliefs, 1.0)?;
        unaries.push(upsample_volume(&probs, height, width)?);
    }
    let refs: Vec<&ScoreVolume> = unaries.iter().collect();
    let combined = weighted_combine(&refs, &cfg.combine_weights)?;
    let (beliefs, _) = bp_forward(&combined, h, params, &ctx)?;
    let probs = temperature_softmax(&beliefs, 1.0)?;
    let mut depth = soft_argmax_depth(&probs, h)?;

    // Pixels that no source view observes at any hypothesis carry no depth.
    let plane = height * width;
    let seen: Vec<bool> = (0..plane)
        .map(|px| (0..h.labels()).any(|p| cost.as_slice()[p * plane + px] > -cfg.sentinel))
        .collect();
    depth.restrict(&seen);
    Ok(LevelOutput {
        hypotheses: h.clone(),
        cost,
        beliefs,
        depth,
    })
}

pub fn run_level(
    views: &ViewSet,
    h: &HypothesisVolume,
    cfg: &PipelineConfig,
    level: usize,
) -> Result<(ScoreVolume, DepthMap)> {
    if level >= LEVELS {
        return Err(Error::usage(format!("level must be below {LEVELS}, got {level}")));
    }
    let features = level_features(views, cfg, level)?;
    let out = run_level_features(&features, views, h, cfg, level)?;
    Ok((out.beliefs, out.depth))
}

/// Run all levels and keep every level's intermediate output.
pub fn run_pipeline_levels(views: &ViewSet, cfg: &PipelineConfig) -> Result<Vec<LevelOutput>> {
    cfg.validate()?;
    let ref_cam = &views.reference.camera;
    let floor = cfg.depth_floor_ratio * ref_cam.depth_min();
    let mut outputs: Vec<LevelOutput> = Vec::with_capacity(LEVELS);
    for level in 0..LEVELS {
        let features = level_features(views, cfg, level)?;
        let (height, width) = (features[0].features.height(), features[0].features.width());
        let labels = cfg.hypotheses_per_level[level];
        let h = match outputs.last() {
            None => initial_hypotheses(&features[0].camera, labels, height, width, cfg.initial_sampling)?,
            Some(prev) => {
                let d_hat = upscale_depth(&prev.depth, height, width, cfg.upscale)?;
                let ctx = normalization_context(views, &features[0].camera, cfg)?;
                let intervals = auto_intervals(&d_hat, &ctx);
                let fallback = initial_ladder(ref_cam, labels, cfg.initial_sampling)?;
                refine_hypotheses(&d_hat, &intervals, labels, floor, &fallback)?.volume
            }
        };
        outputs.push(run_level_features(&features, views, &h, cfg, level)?);
    }
    Ok(outputs)
}

/// Finest-level depth map.
pub fn run_pipeline(views: &ViewSet, cfg: &PipelineConfig) -> Result<DepthMap> {
    let mut levels = run_pipeline_levels(views, cfg)?;
    Ok(levels.pop().expect("three levels").depth)
}

pub fn huber_loss(d_hat: f64, d_star: f64, epsilon: f64) -> f64 {
    let r = (d_hat - d_star).abs();
    if r <= epsilon {
        0.5 * r * r
    } else {
        epsilon * r - 0.5 * epsilon * epsilon
    }
}

/// Derivative of [`huber_loss`] with respect to `d_hat`.
pub fn huber_derivative(d_hat: f64, d_star: f64, epsilon: f64) -> f64 {
    (d_hat - d_star).clamp(-epsilon, epsilon)
}

/// Mean Huber loss over pixels valid in both maps.
pub fn level_loss(d_hat: &DepthMap, d_star: &DepthMap, epsilon: f64) -> Result<f64> {
    if (d_hat.height(), d_hat.width()) != (d_star.height(), d_star.width()) {
        return Err(Error::usage("depth maps differ in size"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..d_hat.depths().len() {
        if d_hat.valid_mask()[k] && d_star.valid_mask()[k] {
            sum += huber_loss(d_hat.depths()[k], d_star.depths()[k], epsilon);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("no jointly valid pixels"));
    }
    Ok(sum / n as f64)
}

/// `sum_l weights[l] * losses[l]`.
pub fn total_loss(level_losses: &[f64], weights: &[f64]) -> Result<f64> {
    if level_losses.len() != weights.len() {
        return Err(Error::usage("loss and weight counts differ"));
    }
    Ok(level_losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}
