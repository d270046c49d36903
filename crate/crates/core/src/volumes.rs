//! Score, hypothesis and depth containers plus the label-space reductions
//! used between inference stages.
//!
//! Volumes are stored label-major: entry `(p, i, j)` lives at
//! `p * height * width + i * width + j`.

use crate::error::{Error, Result};

/// Tolerance on per-pixel probability mass accepted by [`soft_argmax_depth`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// P x M x N real-valued per-label scores (matching scores, unaries or beliefs).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume {
    labels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScoreVolume {
    pub fn new(labels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(labels, height, width)?;
        if data.len() != labels * height * width {
            return Err(Error::usage(format!(
                "score buffer has {} entries, expected {labels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite score at flat index {k}")));
        }
        Ok(Self {
            labels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(labels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(labels * height * width);
        for p in 0..labels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(p, i, j));
                }
            }
        }
        Self::new(labels, height, width, data)
    }

    pub fn zeros(labels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(labels, height, width, vec![0.0; labels * height * width])
    }

    /// Skips the finiteness scan; callers guarantee finite entries.
    pub(crate) fn from_raw(labels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), labels * height * width);
        Self {
            labels,
            height,
            width,
            data,
        }
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.labels, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, p: usize, i: usize, j: usize) -> f64 {
        self.data[(p * self.height + i) * self.width + j]
    }

    /// Scores of all labels at pixel (i, j).
    pub fn label_vector(&self, i: usize, j: usize) -> Vec<f64> {
        let px = i * self.width + j;
        (0..self.labels).map(|p| self.data[p * self.pixels() + px]).collect()
    }

    /// Index of the highest score at (i, j); ties resolve to the lowest label.
    pub fn argmax(&self, i: usize, j: usize) -> usize {
        argmax_first(&self.label_vector(i, j))
    }
}

/// P x M x N candidate depths, strictly increasing in the label at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisVolume {
    labels: usize,
    height: usize,
    width: usize,
    depths: Vec<f64>,
}

impl HypothesisVolume {
    pub fn new(labels: usize, height: usize, width: usize, depths: Vec<f64>) -> Result<Self> {
        check_shape(labels, height, width)?;
        if depths.len() != labels * height * width {
            return Err(Error::usage(format!(
                "hypothesis buffer has {} entries, expected {labels}x{height}x{width}",
                depths.len()
            )));
        }
        let plane = height * width;
        for px in 0..plane {
            let mut prev = 0.0;
            for p in 0..labels {
                let d = depths[p * plane + px];
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::data(format!(
                        "hypothesis {p} at pixel {px} is {d}, must be positive and finite"
                    )));
                }
                if p > 0 && d <= prev {
                    return Err(Error::data(format!(
                        "hypotheses at pixel {px} not strictly increasing at label {p}"
                    )));
                }
                prev = d;
            }
        }
        Ok(Self {
            labels,
            height,
            width,
            depths,
        })
    }

    pub fn from_fn(labels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut depths = Vec::with_capacity(labels * height * width);
        for p in 0..labels {
            for i in 0..height {
                for j in 0..width {
                    depths.push(f(p, i, j));
                }
            }
        }
        Self::new(labels, height, width, depths)
    }

    /// The same depth ladder at every pixel.
    pub fn uniform(ladder: &[f64], height: usize, width: usize) -> Result<Self> {
        Self::from_fn(ladder.len(), height, width, |p, _, _| ladder[p])
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.labels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.depths
    }

    pub fn get(&self, p: usize, i: usize, j: usize) -> f64 {
        self.depths[(p * self.height + i) * self.width + j]
    }

    /// Multiply every depth by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.labels,
            self.height,
            self.width,
            self.depths.iter().map(|d| d * s).collect(),
        )
    }
}

/// M x N depth estimates with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::usage("depth map must be non-empty"));
        }
        if depth.len() != height * width || valid.len() != height * width {
            return Err(Error::usage(format!("depth map buffers do not match {height}x{width}")));
        }
        if let Some(k) = (0..depth.len()).find(|&k| valid[k] && !(depth[k].is_finite() && depth[k] > 0.0)) {
            return Err(Error::data(format!(
                "valid pixel {k} has depth {}, must be positive",
                depth[k]
            )));
        }
        Ok(Self {
            height,
            width,
            depth,
            valid,
        })
    }

    /// Builds a map where pixels with positive finite depth are valid.
    pub fn from_depths(height: usize, width: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(height, width, depth, valid)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let depth = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self::from_depths(height, width, depth)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.depth[i * self.width + j]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Clears validity wherever `mask` is false.
    pub fn restrict(&mut self, mask: &[bool]) {
        for (v, m) in self.valid.iter_mut().zip(mask) {
            *v &= *m;
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.depth.iter().map(|d| d * s).collect(),
            self.valid.clone(),
        )
    }
}

fn check_shape(labels: usize, height: usize, width: usize) -> Result<()> {
    if labels < 2 {
        return Err(Error::usage(format!("need at least 2 labels, got {labels}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::usage(format!("empty spatial extent {height}x{width}")));
    }
    Ok(())
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Per-pixel softmax over labels of `x / temperature`, with max subtraction.
pub fn temperature_softmax(x: &ScoreVolume, temperature: f64) -> Result<ScoreVolume> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::param(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("softmax input contains non-finite scores"));
    }
    let plane = x.pixels();
    let mut out = vec![0.0; x.data.len()];
    for px in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for p in 0..x.labels {
            max = max.max(x.data[p * plane + px]);
        }
        let mut sum = 0.0;
        for p in 0..x.labels {
            let e = ((x.data[p * plane + px] - max) / temperature).exp();
            out[p * plane + px] = e;
            sum += e;
        }
        for p in 0..x.labels {
            out[p * plane + px] /= sum;
        }
    }
    Ok(ScoreVolume::from_raw(x.labels, x.height, x.width, out))
}

/// Vector-Jacobian product of [`temperature_softmax`]: given the softmax output
/// and the gradient with respect to it, return the gradient with respect to its input.
pub fn softmax_backward(probs: &ScoreVolume, grad_out: &ScoreVolume, temperature: f64) -> Result<ScoreVolume> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::usage("softmax_backward shape mismatch"));
    }
    let plane = probs.pixels();
    let mut out = vec![0.0; probs.data.len()];
    for px in 0..plane {
        let mut dot = 0.0;
        for p in 0..probs.labels {
            dot += probs.data[p * plane + px] * grad_out.data[p * plane + px];
        }
        for p in 0..probs.labels {
            let k = p * plane + px;
            out[k] = probs.data[k] * (grad_out.data[k] - dot) / temperature;
        }
    }
    Ok(ScoreVolume::from_raw(probs.labels, probs.height, probs.width, out))
}

/// Expected depth under a per-pixel normalized score distribution.
pub fn soft_argmax_depth(c: &ScoreVolume, h: &HypothesisVolume) -> Result<DepthMap> {
    if c.shape() != h.shape() {
        return Err(Error::usage(format!(
            "score volume {:?} and hypothesis volume {:?} differ in shape",
            c.shape(),
            h.shape()
        )));
    }
    let plane = c.pixels();
    let mut depth = vec![0.0; plane];
    for (px, out) in depth.iter_mut().enumerate() {
        let mut mass = 0.0;
        let mut acc = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in 0..c.labels {
            let w = c.data[p * plane + px];
            let d = h.depths[p * plane + px];
            mass += w;
            acc += w * d;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::data(format!(
                "score volume not normalized at pixel {px} (mass {mass})"
            )));
        }
        *out = acc.clamp(lo, hi);
    }
    DepthMap::new(c.height, c.width, depth, vec![true; plane])
}

/// Gradient of soft-argmax depths with respect to the probability volume.
pub fn soft_argmax_backward(h: &HypothesisVolume, grad_depth: &[f64]) -> Result<ScoreVolume> {
    let plane = h.height * h.width;
    if grad_depth.len() != plane {
        return Err(Error::usage("soft_argmax_backward gradient length mismatch"));
    }
    let data = (0..h.depths.len())
        .map(|k| h.depths[k] * grad_depth[k % plane])
        .collect();
    Ok(ScoreVolume::from_raw(h.labels, h.height, h.width, data))
}

fn corner_aligned(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len <= 1 {
        0.0
    } else {
        dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Interpolating upscale with corner-aligned sampling; the label axis is kept as is.
pub fn upsample_volume(c: &ScoreVolume, new_height: usize, new_width: usize) -> Result<ScoreVolume> {
    if new_height < c.height || new_width < c.width {
        return Err(Error::usage(format!(
            "upsample_volume cannot shrink {}x{} to {new_height}x{new_width}",
            c.height, c.width
        )));
    }
    if new_height == c.height && new_width == c.width {
        return Ok(c.clone());
    }
    let plane = c.pixels();
    let taps: Vec<(usize, usize, f64)> = (0..new_width)
        .map(|j| axis_tap(corner_aligned(j, new_width, c.width), c.width))
        .collect();
    let mut data = Vec::with_capacity(c.labels * new_height * new_width);
    for p in 0..c.labels {
        let src = &c.data[p * plane..(p + 1) * plane];
        for i in 0..new_height {
            let (y0, y1, fy) = axis_tap(corner_aligned(i, new_height, c.height), c.height);
            for &(x0, x1, fx) in &taps {
                let top = src[y0 * c.width + x0] * (1.0 - fx) + src[y0 * c.width + x1] * fx;
                let bot = src[y1 * c.width + x0] * (1.0 - fx) + src[y1 * c.width + x1] * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(ScoreVolume::from_raw(c.labels, new_height, new_width, data))
}

fn axis_tap(x: f64, len: usize) -> (usize, usize, f64) {
    let x = x.clamp(0.0, (len - 1) as f64);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(len - 1);
    (x0, x1, x - x0 as f64)
}

/// Elementwise `sum_k weights[k] * volumes[k]`.
pub fn weighted_combine(volumes: &[&ScoreVolume], weights: &[f64]) -> Result<ScoreVolume> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::usage("weighted_combine needs at least one volume"))?;
    if volumes.len() != weights.len() {
        return Err(Error::usage(format!(
            "{} volumes but {} weights",
            volumes.len(),
            weights.len()
        )));
    }
    if let Some(bad) = volumes.iter().find(|v| v.shape() != first.shape()) {
        return Err(Error::usage(format!(
            "volume shape {:?} differs from {:?}",
            bad.shape(),
            first.shape()
        )));
    }
    let mut data = vec![0.0; first.data.len()];
    for (v, w) in volumes.iter().zip(weights) {
        for (o, x) in data.iter_mut().zip(&v.data) {
            *o += w * x;
        }
    }
    ScoreVolume::new(first.labels, first.height, first.width, data)
}

/// Block-average the spatial axes by `factor` (partial blocks at the far edges
/// average the pixels they contain). Output size is `ceil(M/f) x ceil(N/f)`.
pub fn downsample_volume(c: &ScoreVolume, factor: usize) -> Result<ScoreVolume> {
    let (h, w, data) = block_average(&c.data, c.labels, c.height, c.width, factor)?;
    Ok(ScoreVolume::from_raw(c.labels, h, w, data))
}

/// Block-average hypotheses; averages of increasing ladders stay increasing.
pub fn downsample_hypotheses(hv: &HypothesisVolume, factor: usize) -> Result<HypothesisVolume> {
    let (h, w, data) = block_average(&hv.depths, hv.labels, hv.height, hv.width, factor)?;
    HypothesisVolume::new(hv.labels, h, w, data)
}

fn block_average(
    data: &[f64],
    labels: usize,
    height: usize,
    width: usize,
    factor: usize,
) -> Result<(usize, usize, Vec<f64>)> {
    if factor == 0 {
        return Err(Error::usage("block factor must be positive"));
    }
    let h = height.div_ceil(factor);
    let w = width.div_ceil(factor);
    let plane = height * width;
    let mut out = Vec::with_capacity(labels * h * w);
    for p in 0..labels {
        let src = &data[p * plane..(p + 1) * plane];
        for bi in 0..h {
            for bj in 0..w {
                let mut acc = 0.0;
                let mut n = 0usize;
                for i in bi * factor..((bi + 1) * factor).min(height) {
                    for j in bj * factor..((bj + 1) * factor).min(width) {
                        acc += src[i * width + j];
                        n += 1;
                    }
                }
                out.push(acc / n as f64);
            }
        }
    }
    Ok((h, w, out))
}
