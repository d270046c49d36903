//! Photometric feature planes and the variance-based plane-sweep score volume.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, SweepMapping};
use crate::raster::{BilinearTap, Image};
use crate::volumes::{HypothesisVolume, ScoreVolume};

/// Default magnitude of the score assigned to pixels with too little support.
pub const DEFAULT_SENTINEL: f64 = 1e4;

/// Number of channels produced by [`extract_features`].
pub const FEATURE_CHANNELS: usize = 4;

/// F x M x N feature maps with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePlane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FeaturePlane {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::usage("feature plane must be non-empty"));
        }
        let plane = height * width;
        if data.len() != channels * plane || valid.len() != plane {
            return Err(Error::usage("feature plane buffers do not match shape"));
        }
        for c in 0..channels {
            for px in 0..plane {
                if valid[px] && !data[c * plane + px].is_finite() {
                    return Err(Error::data(format!("non-finite feature at channel {c}, pixel {px}")));
                }
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            valid,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Adds `offset` to every sample.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v + offset).collect(),
            ..self.clone()
        }
    }
}

/// Features for hierarchy level `level` (0 coarsest, 2 full resolution).
pub fn extract_features(image: &Image, level: usize) -> Result<FeaturePlane> {
    if level > 2 {
        return Err(Error::usage(format!("level must be 0, 1 or 2, got {level}")));
    }
    extract_features_scaled(image, 1 << (2 - level))
}

/// Four standardized channels (intensity, horizontal Sobel, vertical Sobel,
/// 3x3 mean) computed on the image box-downsampled by `factor`.
pub fn extract_features_scaled(image: &Image, factor: usize) -> Result<FeaturePlane> {
    let mut plane = raw_features(image, factor)?;
    let len = plane.height * plane.width;
    for c in 0..plane.channels {
        let ch = &mut plane.data[c * len..(c + 1) * len];
        let mean = ch.iter().sum::<f64>() / len as f64;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
        let inv_std = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
        for v in ch.iter_mut() {
            *v = (*v - mean) * inv_std;
        }
    }
    Ok(plane)
}

/// Unstandardized feature channels; borders replicate the edge pixels.
pub(crate) fn raw_features(image: &Image, factor: usize) -> Result<FeaturePlane> {
    let gray = image.to_gray().area_downsample(factor)?;
    let (h, w) = (gray.height(), gray.width());
    let src = gray.plane(0);
    let at = |i: isize, j: isize| -> f64 {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        src[i * w + j]
    };
    let len = h * w;
    let mut data = vec![0.0; FEATURE_CHANNELS * len];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let px = i as usize * w + j as usize;
            let gx = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
            let gy = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
            let mut mean = 0.0;
            for di in -1..=1 {
                for dj in -1..=1 {
                    mean += at(i + di, j + dj);
                }
            }
            data[px] = src[px];
            data[len + px] = gx;
            data[2 * len + px] = gy;
            data[3 * len + px] = mean / 9.0;
        }
    }
    FeaturePlane::new(FEATURE_CHANNELS, h, w, data, vec![true; len])
}

/// A calibrated view reduced to feature maps.
#[derive(Clone, Debug)]
pub struct FeatureView {
    pub camera: CameraModel,
    pub features: FeaturePlane,
}

/// Plane-sweep score volume: for every label and pixel, the negated channel-mean
/// population variance of the reference feature and all in-bounds warped source
/// features at that pixel's hypothesis depth.
///
/// Pixels where fewer than two samples are available score `-sentinel`.
pub fn build_cost_volume(
    reference: &FeatureView,
    sources: &[FeatureView],
    h: &HypothesisVolume,
    sentinel: f64,
) -> Result<ScoreVolume> {
    if sources.is_empty() {
        return Err(Error::usage("cost volume needs at least one source view"));
    }
    let rf = &reference.features;
    let (labels, height, width) = h.shape();
    if rf.height != height || rf.width != width {
        return Err(Error::usage(format!(
            "reference features {}x{} do not match hypotheses {height}x{width}",
            rf.height, rf.width
        )));
    }
    let channels = rf.channels;
    if sources.iter().any(|s| s.features.channels != channels) {
        return Err(Error::usage("feature channel counts differ between views"));
    }
    if !(sentinel.is_finite() && sentinel > 0.0) {
        return Err(Error::param("sentinel must be positive and finite"));
    }
    let mappings: Vec<SweepMapping> = sources
        .iter()
        .map(|s| SweepMapping::new(&reference.camera, &s.camera))
        .collect();

    let mut data = vec![0.0; labels * height * width];
    // one chunk per (label, row) scanline
    data.par_chunks_mut(width).enumerate().for_each(|(line, out)| {
        let p = line / height;
        let i = line % height;
        let mut samples = vec![0.0; channels * (sources.len() + 1)];
        for (j, score) in out.iter_mut().enumerate() {
            if !rf.is_valid(i, j) {
                *score = -sentinel;
                continue;
            }
            let d = h.get(p, i, j);
            let mut count = 0;
            for (c, s) in samples.iter_mut().enumerate().take(channels) {
                *s = rf.get(c, i, j);
            }
            count += 1;
            for (src, map) in sources.iter().zip(&mappings) {
                let sf = &src.features;
                let Some((x, y)) = map.map(j as f64, i as f64, d) else {
                    continue;
                };
                let Some(tap) = BilinearTap::new(x, y, sf.height, sf.width) else {
                    continue;
                };
                if !tap.all_valid(&sf.valid, sf.width) {
                    continue;
                }
                for c in 0..channels {
                    samples[count * channels + c] = tap.sample(sf.channel(c), sf.width);
                }
                count += 1;
            }
            *score = if count < 2 {
                -sentinel
            } else {
                -mean_channel_variance(&samples[..count * channels], channels, count)
            };
        }
    });
    Ok(ScoreVolume::from_raw(labels, height, width, data))
}

/// Two-pass population variance per channel, averaged over channels.
/// `samples` holds `count` members of `channels` values each.
fn mean_channel_variance(samples: &[f64], channels: usize, count: usize) -> f64 {
    let n = count as f64;
    let mut total = 0.0;
    for c in 0..channels {
        let mean = (0..count).map(|k| samples[k * channels + c]).sum::<f64>() / n;
        total += (0..count)
            .map(|k| (samples[k * channels + c] - mean).powi(2))
            .sum::<f64>()
            / n;
    }
    total / channels as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn constant_image_has_zero_gradients() {
        let img = Image::from_fn(1, 16, 20, |_, _, _| 0.42).unwrap();
        let raw = raw_features(&img, 1).unwrap();
        assert!(raw.channel(1).iter().all(|&v| v == 0.0));
        assert!(raw.channel(2).iter().all(|&v| v == 0.0));
        let f = extract_features(&img, 2).unwrap();
        assert!(f.channel(1).iter().all(|&v| v == 0.0));
        assert!(f.channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp_gradients() {
        let img = Image::from_fn(1, 12, 16, |_, _, j| 0.05 * j as f64).unwrap();
        let raw = raw_features(&img, 1).unwrap();
        assert!(raw.channel(2).iter().all(|&v| v == 0.0));
        let expected = 8.0 * 0.05;
        for i in 0..12 {
            for j in 1..15 {
                assert!((raw.get(1, i, j) - expected).abs() < 1e-12);
            }
        }
        let f = extract_features(&img, 2).unwrap();
        assert!(f.channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn level_sizes() {
        let img = Image::from_fn(3, 96, 128, |c, i, j| ((c + i * j) % 7) as f64 / 7.0).unwrap();
        let full = extract_features(&img, 2).unwrap();
        assert_eq!((full.height(), full.width(), full.channels()), (96, 128, 4));
        let coarse = extract_features(&img, 0).unwrap();
        assert_eq!((coarse.height(), coarse.width()), (24, 32));
        assert!(extract_features(&img, 3).is_err());
    }

    #[test]
    fn standardized_channels() {
        let img = Image::from_fn(1, 20, 24, |_, i, j| ((i * 3 + j * 5) % 11) as f64).unwrap();
        let f = extract_features(&img, 2).unwrap();
        for c in 0..4 {
            let ch = f.channel(c);
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    fn single_channel(values: Vec<f64>, h: usize, w: usize) -> FeaturePlane {
        FeaturePlane::new(1, h, w, values, vec![true; h * w]).unwrap()
    }

    fn colocated(ref_val: f64, src_val: f64) -> (FeatureView, FeatureView) {
        let cam = CameraModel::simple(10.0, 1.0, 1.0, 1.0, 5.0).unwrap();
        (
            FeatureView {
                camera: cam.clone(),
                features: single_channel(vec![ref_val; 9], 3, 3),
            },
            FeatureView {
                camera: cam,
                features: single_channel(vec![src_val; 9], 3, 3),
            },
        )
    }

    #[test]
    fn cost_volume_examples() {
        let h = HypothesisVolume::uniform(&[1.0, 2.0], 3, 3).unwrap();
        let (r, s) = colocated(0.7, 0.7);
        let v = build_cost_volume(&r, &[s], &h, DEFAULT_SENTINEL).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == 0.0));

        let (r, s) = colocated(1.0, 3.0);
        let v = build_cost_volume(&r, &[s], &h, DEFAULT_SENTINEL).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == -1.0));

        let (r, mut s) = colocated(1.0, 3.0);
        s.camera = s.camera.with_center(Vector3::new(100.0, 0.0, 0.0)).unwrap();
        let v = build_cost_volume(&r, &[s], &h, DEFAULT_SENTINEL).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == -DEFAULT_SENTINEL));

        let (r, _) = colocated(1.0, 3.0);
        assert!(matches!(
            build_cost_volume(&r, &[], &h, DEFAULT_SENTINEL),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn cost_volume_is_shift_invariant_and_non_positive() {
        let cam = CameraModel::simple(20.0, 7.5, 5.5, 1.0, 5.0).unwrap();
        let mk = |seed: f64| {
            let vals = (0..4 * 12 * 16)
                .map(|k| ((k as f64 * 0.37 + seed).sin() * 3.0).fract())
                .collect();
            FeaturePlane::new(4, 12, 16, vals, vec![true; 12 * 16]).unwrap()
        };
        let r = FeatureView {
            camera: cam.clone(),
            features: mk(0.0),
        };
        let sources = vec![
            FeatureView {
                camera: cam.with_center(Vector3::new(0.2, 0.0, 0.0)).unwrap(),
                features: mk(1.0),
            },
            FeatureView {
                camera: cam.with_center(Vector3::new(0.0, -0.15, 0.0)).unwrap(),
                features: mk(2.0),
            },
        ];
        let h = HypothesisVolume::uniform(&[1.5, 2.0, 3.0, 4.5], 12, 16).unwrap();
        let base = build_cost_volume(&r, &sources, &h, DEFAULT_SENTINEL).unwrap();
        assert!(base.as_slice().iter().all(|&x| x <= 0.0));

        let shift = 123.456;
        let r2 = FeatureView {
            camera: r.camera.clone(),
            features: r.features.shifted(shift),
        };
        let s2: Vec<FeatureView> = sources
            .iter()
            .map(|s| FeatureView {
                camera: s.camera.clone(),
                features: s.features.shifted(shift),
            })
            .collect();
        let moved = build_cost_volume(&r2, &s2, &h, DEFAULT_SENTINEL).unwrap();
        for (a, b) in base.as_slice().iter().zip(moved.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
