//! Pinhole cameras, plane-induced homographies and depth reprojection.
//!
//! Poses map world to camera coordinates, `X_cam = R * X_world + t`. Pixel
//! coordinates are `(x, y)` with `x` the column; integer coordinates sit on
//! pixel centers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::costvol::FeaturePlane;
use crate::error::{Error, Result};
use crate::raster::{BilinearTap, Image};
use crate::volumes::DepthMap;

const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    depth_min: f64,
    depth_max: f64,
}

impl CameraModel {
    /// Validates the model. `K` is rescaled so that `K[2][2] = 1`.
    pub fn new(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>, depth_min: f64, depth_max: f64) -> Result<Self> {
        if k.iter().chain(r.iter()).chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("camera contains non-finite entries"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::data("intrinsics must be upper triangular"));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::data("intrinsics need positive focal entries"));
        }
        let k = k / k[(2, 2)];
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.amax() >= ORTHONORMAL_TOLERANCE || (r.determinant() - 1.0).abs() >= ORTHONORMAL_TOLERANCE {
            return Err(Error::data("rotation is not a proper orthonormal matrix"));
        }
        if !(depth_min > 0.0 && depth_min < depth_max && depth_max.is_finite()) {
            return Err(Error::usage(format!("invalid depth range [{depth_min}, {depth_max}]")));
        }
        let k_inv = k.try_inverse().ok_or_else(|| Error::data("singular intrinsics"))?;
        Ok(Self {
            k,
            k_inv,
            r,
            t,
            depth_min,
            depth_max,
        })
    }

    /// Camera with focal `f`, principal point `(cx, cy)` and identity pose.
    pub fn simple(f: f64, cx: f64, cy: f64, depth_min: f64, depth_max: f64) -> Result<Self> {
        let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
        Self::new(k, Matrix3::identity(), Vector3::zeros(), depth_min, depth_max)
    }

    /// Same intrinsics and orientation with the optical center moved to `center`.
    pub fn with_center(&self, center: Vector3<f64>) -> Result<Self> {
        Self::new(self.k, self.r, -self.r * center, self.depth_min, self.depth_max)
    }

    pub fn with_pose(&self, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        Self::new(self.k, r, t, self.depth_min, self.depth_max)
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn r(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    pub fn depth_min(&self) -> f64 {
        self.depth_min
    }

    pub fn depth_max(&self) -> f64 {
        self.depth_max
    }

    /// Mean of the two focal entries, in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * (self.k[(0, 0)] + self.k[(1, 1)])
    }

    pub fn center(&self) -> Vector3<f64> {
        -self.r.transpose() * self.t
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.r * world + self.t
    }

    /// Pixel coordinates and depth of a world point; `None` behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let cam = self.to_camera(world);
        if cam.z <= 0.0 {
            return None;
        }
        let p = self.k * cam;
        Some((p.x / p.z, p.y / p.z, cam.z))
    }

    /// World point seen at pixel `(x, y)` with camera-frame depth `depth`.
    pub fn lift(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        let cam = self.k_inv * Vector3::new(x, y, 1.0) * depth;
        self.r.transpose() * (cam - self.t)
    }

    /// Viewing ray direction (world frame, unnormalized, unit camera-z component).
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        self.r.transpose() * (self.k_inv * Vector3::new(x, y, 1.0))
    }

    /// Camera for an image box-downsampled by `factor`; keeps pixel centers aligned.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        let f = factor as f64;
        let mut k = self.k / f;
        k[(2, 2)] = 1.0;
        k[(0, 2)] = (self.k[(0, 2)] + 0.5) / f - 0.5;
        k[(1, 2)] = (self.k[(1, 2)] + 0.5) / f - 0.5;
        Self::new(k, self.r, self.t, self.depth_min, self.depth_max)
    }

    /// Scene scaled by `s`: translation and depth range scale, orientation and intrinsics stay.
    pub fn scene_scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.k, self.r, self.t * s, self.depth_min * s, self.depth_max * s)
    }

    /// Relative pose `(R, t)` taking this camera's frame to `other`'s frame.
    pub fn relative_to(&self, other: &CameraModel) -> (Matrix3<f64>, Vector3<f64>) {
        let r_rel = other.r * self.r.transpose();
        let t_rel = other.t - r_rel * self.t;
        (r_rel, t_rel)
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub camera: CameraModel,
    pub image: Image,
}

/// Reference view plus at least one source view.
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub reference: View,
    pub sources: Vec<View>,
}

impl ViewSet {
    pub fn new(reference: View, sources: Vec<View>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::usage("a view set needs at least one source view"));
        }
        let channels = reference.image.channels();
        if sources.iter().any(|s| s.image.channels() != channels) {
            return Err(Error::usage("all views must share the channel count"));
        }
        Ok(Self { reference, sources })
    }

    pub fn source_cameras(&self) -> impl Iterator<Item = &CameraModel> {
        self.sources.iter().map(|v| &v.camera)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Mean distance between source centers and the reference center.
    #[default]
    Mean,
    /// Sum of those distances.
    Sum,
}

/// Aggregate distance between the reference center and each source center.
/// Returns 0.0 when every source coincides with the reference (degenerate).
pub fn baseline(reference: &CameraModel, sources: &[&CameraModel], mode: BaselineMode) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::usage("baseline needs at least one source camera"));
    }
    let c = reference.center();
    let sum: f64 = sources.iter().map(|s| (s.center() - c).norm()).sum();
    Ok(match mode {
        BaselineMode::Mean => sum / sources.len() as f64,
        BaselineMode::Sum => sum,
    })
}

pub fn average_baseline(views: &ViewSet) -> Result<f64> {
    let sources: Vec<&CameraModel> = views.source_cameras().collect();
    baseline(&views.reference.camera, &sources, BaselineMode::Mean)
}

/// Homography mapping reference pixels to source pixels for the
/// fronto-parallel plane `Z = depth` of the reference frame.
pub fn homography_for_plane(reference: &CameraModel, source: &CameraModel, depth: f64) -> Result<Matrix3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::usage(format!("plane depth must be positive, got {depth}")));
    }
    let (r_rel, t_rel) = reference.relative_to(source);
    let n = Vector3::new(0.0, 0.0, 1.0);
    Ok(source.k * (r_rel + t_rel * n.transpose() / depth) * reference.k_inv)
}

/// Per-pixel plane-sweep mapping: `x_src ~ A * (x, y, 1) + b / depth`.
///
/// Equivalent to evaluating [`homography_for_plane`] at every pixel's own depth.
#[derive(Clone, Copy, Debug)]
pub struct SweepMapping {
    a: Matrix3<f64>,
    b: Vector3<f64>,
}

impl SweepMapping {
    pub fn new(reference: &CameraModel, source: &CameraModel) -> Self {
        let (r_rel, t_rel) = reference.relative_to(source);
        Self {
            a: source.k * r_rel * reference.k_inv,
            b: source.k * t_rel,
        }
    }

    /// Source pixel for reference pixel `(x, y)` at depth `depth`; `None`
    /// if the point falls behind the source camera.
    #[inline]
    pub fn map(&self, x: f64, y: f64, depth: f64) -> Option<(f64, f64)> {
        let p = self.a * Vector3::new(x, y, 1.0) + self.b / depth;
        if p.z <= 0.0 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z))
    }
}

/// Resample `source` through the homography `h` (reference -> source pixels)
/// onto an `height x width` grid. Samples falling outside the source are invalid.
pub fn warp_plane(source: &FeaturePlane, h: &Matrix3<f64>, height: usize, width: usize) -> Result<FeaturePlane> {
    let scale = h.amax();
    if !(scale > 0.0) || h.determinant().abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::data("homography is singular"));
    }
    let channels = source.channels();
    let plane = height * width;
    let mut data = vec![0.0; channels * plane];
    let mut valid = vec![false; plane];
    for i in 0..height {
        for j in 0..width {
            let p = h * Vector3::new(j as f64, i as f64, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let Some(tap) = BilinearTap::new(p.x / p.z, p.y / p.z, source.height(), source.width()) else {
                continue;
            };
            if !tap.all_valid(source.valid_mask(), source.width()) {
                continue;
            }
            let px = i * width + j;
            valid[px] = true;
            for c in 0..channels {
                data[c * plane + px] = tap.sample(source.channel(c), source.width());
            }
        }
    }
    FeaturePlane::new(channels, height, width, data, valid)
}

/// Per-pixel forward-backward consistency between a reference and a source depth map.
#[derive(Clone, Debug)]
pub struct Reprojection {
    pub height: usize,
    pub width: usize,
    /// True where the round trip could be evaluated.
    pub valid: Vec<bool>,
    /// Pixel distance between the start pixel and its round-trip position.
    pub reproj_error: Vec<f64>,
    /// `|d_roundtrip - d_ref| / d_ref`.
    pub rel_depth_diff: Vec<f64>,
    /// Continuous source pixel `(x, y)` hit by each reference pixel.
    pub source_pixel: Vec<[f64; 2]>,
    /// World point lifted from the source depth at `source_pixel`.
    pub source_point: Vec<[f64; 3]>,
}

pub fn reproject_depth(
    reference: &CameraModel,
    source: &CameraModel,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
) -> Reprojection {
    let (h, w) = (ref_depth.height(), ref_depth.width());
    let n = h * w;
    let mut out = Reprojection {
        height: h,
        width: w,
        valid: vec![false; n],
        reproj_error: vec![f64::INFINITY; n],
        rel_depth_diff: vec![f64::INFINITY; n],
        source_pixel: vec![[f64::NAN; 2]; n],
        source_point: vec![[f64::NAN; 3]; n],
    };
    for i in 0..h {
        for j in 0..w {
            let px = i * w + j;
            if !ref_depth.is_valid(i, j) {
                continue;
            }
            let d = ref_depth.get(i, j);
            let world = reference.lift(j as f64, i as f64, d);
            let Some((xs, ys, _)) = source.project(&world) else {
                continue;
            };
            let Some(tap) = BilinearTap::new(xs, ys, src_depth.height(), src_depth.width()) else {
                continue;
            };
            if !tap.all_valid(src_depth.valid_mask(), src_depth.width()) {
                continue;
            }
            let ds = tap.sample(src_depth.depths(), src_depth.width());
            let back = source.lift(xs, ys, ds);
            let Some((xr, yr, dr)) = reference.project(&back) else {
                continue;
            };
            out.valid[px] = true;
            out.reproj_error[px] = ((xr - j as f64).powi(2) + (yr - i as f64).powi(2)).sqrt();
            out.rel_depth_diff[px] = (dr - d).abs() / d;
            out.source_pixel[px] = [xs, ys];
            out.source_point[px] = [back.x, back.y, back.z];
        }
    }
    out
}
