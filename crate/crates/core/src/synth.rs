//! Synthetic multi-view scenes with exact depth, and depth-error metrics.
//!
//! Scenes are ray-cast: every pixel of every camera intersects the listed
//! primitives and takes the nearest hit. Each primitive carries its own
//! procedural texture, a sum of random cosines in surface coordinates whose
//! frequencies are capped in cycles per reference-view pixel so that the
//! coarsest pyramid level does not alias.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, View, ViewSet};
use crate::raster::Image;
use crate::volumes::DepthMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Primitive {
    /// Points `origin + s*u + t*v`; unbounded unless `half_extents` limits `|s|, |t|`.
    Plane {
        origin: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        #[serde(default)]
        half_extents: Option<[f64; 2]>,
    },
    /// The camera-facing part of a sphere: hits with `z <= max_z` (world frame).
    SphereCap { center: [f64; 3], radius: f64, max_z: f64 },
}

impl Primitive {
    pub fn fronto_plane(depth: f64) -> Self {
        Primitive::Plane {
            origin: [0.0, 0.0, depth],
            u: [1.0, 0.0, 0.0],
            v: [0.0, 1.0, 0.0],
            half_extents: None,
        }
    }

    /// Nearest ray parameter `lambda > 0` with `origin + lambda * dir` on the
    /// primitive, plus the surface coordinates used for texturing.
    fn intersect(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [f64; 2])> {
        match self {
            Primitive::Plane {
                origin,
                u,
                v,
                half_extents,
            } => {
                let (p0, u, v) = (Vector3::from(*origin), Vector3::from(*u), Vector3::from(*v));
                let n = u.cross(&v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let lambda = n.dot(&(p0 - o)) / denom;
                if lambda <= 0.0 {
                    return None;
                }
                let rel = o + dir * lambda - p0;
                let s = rel.dot(&u) / u.norm_squared();
                let t = rel.dot(&v) / v.norm_squared();
                if let Some([hs, ht]) = half_extents {
                    if s.abs() > *hs || t.abs() > *ht {
                        return None;
                    }
                }
                Some((lambda, [s * u.norm(), t * v.norm()]))
            }
            Primitive::SphereCap { center, radius, max_z } => {
                let c = Vector3::from(*center);
                let oc = o - c;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let disc = b * b - a * (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [(-b - root) / a, (-b + root) / a]
                    .into_iter()
                    .filter(|&l| l > 0.0)
                    .find(|&l| (o + dir * l).z <= *max_z)
                    .map(|l| {
                        let p = o + dir * l;
                        (l, [p.x, p.y])
                    })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPlacement {
    pub center: [f64; 3],
    /// Roll, pitch, yaw (radians) of the camera-to-world rotation.
    #[serde(default)]
    pub rotation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub depth_range: [f64; 2],
    /// First camera is the reference.
    pub cameras: Vec<CameraPlacement>,
    pub primitives: Vec<Primitive>,
    #[serde(default = "default_components")]
    pub texture_components: usize,
    /// Highest texture frequency, in cycles per pixel of a surface seen
    /// fronto-parallel at `texture_reference_depth` by the first camera.
    #[serde(default = "default_max_cycles")]
    pub max_cycles_per_pixel: f64,
    pub texture_reference_depth: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_components() -> usize {
    24
}

fn default_max_cycles() -> f64 {
    0.1
}

impl SceneSpec {
    /// A background plane at `far` and a horizontal foreground band at `near`
    /// covering the upper part of the reference view, seen by cameras spaced
    /// `baseline` apart along x.
    pub fn two_planes(width: usize, height: usize, near: f64, far: f64, baseline: f64, views: usize) -> Self {
        let focal = width as f64 * 0.8;
        let cy = (height as f64 - 1.0) / 2.0;
        // band bottom edge projects to row ~ 0.45 * height in the reference view
        let edge_y = (0.45 * height as f64 - cy) * near / focal;
        let top = -10.0 * near;
        let band_half = (edge_y - top) / 2.0;
        let mut cameras = vec![CameraPlacement {
            center: [0.0, 0.0, 0.0],
            rotation: [0.0; 3],
        }];
        for k in 1..views {
            let side = if k % 2 == 1 { 1.0 } else { -1.0 };
            let step = k.div_ceil(2) as f64;
            cameras.push(CameraPlacement {
                center: [side * step * baseline, 0.0, 0.0],
                rotation: [0.0; 3],
            });
        }
        SceneSpec {
            width,
            height,
            focal,
            depth_range: [0.7 * near, 1.4 * far],
            cameras,
            primitives: vec![
                Primitive::fronto_plane(far),
                Primitive::Plane {
                    origin: [0.0, top + band_half, near],
                    u: [1.0, 0.0, 0.0],
                    v: [0.0, 1.0, 0.0],
                    half_extents: Some([100.0 * near, band_half]),
                },
            ],
            texture_components: default_components(),
            max_cycles_per_pixel: default_max_cycles(),
            texture_reference_depth: near,
            noise_sigma: 0.0,
        }
    }

    /// The 128x96, three-view two-plane scene used for end-to-end checks:
    /// planes at depth 5 and 6, baseline 3, texture up to 0.12 cycles/pixel.
    pub fn two_plane_benchmark() -> Self {
        let mut spec = Self::two_planes(128, 96, 5.0, 6.0, 3.0, 3);
        spec.max_cycles_per_pixel = 0.12;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::usage("scene image must be at least 2x2"));
        }
        if self.cameras.len() < 2 {
            return Err(Error::usage("a scene needs at least two cameras"));
        }
        if self.primitives.is_empty() {
            return Err(Error::usage("a scene needs at least one primitive"));
        }
        let [lo, hi] = self.depth_range;
        if !(self.focal > 0.0 && lo > 0.0 && hi > lo && self.texture_reference_depth > 0.0) {
            return Err(Error::param("focal, depth range and texture depth must be positive"));
        }
        if !(self.max_cycles_per_pixel > 0.0 && self.max_cycles_per_pixel <= 0.5) {
            return Err(Error::param("max_cycles_per_pixel must lie in (0, 0.5]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn camera(&self, index: usize) -> Result<CameraModel> {
        let placement = &self.cameras[index];
        let [roll, pitch, yaw] = placement.rotation;
        let cam_to_world = Rotation3::from_euler_angles(roll, pitch, yaw);
        let r = *cam_to_world.matrix();
        let r = r.transpose();
        let c = Vector3::from(placement.center);
        let base = CameraModel::simple(
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.depth_range[0],
            self.depth_range[1],
        )?;
        base.with_pose(r, -(r * c))
    }
}

/// Band-limited random texture in surface coordinates.
#[derive(Clone, Debug)]
struct Texture {
    waves: Vec<([f64; 2], f64, f64)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, components: usize, max_freq: f64) -> Self {
        let waves = (0..components)
            .map(|_| {
                let f = max_freq * rng.gen_range(0.15..1.0);
                let theta = rng.gen_range(0.0..PI);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = rng.gen_range(0.5..1.0);
                ([f * theta.cos(), f * theta.sin()], phase, amp)
            })
            .collect::<Vec<_>>();
        Self { waves }
    }

    fn sample(&self, st: [f64; 2]) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.2).sum();
        let v: f64 = self
            .waves
            .iter()
            .map(|(f, phase, amp)| amp * (2.0 * PI * (f[0] * st[0] + f[1] * st[1]) + phase).cos())
            .sum();
        // sum of cosines has standard deviation ~ total / sqrt(2 * n); keep most mass in [0, 1]
        let scale = 0.5 / (2.5 * total / (2.0 * self.waves.len() as f64).sqrt());
        (0.5 + scale * v).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cameras: Vec<CameraModel>,
    pub images: Vec<Image>,
    pub depths: Vec<DepthMap>,
    /// Index of the primitive seen at each pixel of each view (`None` = nothing hit).
    pub hits: Vec<Vec<Option<usize>>>,
}

impl SyntheticScene {
    /// View set with `reference` first and the given sources.
    pub fn view_set(&self, reference: usize, sources: &[usize]) -> Result<ViewSet> {
        let view = |k: usize| -> Result<View> {
            if k >= self.cameras.len() {
                return Err(Error::usage(format!("no view {k} in the scene")));
            }
            Ok(View {
                camera: self.cameras[k].clone(),
                image: self.images[k].clone(),
            })
        };
        ViewSet::new(
            view(reference)?,
            sources.iter().map(|&k| view(k)).collect::<Result<_>>()?,
        )
    }

    /// Reference view 0 with every other view as a source.
    pub fn default_view_set(&self) -> Result<ViewSet> {
        let sources: Vec<usize> = (1..self.cameras.len()).collect();
        self.view_set(0, &sources)
    }
}

/// Intensity, depth and primitive hit for one pixel.
type Sample = (f64, f64, Option<usize>);

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // cycles per pixel -> cycles per scene unit at the reference depth
    let max_freq = spec.max_cycles_per_pixel * spec.focal / spec.texture_reference_depth;
    let textures: Vec<Texture> = spec
        .primitives
        .iter()
        .map(|_| Texture::random(&mut rng, spec.texture_components, max_freq))
        .collect();
    let cameras: Vec<CameraModel> = (0..spec.cameras.len()).map(|k| spec.camera(k)).collect::<Result<_>>()?;
    let (h, w) = (spec.height, spec.width);

    let mut images = Vec::new();
    let mut depths = Vec::new();
    let mut hits = Vec::new();
    for (k, cam) in cameras.iter().enumerate() {
        let origin = cam.center();
        let np = spec.primitives.len();
        let rows: Vec<(Vec<Sample>, Vec<bool>)> = (0..h)
            .into_par_iter()
            .map(|i| {
                let mut seen = vec![false; np];
                let row = (0..w)
                    .map(|j| {
                        let dir = cam.ray(j as f64, i as f64);
                        let mut best: Option<(f64, usize, [f64; 2])> = None;
                        for (pi, prim) in spec.primitives.iter().enumerate() {
                            if let Some((lambda, st)) = prim.intersect(&origin, &dir) {
                                seen[pi] = true;
                                if best.is_none_or(|b| lambda < b.0) {
                                    best = Some((lambda, pi, st));
                                }
                            }
                        }
                        match best {
                            Some((lambda, pi, st)) => {
                                let z = cam.to_camera(&(origin + dir * lambda)).z;
                                (textures[pi].sample(st), z, Some(pi))
                            }
                            None => (0.0, 0.0, None),
                        }
                    })
                    .collect();
                (row, seen)
            })
            .collect();
        let mut seen = vec![false; np];
        let mut intensity = Vec::with_capacity(h * w);
        let mut depth = Vec::with_capacity(h * w);
        let mut valid = Vec::with_capacity(h * w);
        let mut hit = Vec::with_capacity(h * w);
        for (row, row_seen) in rows {
            for (s, r) in seen.iter_mut().zip(row_seen) {
                *s |= r;
            }
            for (v, z, p) in row {
                intensity.push(v);
                depth.push(z);
                valid.push(p.is_some());
                hit.push(p);
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::usage(format!(
                "primitive {missing} lies outside the frustum of camera {k}"
            )));
        }
        if spec.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
            for v in &mut intensity {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        images.push(Image::new(1, h, w, intensity)?);
        depths.push(DepthMap::new(h, w, depth, valid)?);
        hits.push(hit);
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        cameras,
        images,
        depths,
        hits,
    })
}

/// Percentage of jointly valid pixels whose absolute error exceeds each threshold.
pub fn depth_error_metrics(d_hat: &DepthMap, d_star: &DepthMap, thresholds: &[f64]) -> Result<Vec<f64>> {
    if (d_hat.height(), d_hat.width()) != (d_star.height(), d_star.width()) {
        return Err(Error::usage("depth maps differ in size"));
    }
    if thresholds.iter().any(|t| !(*t > 0.0)) || thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::usage("thresholds must be positive and sorted"));
    }
    let errors: Vec<f64> = joint_errors(d_hat, d_star).collect();
    if errors.is_empty() {
        return Err(Error::data("no jointly valid pixels"));
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|t| 100.0 * errors.iter().filter(|e| *e > t).count() as f64 / n)
        .collect())
}

fn joint_errors<'a>(d_hat: &'a DepthMap, d_star: &'a DepthMap) -> impl Iterator<Item = f64> + 'a {
    (0..d_hat.depths().len())
        .filter(|&k| d_hat.valid_mask()[k] && d_star.valid_mask()[k])
        .map(|k| (d_hat.depths()[k] - d_star.depths()[k]).abs())
}

/// Fraction of ground-truth-valid pixels at least `margin` pixels from the
/// border whose estimate is valid and within `rel_tol * truth` of the truth.
pub fn fraction_within_relative(d_hat: &DepthMap, d_star: &DepthMap, rel_tol: f64, margin: usize) -> Result<f64> {
    let (h, w) = (d_star.height(), d_star.width());
    if (d_hat.height(), d_hat.width()) != (h, w) {
        return Err(Error::usage("depth maps differ in size"));
    }
    let mut total = 0usize;
    let mut good = 0usize;
    for i in margin..h.saturating_sub(margin) {
        for j in margin..w.saturating_sub(margin) {
            if !d_star.is_valid(i, j) {
                continue;
            }
            total += 1;
            let truth = d_star.get(i, j);
            if d_hat.is_valid(i, j) && (d_hat.get(i, j) - truth).abs() <= rel_tol * truth {
                good += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::data("no valid interior pixels"));
    }
    Ok(good as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SceneSpec {
        let mut s = SceneSpec::two_planes(32, 24, 5.0, 6.0, 0.5, 3);
        s.texture_components = 8;
        s
    }

    #[test]
    fn fronto_plane_depth_is_constant() {
        let mut spec = small_spec();
        spec.primitives = vec![Primitive::fronto_plane(4.0)];
        let scene = generate_scene(&spec, 1).unwrap();
        for &d in scene.depths[0].depths() {
            assert!((d - 4.0).abs() < 1e-12);
        }
        assert_eq!(scene.depths[0].valid_count(), 32 * 24);
    }

    #[test]
    fn slanted_plane_matches_analytic_depth() {
        let mut spec = small_spec();
        // plane z = 5 + 0.2 x
        spec.primitives = vec![Primitive::Plane {
            origin: [0.0, 0.0, 5.0],
            u: [1.0, 0.0, 0.2],
            v: [0.0, 1.0, 0.0],
            half_extents: None,
        }];
        let scene = generate_scene(&spec, 2).unwrap();
        let cam = &scene.cameras[0];
        for i in 0..24 {
            for j in 0..32 {
                // ray (a, b, 1) * z hits z = 5 + 0.2 * a * z
                let ray = cam.ray(j as f64, i as f64);
                let z = 5.0 / (1.0 - 0.2 * ray.x / ray.z);
                assert!((scene.depths[0].get(i, j) - z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&small_spec(), 9).unwrap();
        let b = generate_scene(&small_spec(), 9).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.depths, b.depths);
        let c = generate_scene(&small_spec(), 10).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn primitive_outside_frustum_rejected() {
        let mut spec = small_spec();
        spec.primitives.push(Primitive::Plane {
            origin: [0.0, 0.0, -5.0],
            u: [1.0, 0.0, 0.0],
            v: [0.0, 1.0, 0.0],
            half_extents: Some([1.0, 1.0]),
        });
        assert!(matches!(generate_scene(&spec, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn sphere_cap_depth() {
        let mut spec = small_spec();
        spec.primitives = vec![
            Primitive::fronto_plane(9.0),
            Primitive::SphereCap {
                center: [0.0, 0.0, 6.0],
                radius: 1.0,
                max_z: 6.0,
            },
        ];
        let scene = generate_scene(&spec, 4).unwrap();
        // the principal ray meets the sphere front at z = 5
        let center_depth = scene.depths[0].get(11, 15);
        assert!(center_depth > 5.0 && center_depth < 5.01, "{center_depth}");
        assert_eq!(scene.hits[0][11 * 32 + 15], Some(1));
    }

    #[test]
    fn metrics_examples() {
        let truth = DepthMap::from_fn(4, 4, |_, _| 10.0).unwrap();
        assert_eq!(
            depth_error_metrics(&truth, &truth, &[2.0, 4.0, 8.0, 20.0]).unwrap(),
            vec![0.0; 4]
        );
        let half = DepthMap::from_fn(4, 4, |i, _| if i < 2 { 13.0 } else { 10.0 }).unwrap();
        assert_eq!(
            depth_error_metrics(&half, &truth, &[2.0, 4.0]).unwrap(),
            vec![50.0, 0.0]
        );
        assert_eq!(
            depth_error_metrics(&half, &truth, &[2.0, 4.0]).unwrap(),
            depth_error_metrics(&truth, &half, &[2.0, 4.0]).unwrap()
        );
        let none = DepthMap::new(4, 4, vec![1.0; 16], vec![false; 16]).unwrap();
        assert!(matches!(
            depth_error_metrics(&none, &truth, &[1.0]),
            Err(Error::Data(_))
        ));
        assert!(depth_error_metrics(&truth, &truth, &[4.0, 2.0]).is_err());
    }
}
