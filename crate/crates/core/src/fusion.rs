//! Multi-view consistency filtering and point-cloud fusion.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reproject_depth, CameraModel, Reprojection};
use crate::io::write_atomic;
use crate::raster::Image;
use crate::volumes::DepthMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Minimum number of other views that must agree with a pixel.
    pub min_views: usize,
    /// Forward-backward reprojection error threshold in pixels.
    pub reprojection_threshold: f64,
    pub max_rel_depth_diff: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            min_views: 3,
            reprojection_threshold: 0.25,
            max_rel_depth_diff: 0.01,
        }
    }
}

impl FusionParams {
    pub fn new(min_views: usize, reprojection_threshold: f64, max_rel_depth_diff: f64) -> Result<Self> {
        let p = Self {
            min_views,
            reprojection_threshold,
            max_rel_depth_diff,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_views == 0 {
            return Err(Error::param("fusion needs min_views >= 1"));
        }
        // A zero threshold is accepted: it keeps nothing.
        if !(self.reprojection_threshold >= 0.0) || self.reprojection_threshold.is_infinite() {
            return Err(Error::param("reprojection threshold must be finite and non-negative"));
        }
        if !(self.max_rel_depth_diff > 0.0) {
            return Err(Error::param("max relative depth difference must be positive"));
        }
        Ok(())
    }

    fn agrees(&self, r: &Reprojection, px: usize) -> bool {
        r.valid[px]
            && r.reproj_error[px] < self.reprojection_threshold
            && r.rel_depth_diff[px] < self.max_rel_depth_diff
    }
}

#[derive(Clone, Debug)]
pub struct FusionView {
    pub camera: CameraModel,
    pub depth: DepthMap,
    /// Source of point colors; gray or RGB, same size as the depth map.
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyMask {
    pub height: usize,
    pub width: usize,
    pub kept: Vec<bool>,
    /// Number of other views agreeing with each pixel.
    pub counts: Vec<usize>,
}

fn reprojections(reference: &FusionView, others: &[&FusionView]) -> Vec<Reprojection> {
    others
        .par_iter()
        .map(|o| reproject_depth(&reference.camera, &o.camera, &reference.depth, &o.depth))
        .collect()
}

fn mask_from(reference: &FusionView, table: &[Reprojection], params: &FusionParams) -> ConsistencyMask {
    let (h, w) = (reference.depth.height(), reference.depth.width());
    let counts: Vec<usize> = (0..h * w)
        .map(|px| table.iter().filter(|r| params.agrees(r, px)).count())
        .collect();
    let kept = counts
        .iter()
        .zip(reference.depth.valid_mask())
        .map(|(&c, &ok)| ok && c >= params.min_views)
        .collect();
    ConsistencyMask {
        height: h,
        width: w,
        kept,
        counts,
    }
}

pub fn consistency_mask(
    reference: &FusionView,
    others: &[&FusionView],
    params: &FusionParams,
) -> Result<ConsistencyMask> {
    params.validate()?;
    if others.is_empty() {
        return Err(Error::usage("consistency check needs at least one other view"));
    }
    Ok(mask_from(reference, &reprojections(reference, others), params))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    /// View the point was seeded from.
    pub source_view: Vec<usize>,
    /// Seed pixel `(row, col)` in that view.
    pub source_pixel: Vec<(usize, usize)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fuses all views into one cloud. Views are visited in order and pixels
/// row-major; each kept pixel becomes the mean of its own 3D point and the
/// points of its consistent correspondences, which are then consumed.
/// Should the mean reproject `tau` or more away from the seed pixel, the
/// seed's own point is used instead.
pub fn fuse(views: &[FusionView], params: &FusionParams) -> Result<PointCloud> {
    params.validate()?;
    if views.len() < params.min_views + 1 {
        return Err(Error::usage(format!(
            "fusion with min_views = {} needs at least {} views, got {}",
            params.min_views,
            params.min_views + 1,
            views.len()
        )));
    }
    for v in views {
        if (v.image.height(), v.image.width()) != (v.depth.height(), v.depth.width()) {
            return Err(Error::usage("fusion image and depth map sizes differ"));
        }
    }
    let tables: Vec<Vec<Reprojection>> = views
        .par_iter()
        .enumerate()
        .map(|(r, reference)| {
            let others: Vec<&FusionView> = views
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != r)
                .map(|(_, v)| v)
                .collect();
            reprojections(reference, &others)
        })
        .collect();

    let mut consumed: Vec<Vec<bool>> = views
        .iter()
        .map(|v| vec![false; v.depth.height() * v.depth.width()])
        .collect();
    let mut cloud = PointCloud::default();
    for (r, view) in views.iter().enumerate() {
        let mask = mask_from(view, &tables[r], params);
        let w = view.depth.width();
        for px in 0..mask.kept.len() {
            if !mask.kept[px] || consumed[r][px] {
                continue;
            }
            let (i, j) = (px / w, px % w);
            let seed = view.camera.lift(j as f64, i as f64, view.depth.get(i, j));
            let mut sum = seed;
            let mut n = 1.0;
            for (slot, table) in tables[r].iter().enumerate() {
                if !params.agrees(table, px) {
                    continue;
                }
                let o = if slot < r { slot } else { slot + 1 };
                let p = table.source_point[px];
                sum += Vector3::new(p[0], p[1], p[2]);
                n += 1.0;
                let [x, y] = table.source_pixel[px];
                let (si, sj) = (y.round() as usize, x.round() as usize);
                let ow = views[o].depth.width();
                if si < views[o].depth.height() && sj < ow {
                    consumed[o][si * ow + sj] = true;
                }
            }
            consumed[r][px] = true;
            let mean = sum / n;
            let point = match view.camera.project(&mean) {
                Some((x, y, _)) if (x - j as f64).hypot(y - i as f64) < params.reprojection_threshold => mean,
                _ => seed,
            };
            if point.iter().all(|c| c.is_finite()) {
                cloud.points.push([point.x, point.y, point.z]);
                cloud.colors.push(view.image.rgb8(i, j));
                cloud.source_view.push(r);
                cloud.source_pixel.push((i, j));
            }
        }
    }
    Ok(cloud)
}

pub fn ply_header(vertices: usize) -> String {
    format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {vertices}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
}

/// Binary little-endian PLY, 15 bytes per vertex after [`ply_header`].
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = ply_header(cloud.len()).into_bytes();
    out.reserve(15 * cloud.len());
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ply(cloud))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_view(offset_x: f64, depth: f64) -> FusionView {
        let camera = CameraModel::simple(40.0, 15.5, 11.5, 1.0, 10.0)
            .unwrap()
            .with_center(Vector3::new(offset_x, 0.0, 0.0))
            .unwrap();
        FusionView {
            camera,
            depth: DepthMap::from_fn(24, 32, |_, _| depth).unwrap(),
            image: Image::from_fn(3, 24, 32, |c, i, j| ((c + i + j) % 7) as f64 / 7.0).unwrap(),
        }
    }

    #[test]
    fn identical_views_give_one_point_per_pixel() {
        let views = vec![plane_view(0.0, 4.0), plane_view(0.0, 4.0)];
        let cloud = fuse(&views, &FusionParams::new(1, 0.25, 0.01).unwrap()).unwrap();
        assert_eq!(cloud.len(), 24 * 32);
        assert!(cloud.points.iter().all(|p| (p[2] - 4.0).abs() < 1e-6));
        assert!(cloud.source_view.iter().all(|&v| v == 0));
    }

    #[test]
    fn relative_depth_threshold() {
        let a = plane_view(0.0, 4.0);
        let b = plane_view(0.0, 4.0 * 1.02);
        let m = consistency_mask(&a, &[&b], &FusionParams::new(1, 0.25, 0.01).unwrap()).unwrap();
        assert!(m.counts.iter().all(|&c| c == 0));
        let loose = FusionParams::new(1, 0.25, 0.03).unwrap();
        let m = consistency_mask(&a, &[&b], &loose).unwrap();
        assert!(m.kept.iter().all(|&k| k));
    }

    #[test]
    fn zero_threshold_keeps_nothing() {
        let views = vec![plane_view(0.0, 4.0), plane_view(0.3, 4.0), plane_view(-0.3, 4.0)];
        let cloud = fuse(&views, &FusionParams::new(2, 0.0, 0.01).unwrap()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn too_few_views() {
        let views = vec![plane_view(0.0, 4.0), plane_view(0.3, 4.0)];
        assert!(fuse(&views, &FusionParams::default()).is_err());
    }

    #[test]
    fn ply_sizes() {
        let empty = encode_ply(&PointCloud::default());
        assert_eq!(empty, ply_header(0).into_bytes());
        let one = PointCloud {
            points: vec![[1.0, -2.0, 3.5]],
            colors: vec![[1, 2, 3]],
            source_view: vec![0],
            source_pixel: vec![(0, 0)],
        };
        let bytes = encode_ply(&one);
        assert_eq!(bytes.len(), ply_header(1).len() + 15);
        assert_eq!(&bytes[bytes.len() - 3..], &[1, 2, 3]);
        assert_eq!(&bytes[bytes.len() - 7..bytes.len() - 3], &3.5f32.to_le_bytes());
    }
}
