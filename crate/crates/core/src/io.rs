//! File formats: PFM depth maps, PNG images and depth previews, camera text
//! files (native and MVSNet-style), raw score-volume dumps. Every writer goes
//! through a temporary file in the target directory and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::raster::Image;
use crate::volumes::{DepthMap, ScoreVolume};

/// Planes assumed when an MVSNet camera file gives only `depth_min depth_interval`.
pub const MVSNET_DEFAULT_PLANES: usize = 192;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Single-channel little-endian PFM (`Pf`, scale -1), rows stored bottom to top.
/// Invalid pixels are written as 0.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (h, w) = (depth.height(), depth.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for i in (0..h).rev() {
        for j in 0..w {
            let v = if depth.is_valid(i, j) {
                depth.get(i, j) as f32
            } else {
                0.0
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_atomic(path, &encode_pfm(depth))
}

/// Reads `Pf` files of either endianness. Non-positive or non-finite samples are invalid.
pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = read_bytes(path)?;
    let mut offset = 0;
    let mut header = Vec::new();
    for line_no in 1..=3 {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, line_no, "truncated header"))?;
        header.push(String::from_utf8_lossy(&bytes[offset..offset + end]).trim().to_string());
        offset += end + 1;
    }
    if header[0] != "Pf" {
        return Err(Error::parse(path, 1, format!("expected 'Pf', found '{}'", header[0])));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 2, "bad dimensions"))?;
    let [w, h] = dims[..] else {
        return Err(Error::parse(path, 2, "expected width and height"));
    };
    let scale: f64 = header[2].parse().map_err(|_| Error::parse(path, 3, "bad scale"))?;
    let little = scale < 0.0;
    let payload = &bytes[offset..];
    if payload.len() != 4 * w * h {
        return Err(Error::parse(
            path,
            4,
            format!("payload has {} bytes, expected {}", payload.len(), 4 * w * h),
        ));
    }
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        } as f64;
        let (row, j) = (h - 1 - k / w, k % w);
        let px = row * w + j;
        if v.is_finite() && v > 0.0 {
            depth[px] = v;
            valid[px] = true;
        }
    }
    DepthMap::new(h, w, depth, valid)
}

/// 16-bit preview: valid depths map linearly onto 1..=65535, invalid pixels to 0.
pub fn depth_preview(depth: &DepthMap, range: Option<(f64, f64)>) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let (lo, hi) = range.unwrap_or_else(|| {
        let valid = depth
            .depths()
            .iter()
            .zip(depth.valid_mask())
            .filter(|(_, ok)| **ok)
            .map(|(d, _)| *d);
        valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |x, y| {
        let (i, j) = (y as usize, x as usize);
        if !depth.is_valid(i, j) {
            return Luma([0]);
        }
        let t = ((depth.get(i, j) - lo) / span).clamp(0.0, 1.0);
        Luma([(t * 65534.0).round() as u16 + 1])
    })
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_depth_preview(path: &Path, depth: &DepthMap) -> Result<()> {
    write_atomic(
        path,
        &encode_png(DynamicImage::ImageLuma16(depth_preview(depth, None)))?,
    )
}

/// Writes 1-channel images as 16-bit gray and 3-channel images as 16-bit RGB.
pub fn write_image_png16(path: &Path, img: &Image) -> Result<()> {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([q(img.get(0, y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            let (i, j) = (y as usize, x as usize);
            Rgb([q(img.get(0, i, j)), q(img.get(1, i, j)), q(img.get(2, i, j))])
        })),
        c => return Err(Error::usage(format!("cannot write a {c}-channel image as PNG"))),
    };
    write_atomic(path, &encode_png(dynamic)?)
}

/// Loads any format the image crate decodes into gray or RGB in [0, 1].
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_bytes(path)?;
    let dynamic = image::load_from_memory(&bytes)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().has_color() {
        let rgb = dynamic.into_rgb16();
        let data = (0..3)
            .flat_map(|c| rgb.pixels().map(move |p| p.0[c] as f64 / 65535.0))
            .collect();
        Image::new(3, h, w, data)
    } else {
        let gray = dynamic.into_luma16();
        Image::new(1, h, w, gray.pixels().map(|p| p.0[0] as f64 / 65535.0).collect())
    }
}

/// Numbers on the non-blank, non-comment lines of a text file, with line numbers.
fn data_lines(path: &Path, text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let values = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, k + 1, format!("'{t}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((k + 1, values));
    }
    Ok(out)
}

/// Native camera file: four data lines holding `K` (9 values, row-major),
/// `R` (9 values, world to camera), `t` (3 values) and `depth_min depth_max`.
/// `#` starts a comment; blank lines are ignored.
pub fn parse_camera(path: &Path, text: &str) -> Result<CameraModel> {
    let lines = data_lines(path, text)?;
    let expected = [("K", 9), ("R", 9), ("t", 3), ("depth range", 2)];
    if lines.len() != expected.len() {
        let line = lines.get(expected.len()).map_or(text.lines().count().max(1), |l| l.0);
        return Err(Error::parse(
            path,
            line,
            format!("expected 4 data lines, found {}", lines.len()),
        ));
    }
    for ((line, values), (name, n)) in lines.iter().zip(expected) {
        if values.len() != n {
            return Err(Error::parse(
                path,
                *line,
                format!("{name} needs {n} values, found {}", values.len()),
            ));
        }
    }
    let k = Matrix3::from_row_slice(&lines[0].1);
    let r = Matrix3::from_row_slice(&lines[1].1);
    let t = Vector3::from_row_slice(&lines[2].1);
    CameraModel::new(k, r, t, lines[3].1[0], lines[3].1[1]).map_err(|e| Error::parse(path, lines[0].0, e.to_string()))
}

pub fn format_camera(cam: &CameraModel) -> String {
    let row = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ");
    let k: Vec<f64> = cam.k().transpose().iter().copied().collect();
    let r: Vec<f64> = cam.r().transpose().iter().copied().collect();
    let t: Vec<f64> = cam.t().iter().copied().collect();
    format!(
        "# K (row-major)\n{}\n# R world-to-camera (row-major)\n{}\n# t\n{}\n# depth_min depth_max\n{}\n",
        row(&k),
        row(&r),
        row(&t),
        row(&[cam.depth_min(), cam.depth_max()])
    )
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    write_atomic(path, format_camera(cam).as_bytes())
}

/// MVSNet camera file: `extrinsic` + 4x4 world-to-camera matrix, `intrinsic` +
/// 3x3 matrix, then `depth_min depth_interval [depth_num [depth_max]]`.
pub fn parse_mvsnet_camera(path: &Path, text: &str) -> Result<CameraModel> {
    let mut numbers: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut section = "";
    let mut extrinsic = Vec::new();
    let mut intrinsic = Vec::new();
    let mut first_ext = 0;
    for (k, line) in text.lines().enumerate() {
        let content = line.trim();
        match content {
            "" => continue,
            "extrinsic" | "intrinsic" => {
                section = if content == "extrinsic" { "e" } else { "i" };
                if section == "e" {
                    first_ext = k + 1;
                }
                continue;
            }
            _ => {}
        }
        let values = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, k + 1, format!("'{t}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match section {
            "e" if extrinsic.len() < 16 => extrinsic.extend(values),
            "i" if intrinsic.len() < 9 => intrinsic.extend(values),
            "e" | "i" => numbers.push((k + 1, values)),
            _ => return Err(Error::parse(path, k + 1, "data before the extrinsic block")),
        }
    }
    if extrinsic.len() != 16 {
        return Err(Error::parse(path, first_ext.max(1), "extrinsic block needs 16 values"));
    }
    if intrinsic.len() != 9 {
        return Err(Error::parse(
            path,
            text.lines().count(),
            "intrinsic block needs 9 values",
        ));
    }
    let (line, depth) = numbers
        .first()
        .ok_or_else(|| Error::parse(path, text.lines().count(), "missing depth line"))?;
    let (lo, hi) = match depth[..] {
        [lo, step] => (lo, lo + step * (MVSNET_DEFAULT_PLANES - 1) as f64),
        [lo, step, n] => (lo, lo + step * (n - 1.0)),
        [lo, _, _, hi] => (lo, hi),
        _ => return Err(Error::parse(path, *line, "depth line needs 2 to 4 values")),
    };
    let r = Matrix3::new(
        extrinsic[0],
        extrinsic[1],
        extrinsic[2],
        extrinsic[4],
        extrinsic[5],
        extrinsic[6],
        extrinsic[8],
        extrinsic[9],
        extrinsic[10],
    );
    let t = Vector3::new(extrinsic[3], extrinsic[7], extrinsic[11]);
    let k = Matrix3::from_row_slice(&intrinsic);
    CameraModel::new(k, r, t, lo, hi).map_err(|e| Error::parse(path, first_ext, e.to_string()))
}

/// Reads a camera file in either format (MVSNet files start with `extrinsic`).
pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let text = read_text(path)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    if first == Some("extrinsic") {
        parse_mvsnet_camera(path, &text)
    } else {
        parse_camera(path, &text)
    }
}

/// Debug dump: `P M N` as little-endian u32, then f32 values label-major.
pub fn encode_volume(v: &ScoreVolume) -> Vec<u8> {
    let (p, m, n) = v.shape();
    let mut out = Vec::with_capacity(12 + 4 * p * m * n);
    for d in [p, m, n] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in v.as_slice() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn write_volume(path: &Path, v: &ScoreVolume) -> Result<()> {
    write_atomic(path, &encode_volume(v))
}

pub fn read_volume(path: &Path) -> Result<ScoreVolume> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 12 {
        return Err(Error::parse(path, 1, "volume header truncated"));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (p, m, n) = (dim(0), dim(1), dim(2));
    if bytes.len() != 12 + 4 * p * m * n {
        return Err(Error::parse(path, 1, "volume payload size does not match its header"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ScoreVolume::new(p, m, n, data)
}

/// Layout of a scene directory.
#[derive(Clone, Debug)]
pub struct SceneLayout {
    pub root: PathBuf,
}

impl SceneLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn image(&self, view: usize) -> PathBuf {
        self.root.join("images").join(format!("{view:08}.png"))
    }

    pub fn camera(&self, view: usize) -> PathBuf {
        self.root.join("cams").join(format!("{view:08}_cam.txt"))
    }

    pub fn ground_truth(&self, view: usize) -> PathBuf {
        self.root.join("depth_gt").join(format!("{view:08}.pfm"))
    }

    pub fn depth(&self, view: usize) -> PathBuf {
        self.root.join("depth").join(format!("{view:08}.pfm"))
    }

    pub fn depth_preview(&self, view: usize) -> PathBuf {
        self.root.join("depth").join(format!("{view:08}.png"))
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pair.txt")
    }

    /// Number of views, counted as consecutive images starting at index 0.
    pub fn view_count(&self) -> usize {
        (0..).take_while(|&k| self.image(k).exists()).count()
    }

    pub fn create_dirs(&self) -> Result<()> {
        for sub in ["images", "cams", "depth_gt", "depth"] {
            let dir = self.root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

/// MVSNet `pair.txt`: view count, then for each view its index and a line
/// `count src score src score ...`. Returns the source list per reference.
pub fn read_pairs(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = read_text(path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let bad = |line: usize, msg: &str| Error::parse(path, line, msg.to_string());
    let (first_line, first) = *lines.first().ok_or_else(|| bad(1, "empty pair file"))?;
    let views: usize = first.parse().map_err(|_| bad(first_line, "bad view count"))?;
    if lines.len() < 1 + 2 * views {
        return Err(bad(lines.last().map_or(1, |l| l.0), "pair file truncated"));
    }
    let mut out = vec![Vec::new(); views];
    for v in 0..views {
        let (ln, idx) = lines[1 + 2 * v];
        let r: usize = idx.parse().map_err(|_| bad(ln, "bad reference index"))?;
        if r >= views {
            return Err(bad(ln, "reference index out of range"));
        }
        let (ln, entries) = lines[2 + 2 * v];
        let tokens: Vec<&str> = entries.split_whitespace().collect();
        let count: usize = tokens
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(ln, "bad source count"))?;
        if tokens.len() < 1 + 2 * count {
            return Err(bad(ln, "fewer sources than announced"));
        }
        out[r] = (0..count)
            .map(|k| tokens[1 + 2 * k].parse().map_err(|_| bad(ln, "bad source index")))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_with_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut d = DepthMap::from_fn(3, 4, |i, j| 1.5 + i as f64 * 0.25 + j as f64).unwrap();
        let mut mask = vec![true; 12];
        mask[5] = false;
        d.restrict(&mask);
        write_pfm(&path, &d).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.valid_mask(), d.valid_mask());
        for (k, &keep) in mask.iter().enumerate() {
            if keep {
                assert_eq!(back.depths()[k], d.depths()[k] as f32 as f64);
            }
        }
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n4 3\n-1.0\n"));
        assert_eq!(bytes.len(), 12 + 48);
    }

    #[test]
    fn camera_round_trip_and_errors() {
        let cam = CameraModel::simple(100.0, 63.5, 47.5, 2.0, 9.0)
            .unwrap()
            .with_center(Vector3::new(0.5, -0.25, 0.1))
            .unwrap();
        let text = format_camera(&cam);
        let back = parse_camera(Path::new("c.txt"), &text).unwrap();
        assert_eq!(back.k(), cam.k());
        assert_eq!(back.t(), cam.t());
        let broken = text.replace("2.00000000000000000e0 9", "2.0 x");
        match parse_camera(Path::new("c.txt"), &broken) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        let short = "1 0 0 0 1 0 0 0 1\n";
        assert!(matches!(
            parse_camera(Path::new("c.txt"), short),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn mvsnet_camera() {
        let text =
            "extrinsic\n1 0 0 0.5\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n100 0 64\n0 100 48\n0 0 1\n\n425 2.5\n";
        let cam = parse_mvsnet_camera(Path::new("m.txt"), text).unwrap();
        assert_eq!(cam.depth_min(), 425.0);
        assert_eq!(cam.depth_max(), 425.0 + 2.5 * 191.0);
        assert_eq!(cam.t().x, 0.5);
        let text4 = text.replace("425 2.5", "425 2.5 100 900");
        assert_eq!(
            parse_mvsnet_camera(Path::new("m.txt"), &text4).unwrap().depth_max(),
            900.0
        );
    }

    #[test]
    fn volume_dump_round_trip() {
        let v = ScoreVolume::from_fn(3, 2, 4, |p, i, j| p as f64 - 0.5 * i as f64 + 0.25 * j as f64).unwrap();
        let bytes = encode_volume(&v);
        assert_eq!(&bytes[..12], &[3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn preview_reserves_zero_for_invalid() {
        let mut d = DepthMap::from_fn(1, 3, |_, j| 1.0 + j as f64).unwrap();
        d.restrict(&[true, false, true]);
        let png = depth_preview(&d, None);
        assert_eq!(png.get_pixel(0, 0).0[0], 1);
        assert_eq!(png.get_pixel(1, 0).0[0], 0);
        assert_eq!(png.get_pixel(2, 0).0[0], 65535);
    }

    #[test]
    fn png16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let img = Image::from_fn(1, 5, 7, |_, i, j| (i * 7 + j) as f64 / 34.0).unwrap();
        write_image_png16(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn pairs_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pair.txt");
        fs::write(&path, "2\n0\n1 1 0.5\n1\n1 0 0.5\n").unwrap();
        assert_eq!(read_pairs(&path).unwrap(), vec![vec![1], vec![0]]);
    }
}
