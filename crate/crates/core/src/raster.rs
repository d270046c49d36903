//! Plain multi-channel images and the bilinear sampler shared by warping,
//! reprojection and resampling.

use crate::error::{Error, Result};

/// Channel-major image with real-valued samples (intensities nominally in [0, 1]).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::usage(format!("empty image ({channels}x{height}x{width})")));
        }
        if data.len() != channels * height * width {
            return Err(Error::usage(format!(
                "image buffer has {} samples, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, height, width, data)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let len = self.height * self.width;
        &self.data[c * len..(c + 1) * len]
    }

    /// Luma for RGB (Rec. 601 weights), mean for other channel counts.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let len = self.height * self.width;
        let weights: Vec<f64> = if self.channels == 3 {
            vec![0.299, 0.587, 0.114]
        } else {
            vec![1.0 / self.channels as f64; self.channels]
        };
        let mut out = vec![0.0; len];
        for (c, w) in weights.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += w * v;
            }
        }
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data: out,
        }
    }

    /// Mean color of pixel (i, j) quantized to 8 bits per channel (gray replicated).
    pub fn rgb8(&self, i: usize, j: usize) -> [u8; 3] {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            3 => [q(self.get(0, i, j)), q(self.get(1, i, j)), q(self.get(2, i, j))],
            _ => {
                let g = q(self.get(0, i, j));
                [g, g, g]
            }
        }
    }

    /// Box-filter downsampling by an integer factor; output is `floor(h/f) x floor(w/f)`.
    pub fn area_downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 {
            return Err(Error::usage("downsample factor must be positive"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w) = (self.height / factor, self.width / factor);
        if h == 0 || w == 0 {
            return Err(Error::usage(format!(
                "image {}x{} too small for downsampling by {factor}",
                self.height, self.width
            )));
        }
        let norm = 1.0 / (factor * factor) as f64;
        Image::from_fn(self.channels, h, w, |c, i, j| {
            let mut acc = 0.0;
            for di in 0..factor {
                for dj in 0..factor {
                    acc += self.get(c, i * factor + di, j * factor + dj);
                }
            }
            acc * norm
        })
    }
}

/// Location of a bilinear sample: the top-left support pixel and fractional offsets.
///
/// Integer coordinates address pixel centers. A coordinate on the last row or
/// column is valid and uses a single support pixel in that axis.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTap {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

impl BilinearTap {
    pub fn new(x: f64, y: f64, height: usize, width: usize) -> Option<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        // Snap round-off just outside the pixel-center grid back onto it.
        const SNAP: f64 = 1e-9;
        let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
        if x < -SNAP || y < -SNAP || x > xmax + SNAP || y > ymax + SNAP {
            return None;
        }
        let x = x.clamp(0.0, xmax);
        let y = y.clamp(0.0, ymax);
        let xf = x.floor();
        let yf = y.floor();
        let x0 = xf as usize;
        let y0 = yf as usize;
        let fx = x - xf;
        let fy = y - yf;
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        Some(Self { x0, y0, x1, y1, fx, fy })
    }

    /// Row-major linear indices of the four support pixels.
    pub fn indices(&self, width: usize) -> [usize; 4] {
        [
            self.y0 * width + self.x0,
            self.y0 * width + self.x1,
            self.y1 * width + self.x0,
            self.y1 * width + self.x1,
        ]
    }

    /// Interpolate a single plane stored row-major.
    pub fn sample(&self, plane: &[f64], width: usize) -> f64 {
        let [a, b, c, d] = self.indices(width);
        let top = if self.fx > 0.0 {
            plane[a] * (1.0 - self.fx) + plane[b] * self.fx
        } else {
            plane[a]
        };
        let bottom = if self.fx > 0.0 {
            plane[c] * (1.0 - self.fx) + plane[d] * self.fx
        } else {
            plane[c]
        };
        if self.fy > 0.0 {
            top * (1.0 - self.fy) + bottom * self.fy
        } else {
            top
        }
    }

    pub fn all_valid(&self, valid: &[bool], width: usize) -> bool {
        self.indices(width).iter().all(|&k| valid[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_affine_values() {
        let plane: Vec<f64> = (0..12).map(|k| (k % 4) as f64 * 2.0 + (k / 4) as f64).collect();
        let tap = BilinearTap::new(1.25, 0.5, 3, 4).unwrap();
        assert!((tap.sample(&plane, 4) - (2.5 + 0.5)).abs() < 1e-12);
        let edge = BilinearTap::new(3.0, 2.0, 3, 4).unwrap();
        assert_eq!(edge.sample(&plane, 4), 8.0);
        assert!(BilinearTap::new(3.0001, 0.0, 3, 4).is_none());
        assert!(BilinearTap::new(-0.0001, 0.0, 3, 4).is_none());
    }

    #[test]
    fn area_downsample_sizes() {
        let img = Image::from_fn(1, 96, 128, |_, i, j| (i + j) as f64).unwrap();
        let small = img.area_downsample(4).unwrap();
        assert_eq!((small.height(), small.width()), (24, 32));
        // mean of a 4x4 block of i+j starting at (0,0) is 3
        assert_eq!(small.get(0, 0, 0), 3.0);
        assert!(img.area_downsample(200).is_err());
    }

    #[test]
    fn gray_of_rgb_uses_luma() {
        let img = Image::from_fn(3, 1, 1, |c, _, _| [1.0, 0.0, 0.0][c]).unwrap();
        assert!((img.to_gray().get(0, 0, 0) - 0.299).abs() < 1e-15);
    }
}
