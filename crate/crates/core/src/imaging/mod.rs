//! Images, binary PNM files, bicubic resampling, luma conversion and the
//! PSNR/SSIM pair.

mod metrics;
mod pnm;
mod resample;

pub use metrics::{psnr, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use resample::{bicubic_resize, cubic_kernel, CUBIC_A};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// BT.601 luma weights for R, G and B.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A planar image with 1 or 3 channels and samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl Image {
    /// `samples` is planar: channel, then row, then column.
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("dimensions must be positive, got {width}×{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("{channels} channels, expected 1 or 3")));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{} samples for {width}×{height}×{channels}",
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Image(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Image { width, height, channels, samples })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    /// From a `[C×H×W]` tensor, clamping samples into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::Image(format!("expected a C×H×W tensor, got {:?}", t.shape())));
        };
        Image::new(w, h, c, t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.channels, self.height, self.width], self.samples.clone())
            .expect("image dimensions are positive")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Plane `c` in row-major order.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.samples[(c * self.height + y) * self.width + x]
    }

    /// The `w × h` region with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::Image(format!(
                "crop {w}×{h} at ({x}, {y}) outside {}×{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for row in y..y + h {
                let start = (c * self.height + row) * self.width + x;
                out.extend_from_slice(&self.samples[start..start + w]);
            }
        }
        Image::new(w, h, self.channels, out)
    }

    /// A deterministic RGB test pattern: a few random oriented gratings plus
    /// axis-aligned rectangles, kept inside `[0.05, 0.95]`.
    pub fn synthetic(width: usize, height: usize, seed: u64) -> Result<Image> {
        let mut rng = crate::tensor::Rng::new(seed);
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                let angle = rng.uniform(0.0, std::f64::consts::PI);
                let freq = rng.uniform(0.15, 0.9);
                [freq * angle.cos(), freq * angle.sin(), rng.uniform(0.0, 6.3), rng.uniform(0.05, 0.15)]
            })
            .collect();
        let rects: Vec<[f64; 5]> = (0..3)
            .map(|_| {
                let (x, y) = (rng.uniform(0.0, width as f64), rng.uniform(0.0, height as f64));
                let (w, h) = (rng.uniform(3.0, width as f64 / 2.0), rng.uniform(3.0, height as f64 / 2.0));
                [x, y, x + w, y + h, rng.uniform(-0.25, 0.25)]
            })
            .collect();
        let tints: Vec<f64> = (0..3).map(|_| rng.uniform(0.8, 1.2)).collect();
        let mut samples = Vec::with_capacity(3 * width * height);
        for tint in &tints {
            for y in 0..height {
                for x in 0..width {
                    let (xf, yf) = (x as f64, y as f64);
                    let mut v = 0.5;
                    for [fx, fy, ph, amp] in &waves {
                        v += amp * (fx * xf + fy * yf + ph).sin();
                    }
                    for [x0, y0, x1, y1, d] in &rects {
                        if xf >= *x0 && xf < *x1 && yf >= *y0 && yf < *y1 {
                            v += d;
                        }
                    }
                    samples.push((0.5 + (v - 0.5) * tint).clamp(0.05, 0.95));
                }
            }
        }
        Image::new(width, height, 3, samples)
    }

    /// Luma for 3-channel images, the image itself for 1-channel ones.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            self.clone()
        } else {
            rgb_to_y(self).expect("three channels")
        }
    }
}

/// Full-range BT.601 luma `0.299 R + 0.587 G + 0.114 B`.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::Image(format!("luma needs 3 channels, got {}", img.channels)));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let y = (0..r.len())
        .map(|i| (LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i]).clamp(0.0, 1.0))
        .collect();
    Image::new(img.width, img.height, 1, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: f64, g: f64, b: f64) -> Image {
        Image::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn luma_examples() {
        assert!((rgb_to_y(&rgb(1.0, 1.0, 1.0)).unwrap().samples()[0] - 1.0).abs() < 1e-15);
        assert_eq!(rgb_to_y(&rgb(0.0, 1.0, 0.0)).unwrap().samples()[0], 0.587);
        for v in [0.0, 0.25, 0.7] {
            assert!((rgb_to_y(&rgb(v, v, v)).unwrap().samples()[0] - v).abs() < 1e-15);
        }
        assert!(rgb_to_y(&Image::filled(2, 2, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn construction_contract() {
        assert!(Image::new(0, 1, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        let img = Image::new(3, 2, 1, (0..6).map(|i| i as f64 / 10.0).collect()).unwrap();
        assert_eq!(img.crop(1, 1, 2, 1).unwrap().samples(), &[0.4, 0.5]);
        assert!(img.crop(2, 0, 2, 1).is_err());
        assert_eq!(Image::from_tensor(&img.to_tensor()).unwrap(), img);
    }
}
