use super::Image;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn paired_luma(op: &'static str, a: &Image, b: &Image) -> Result<(Image, Image)> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(Error::invalid(
            op,
            format!(
                "{}×{}×{} vs {}×{}×{}",
                a.width(),
                a.height(),
                a.channels(),
                b.width(),
                b.height(),
                b.channels()
            ),
        ));
    }
    Ok((a.luma(), b.luma()))
}

/// Peak signal-to-noise ratio in dB on luma; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = paired_luma("psnr", a, b)?;
    let n = ya.samples().len() as f64;
    let mse = ya.samples().iter().zip(yb.samples()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window, averaged over
/// every position where the window fits inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = paired_luma("ssim", a, b)?;
    let (w, h) = (ya.width(), ya.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid("ssim", format!("{w}×{h} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let (pa, pb) = (ya.samples(), yb.samples());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                for (dx, gx) in g.iter().enumerate() {
                    let k = gy * gx;
                    let i = (y0 + dy) * w + x0 + dx;
                    let (u, v) = (pa[i], pb[i]);
                    ma += k * u;
                    mb += k * v;
                    saa += k * u * u;
                    sbb += k * v * v;
                    sab += k * u * v;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
