use super::Image;
use crate::{Error, Result};

/// Cubic convolution parameter (Catmull-Rom / Keys).
pub const CUBIC_A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per output sample: the clamped source indices and normalized weights.
/// Downscaling widens the kernel by the inverse scale (antialiasing).
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = dst as f64 / src as f64;
    let shrink = scale.min(1.0);
    let support = 2.0 / shrink;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let wgt = shrink * cubic_kernel(shrink * (center - i as f64));
                if wgt == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, src as isize - 1) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable bicubic resampling to `out_w × out_h`, with edge clamping and
/// results clamped to `[0, 1]`.
pub fn bicubic_resize(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("bicubic_resize", format!("target {out_w}×{out_h}")));
    }
    let (w, h) = (img.width(), img.height());
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let mut rows = vec![0.0; h * out_w];
        for y in 0..h {
            for (x, taps) in wx.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(i, t)| t * plane[y * w + i]).sum();
            }
        }
        for taps in &wy {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, t)| t * rows[i * out_w + x]).sum();
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(out_w, out_h, img.channels(), out)
}
