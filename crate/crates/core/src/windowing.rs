//! Non-overlapping window partition/merge and the hierarchical per-layer
//! window schedule.

use std::rc::Rc;

use crate::network::ModelConfig;
use crate::tensor::kernels::reflect_index;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Window geometry of one transformer layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowLayout {
    pub layer_index: usize,
    pub window_h: usize,
    pub window_w: usize,
    pub base_h: usize,
    pub base_w: usize,
    /// Window extent relative to the base window.
    pub alpha: f64,
    /// Haar levels applied to the values; `0` when `alpha <= 1`.
    pub dwt_levels: usize,
}

impl WindowLayout {
    /// Layout of a `window` sized layer over a `base` window. When the
    /// window exceeds the base, it must be a power-of-two multiple of it so
    /// the values can be downsampled exactly back to the base resolution.
    pub fn new(layer_index: usize, window: (usize, usize), base: (usize, usize)) -> Result<Self> {
        let (h, w) = window;
        let (bh, bw) = base;
        if h == 0 || w == 0 || bh == 0 || bw == 0 {
            return Err(Error::Config("window extents must be positive".into()));
        }
        let alpha = h as f64 / bh as f64;
        let dwt_levels = if h <= bh && w <= bw {
            0
        } else {
            let ratio_h = h / bh;
            if h % bh != 0 || w % bw != 0 || ratio_h != w / bw || !ratio_h.is_power_of_two() {
                return Err(Error::Config(format!(
                    "window {h}×{w} is not a power-of-two multiple of base {bh}×{bw}"
                )));
            }
            ratio_h.trailing_zeros() as usize
        };
        Ok(WindowLayout {
            layer_index,
            window_h: h,
            window_w: w,
            base_h: bh,
            base_w: bw,
            alpha,
            dwt_levels,
        })
    }

    /// A layout with an explicit number of Haar levels, independent of any
    /// schedule.
    pub fn with_levels(window: (usize, usize), levels: usize) -> Result<Self> {
        let (h, w) = window;
        let step = 1usize << levels;
        if h == 0 || w == 0 || h % step != 0 || w % step != 0 {
            return Err(Error::Config(format!("window {h}×{w} not divisible by 2^{levels}")));
        }
        Ok(WindowLayout {
            layer_index: 0,
            window_h: h,
            window_w: w,
            base_h: h / step,
            base_w: w / step,
            alpha: step as f64,
            dwt_levels: levels,
        })
    }

    pub fn tokens(&self) -> usize {
        self.window_h * self.window_w
    }

    /// Extents of the downsampled value grid.
    pub fn downsampled(&self) -> (usize, usize) {
        (self.window_h >> self.dwt_levels, self.window_w >> self.dwt_levels)
    }

    pub fn downsampled_tokens(&self) -> usize {
        let (h, w) = self.downsampled();
        h * w
    }
}

/// Layout of layer `layer_index` under `config`.
pub fn schedule(config: &ModelConfig, layer_index: usize) -> Result<WindowLayout> {
    let size = *config.window_schedule.get(layer_index).ok_or_else(|| {
        Error::Config(format!(
            "layer index {layer_index} out of range for {} layers",
            config.window_schedule.len()
        ))
    })?;
    if layer_index >= config.layers_per_block {
        return Err(Error::Config(format!(
            "layer index {layer_index} out of range for {} layers",
            config.layers_per_block
        )));
    }
    WindowLayout::new(
        layer_index,
        (size, size),
        (config.base_window, config.base_window),
    )
}

/// What [`partition`] padded, so [`merge`] can undo it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadRecord {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl PadRecord {
    pub fn windows(&self, layout: &WindowLayout) -> usize {
        (self.padded_h / layout.window_h) * (self.padded_w / layout.window_w)
    }
}

fn pad_record(shape: &[usize], layout: &WindowLayout) -> Result<PadRecord> {
    let &[c, h, w] = shape else {
        return Err(Error::shape("partition", format!("expected C×H×W, got {shape:?}")));
    };
    let (wh, ww) = (layout.window_h, layout.window_w);
    if wh > 4 * h || ww > 4 * w {
        return Err(Error::shape(
            "partition",
            format!("window {wh}×{ww} exceeds four times the image extent {h}×{w}"),
        ));
    }
    Ok(PadRecord {
        channels: c,
        height: h,
        width: w,
        padded_h: h.div_ceil(wh) * wh,
        padded_w: w.div_ceil(ww) * ww,
    })
}

/// Source index in the unpadded `[C×H×W]` input of every element of the
/// `[N × h·w × C]` window stack.
fn partition_index(pad: &PadRecord, layout: &WindowLayout) -> Vec<usize> {
    let (wh, ww) = (layout.window_h, layout.window_w);
    let (nh, nw) = (pad.padded_h / wh, pad.padded_w / ww);
    let c = pad.channels;
    let mut idx = Vec::with_capacity(nh * nw * wh * ww * c);
    for wy in 0..nh {
        for wx in 0..nw {
            for py in 0..wh {
                let sy = reflect_index((wy * wh + py) as isize, pad.height);
                for px in 0..ww {
                    let sx = reflect_index((wx * ww + px) as isize, pad.width);
                    for ch in 0..c {
                        idx.push((ch * pad.height + sy) * pad.width + sx);
                    }
                }
            }
        }
    }
    idx
}

/// Source index in the window stack of every element of the merged,
/// cropped `[C×H×W]` map.
fn merge_index(pad: &PadRecord, layout: &WindowLayout) -> Vec<usize> {
    let (wh, ww) = (layout.window_h, layout.window_w);
    let nw = pad.padded_w / ww;
    let (c, n) = (pad.channels, wh * ww);
    let mut idx = Vec::with_capacity(c * pad.height * pad.width);
    for ch in 0..c {
        for y in 0..pad.height {
            for x in 0..pad.width {
                let win = (y / wh) * nw + x / ww;
                let p = (y % wh) * ww + x % ww;
                idx.push((win * n + p) * c + ch);
            }
        }
    }
    idx
}

fn check_windows(shape: &[usize], pad: &PadRecord, layout: &WindowLayout) -> Result<()> {
    let expect = [pad.windows(layout), layout.tokens(), pad.channels];
    if shape != expect
        || pad.padded_h % layout.window_h != 0
        || pad.padded_w % layout.window_w != 0
        || pad.padded_h < pad.height
        || pad.padded_w < pad.width
    {
        return Err(Error::shape(
            "merge",
            format!("windows {shape:?} inconsistent with pad record {pad:?}"),
        ));
    }
    Ok(())
}

/// Splits `x [C×H×W]` into `[N × h·w × C]` windows, reflect-padding H and W
/// up to multiples of the window. Windows and the pixels inside each window
/// are in row-major order.
pub fn partition(x: &Tensor, layout: &WindowLayout) -> Result<(Tensor, PadRecord)> {
    let pad = pad_record(x.shape(), layout)?;
    let idx = partition_index(&pad, layout);
    let d = x.data();
    let out = Tensor::new(
        vec![pad.windows(layout), layout.tokens(), pad.channels],
        idx.iter().map(|&i| d[i]).collect(),
    )?;
    Ok((out, pad))
}

/// Inverse of [`partition`], cropping the padding.
pub fn merge(windows: &Tensor, pad: &PadRecord, layout: &WindowLayout) -> Result<Tensor> {
    check_windows(windows.shape(), pad, layout)?;
    let idx = merge_index(pad, layout);
    let d = windows.data();
    Tensor::new(
        vec![pad.channels, pad.height, pad.width],
        idx.iter().map(|&i| d[i]).collect(),
    )
}

/// Tape version of [`partition`].
pub fn partition_var(tape: &mut Tape, x: Var, layout: &WindowLayout) -> Result<(Var, PadRecord)> {
    let pad = pad_record(tape.shape(x), layout)?;
    let idx = partition_index(&pad, layout);
    let shape = vec![pad.windows(layout), layout.tokens(), pad.channels];
    Ok((tape.gather(x, shape, Rc::from(idx))?, pad))
}

/// Tape version of [`merge`].
pub fn merge_var(tape: &mut Tape, windows: Var, pad: &PadRecord, layout: &WindowLayout) -> Result<Var> {
    check_windows(tape.shape(windows), pad, layout)?;
    let idx = merge_index(pad, layout);
    tape.gather(windows, vec![pad.channels, pad.height, pad.width], Rc::from(idx))
}

/// Row-slice `[h·w × C]` of window `i` of a `[N × h·w × C]` stack.
pub fn window_var(tape: &mut Tape, windows: Var, i: usize) -> Result<Var> {
    let &[n, t, c] = tape.shape(windows) else {
        return Err(Error::shape("window", "expected N×n×C"));
    };
    if i >= n {
        return Err(Error::shape("window", format!("window {i} of {n}")));
    }
    let base = i * t * c;
    tape.gather(windows, vec![t, c], Rc::from((base..base + t * c).collect::<Vec<_>>()))
}
