//! Dual feature extraction and softmax-free self-correlation.
//!
//! Nothing on this path exponentiates: correlation maps are used directly
//! as aggregation weights.

use std::rc::Rc;

use crate::tensor::{Tape, Tensor, Var};
use crate::wavelet::{crop_var, dwt, dwt_downsample_var, idwt, reflect_pad_var};
use crate::windowing::WindowLayout;
use crate::{Error, Result};

/// Kernel size of the per-sub-band depthwise convolution in the wavelet
/// branch.
pub const WAVE_KERNEL: usize = 3;

/// Tape handles of the dual-feature-extraction weights for `C` channels.
#[derive(Clone, Copy, Debug)]
pub struct DfeParams {
    /// `[C × C]` per-pixel linear map (input-major: `y = x · W + b`).
    pub linear_w: Var,
    /// `[C]`
    pub linear_b: Var,
    /// `[4C × 3 × 3]` depthwise kernels, band-major (`ll`, `lh`, `hl`, `hh`).
    pub wave_w: Var,
    /// `[4C]`
    pub wave_b: Var,
}

/// Tape handles and precomputed geometry for one spatial self-correlation.
#[derive(Clone, Debug)]
pub struct WaScParams {
    pub heads: usize,
    /// `[heads × (2h−1)(2w−1)]` relative-position bias table.
    pub bias_table: Var,
    /// `fuse[head][level]`: `[4·C_h × C_h]` fusion weights.
    pub fuse: Vec<Vec<Var>>,
    /// `[C/2 × C/2]` output projection, no bias.
    pub proj: Var,
    /// Flattened `[heads × n × n↓]` index into `bias_table`.
    pub bias_index: Rc<[usize]>,
}

fn channel_slice(tape: &mut Tape, x: Var, lo: usize, hi: usize) -> Result<Var> {
    let &[_, h, w] = tape.shape(x) else {
        return Err(Error::shape("channel_slice", "expected C×H×W"));
    };
    let hw = h * w;
    let idx: Vec<usize> = (lo * hw..hi * hw).collect();
    tape.gather(x, vec![hi - lo, h, w], Rc::from(idx))
}

/// DFE on a channel-first map, returning the `[C/2 × H × W]` query and
/// value maps.
///
/// `X_ch` is a per-pixel linear map of `x`; `X_wave` reflect-pads to even
/// extents, takes one Haar level, applies a 3×3 depthwise convolution (plus
/// bias) to every sub-band channel, inverts the transform and crops. The
/// product `X_ch ⊙ X_wave` is split along channels into `[Q, V]`.
pub fn dfe_maps(tape: &mut Tape, x: Var, p: &DfeParams) -> Result<(Var, Var)> {
    tape.scoped("dfe", |tape| {
        let &[c, h, w] = tape.shape(x) else {
            return Err(Error::shape("dfe", format!("expected C×H×W, got {:?}", tape.shape(x))));
        };
        if c % 2 != 0 {
            return Err(Error::shape("dfe", format!("channel count {c} must be even")));
        }
        if tape.shape(p.linear_w) != [c, c] || tape.shape(p.wave_w) != [4 * c, WAVE_KERNEL, WAVE_KERNEL] {
            return Err(Error::shape("dfe", "parameter shapes do not match channel count"));
        }
        let tokens = tape.map_to_tokens(x)?;
        let lin = tape.matmul(tokens, p.linear_w)?;
        let lin = tape.add_row(lin, p.linear_b)?;
        let x_ch = tape.tokens_to_map(lin, h, w)?;

        let padded = reflect_pad_var(tape, x, h + h % 2, w + w % 2)?;
        let bands = dwt(tape, padded)?;
        let conv = tape.depthwise_conv2d(bands, p.wave_w, WAVE_KERNEL / 2)?;
        let conv = tape.add_channel(conv, p.wave_b)?;
        let x_wave = idwt(tape, conv)?;
        let x_wave = crop_var(tape, x_wave, h, w)?;

        let fused = tape.mul(x_ch, x_wave)?;
        let q = channel_slice(tape, fused, 0, c / 2)?;
        let v = channel_slice(tape, fused, c / 2, c)?;
        Ok((q, v))
    })
}

/// DFE returning token matrices `q, v : [H·W × C/2]`.
pub fn dfe(tape: &mut Tape, x: Var, p: &DfeParams) -> Result<(Var, Var)> {
    let (q, v) = dfe_maps(tape, x, p)?;
    Ok((tape.map_to_tokens(q)?, tape.map_to_tokens(v)?))
}

/// Size of one head's relative-position table for a `h × w` window.
pub fn bias_table_len(layout: &WindowLayout) -> usize {
    (2 * layout.window_h - 1) * (2 * layout.window_w - 1)
}

/// Table entry for query pixel `(py, px)` and downsampled value pixel
/// `(vy, vx)`; the value coordinate is mapped onto the query grid by `×2^k`.
fn bias_entry(layout: &WindowLayout, py: usize, px: usize, vy: usize, vx: usize) -> usize {
    let s = 1 << layout.dwt_levels;
    let (h, w) = (layout.window_h as isize, layout.window_w as isize);
    let dy = py as isize - (vy * s) as isize;
    let dx = px as isize - (vx * s) as isize;
    ((dy + h - 1) * (2 * w - 1) + dx + w - 1) as usize
}

/// Flattened `[heads × n × n↓]` index map into a `[heads × T]` table.
pub fn relative_bias_index(layout: &WindowLayout, heads: usize) -> Vec<usize> {
    let (h, w) = (layout.window_h, layout.window_w);
    let (dh, dw) = layout.downsampled();
    let t = bias_table_len(layout);
    let mut idx = Vec::with_capacity(heads * h * w * dh * dw);
    for j in 0..heads {
        for py in 0..h {
            for px in 0..w {
                for vy in 0..dh {
                    for vx in 0..dw {
                        idx.push(j * t + bias_entry(layout, py, px, vy, vx));
                    }
                }
            }
        }
    }
    idx
}

/// Expands a `[heads × (2h−1)(2w−1)]` table into the `[heads × n × n↓]`
/// bias added to the correlation maps.
pub fn relative_bias_lookup(layout: &WindowLayout, table: &Tensor) -> Result<Tensor> {
    let t = bias_table_len(layout);
    let &[heads, len] = table.shape() else {
        return Err(Error::shape("relative_bias_lookup", "table must be heads × entries"));
    };
    if len != t {
        return Err(Error::shape(
            "relative_bias_lookup",
            format!("table has {len} entries per head, window needs {t}"),
        ));
    }
    let idx = relative_bias_index(layout, heads);
    Tensor::new(
        vec![heads, layout.tokens(), layout.downsampled_tokens()],
        idx.iter().map(|&i| table.data()[i]).collect(),
    )
}

/// Wave-attention spatial self-correlation over one window.
///
/// Per head `j`: `V↓ = dwt_downsample(V_j)`, `M = Q_j·V↓ᵀ / C_h + B_j`, head
/// output `M·V↓`. Heads are concatenated and projected `C/2 → C/2`.
pub fn wa_sc(tape: &mut Tape, q: Var, v: Var, layout: &WindowLayout, p: &WaScParams) -> Result<Var> {
    tape.scoped("wa_sc", |tape| {
        let shape = tape.shape(q).to_vec();
        let &[n, cq] = shape.as_slice() else {
            return Err(Error::shape("wa_sc", format!("queries must be n×C, got {shape:?}")));
        };
        if tape.shape(v) != shape.as_slice() {
            return Err(Error::shape("wa_sc", format!("values {:?} vs queries {shape:?}", tape.shape(v))));
        }
        if n != layout.tokens() {
            return Err(Error::shape("wa_sc", format!("{n} tokens for a {}×{} window", layout.window_h, layout.window_w)));
        }
        if p.heads == 0 || cq % p.heads != 0 || p.fuse.len() != p.heads {
            return Err(Error::shape("wa_sc", format!("{cq} channels cannot split into {} heads", p.heads)));
        }
        if p.fuse.iter().any(|f| f.len() != layout.dwt_levels) {
            return Err(Error::shape("wa_sc", "fusion weights do not match the layout's Haar levels"));
        }
        let nd = layout.downsampled_tokens();
        let expected = [p.heads, bias_table_len(layout)];
        if tape.shape(p.bias_table) != expected || p.bias_index.len() != p.heads * n * nd {
            return Err(Error::shape("wa_sc", "bias table does not match the layout"));
        }
        let ch = cq / p.heads;
        let mut outs = Vec::with_capacity(p.heads);
        for j in 0..p.heads {
            let qj = tape.slice_cols(q, j * ch, (j + 1) * ch)?;
            let vj = tape.slice_cols(v, j * ch, (j + 1) * ch)?;
            let vd = dwt_downsample_var(tape, vj, (layout.window_h, layout.window_w), &p.fuse[j])?;
            let corr = tape.matmul_nt(qj, vd)?;
            let corr = tape.scale(corr, 1.0 / ch as f64)?;
            let span = j * n * nd..(j + 1) * n * nd;
            let bias = tape.gather(p.bias_table, vec![n, nd], Rc::from(&p.bias_index[span]))?;
            let corr = tape.add(corr, bias)?;
            outs.push(tape.matmul(corr, vd)?);
        }
        let cat = tape.concat_cols(&outs)?;
        tape.matmul(cat, p.proj)
    })
}

/// Channel self-correlation: `M_c = Qᵀ·V / n`, output `Q·M_c`.
pub fn c_sc(tape: &mut Tape, q: Var, v: Var) -> Result<Var> {
    tape.scoped("c_sc", |tape| {
        let shape = tape.shape(q).to_vec();
        let &[n, _] = shape.as_slice() else {
            return Err(Error::shape("c_sc", format!("queries must be n×C, got {shape:?}")));
        };
        if tape.shape(v) != shape.as_slice() {
            return Err(Error::shape("c_sc", format!("values {:?} vs queries {shape:?}", tape.shape(v))));
        }
        let qt = tape.transpose(q)?;
        let m = tape.matmul(qt, v)?;
        let m = tape.scale(m, 1.0 / n as f64)?;
        tape.matmul(q, m)
    })
}
