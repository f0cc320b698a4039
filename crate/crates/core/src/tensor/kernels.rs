//! Value-level kernels. Each counted kernel adds its exact mult-add count to
//! [`OpCounter`]; the `*_raw` and backward helpers are uncounted.

use super::{OpCounter, Tensor};
use crate::{Error, Result};

/// Layer-norm epsilon used throughout the network.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `sqrt(2 / pi)` in the tanh form of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient in the tanh form of GELU.
pub const GELU_CUBIC: f64 = 0.044_715;

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape()))),
    }
}

fn dims3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected C×H×W, got {:?}", t.shape()))),
    }
}

/// `a [m×k] · b [k×n]` without touching the counter.
pub(crate) fn mm_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a [m×n] · bᵀ` where `b` is `[k×n]`; result `[m×k]`.
pub(crate) fn mm_nt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · c` where `a` is `[m×k]` and `c` is `[m×n]`; result `[k×n]`.
pub(crate) fn mm_tn_raw(a: &[f64], c: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let crow = &c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o += av * cv;
            }
        }
    }
    out
}

/// Matrix product `[m×k] · [k×n]`. Counts `m·k·n` mult-adds.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner extents differ: [{m}×{k}] · [{k2}×{n}]"),
        ));
    }
    OpCounter::add(m as u128 * k as u128 * n as u128);
    Ok(Tensor::from_parts(vec![m, n], mm_raw(a.data(), b.data(), m, k, n)))
}

pub fn transpose2d(a: &Tensor) -> Result<Tensor> {
    let (r, c) = dims2("transpose", a)?;
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv_geom(x: &Tensor, wt: &Tensor, pad: usize) -> Result<ConvGeom> {
    let (cin, h, w) = dims3("conv2d", x)?;
    let [cout, wcin, k, k2] = *wt.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be C_out×C_in×k×k, got {:?}", wt.shape()),
        ));
    };
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, kernel expects {wcin}"),
        ));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {k}×{k2}")));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    Ok(ConvGeom {
        cin,
        cout,
        h,
        w,
        k,
        pad,
        oh: h + 2 * pad - k + 1,
        ow: w + 2 * pad - k + 1,
    })
}

pub(crate) fn conv2d_raw(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ConvGeom { cin, cout, h, w, k, pad, oh, ow } = *g;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        let oplane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let xplane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let xrow = &xplane[(iy - pad) * w..(iy - pad + 1) * w];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = ox + kx;
                            if ix >= pad && ix - pad < w {
                                *o += wv * xrow[ix - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a zero-padded cross-correlation: `(d input, d kernel)`.
pub(crate) fn conv2d_backward(x: &[f64], wt: &[f64], gout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let ConvGeom { cin, cout, h, w, k, pad, oh, ow } = *g;
    let mut gx = vec![0.0; cin * h * w];
    let mut gw = vec![0.0; cout * cin * k * k];
    for co in 0..cout {
        let gplane = &gout[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let xplane = &x[ci * h * w..(ci + 1) * h * w];
            let gxplane = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let row = (iy - pad) * w;
                        for ox in 0..ow {
                            let ix = ox + kx;
                            if ix >= pad && ix - pad < w {
                                let go = gplane[oy * ow + ox];
                                acc += go * xplane[row + ix - pad];
                                gxplane[row + ix - pad] += go * wv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw)
}

/// Cross-correlation with zero padding, stride 1.
///
/// Counts `C_out·C_in·k²·H'·W'` mult-adds.
pub fn conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, w, pad)?;
    OpCounter::add((g.cout * g.cin * g.k * g.k) as u128 * (g.oh * g.ow) as u128);
    Ok(Tensor::from_parts(vec![g.cout, g.oh, g.ow], conv2d_raw(x.data(), w.data(), &g)))
}

pub(crate) fn depthwise_geom(x: &Tensor, wt: &Tensor, pad: usize) -> Result<ConvGeom> {
    let (c, h, w) = dims3("depthwise_conv2d", x)?;
    let [wc, k, k2] = *wt.shape() else {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("kernel must be C×k×k, got {:?}", wt.shape()),
        ));
    };
    if wc != c {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("input has {c} channels, kernel has {wc}"),
        ));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape("depthwise_conv2d", "kernel must be square and odd"));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("depthwise_conv2d", "kernel larger than padded input"));
    }
    Ok(ConvGeom {
        cin: 1,
        cout: c,
        h,
        w,
        k,
        pad,
        oh: h + 2 * pad - k + 1,
        ow: w + 2 * pad - k + 1,
    })
}

/// Per-channel convolution, `x [C×H×W]`, `w [C×k×k]`.
/// Counts `C·k²·H'·W'` mult-adds.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Result<Tensor> {
    let g = depthwise_geom(x, w, pad)?;
    OpCounter::add((g.cout * g.k * g.k) as u128 * (g.oh * g.ow) as u128);
    Ok(Tensor::from_parts(
        vec![g.cout, g.oh, g.ow],
        depthwise_raw(x.data(), w.data(), &g),
    ))
}

fn single_channel(g: &ConvGeom) -> ConvGeom {
    ConvGeom { cin: 1, cout: 1, ..*g }
}

pub(crate) fn depthwise_raw(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
    let c = g.cout;
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let one = single_channel(g);
    let mut out = Vec::with_capacity(c * ohw);
    for ch in 0..c {
        out.extend(conv2d_raw(&x[ch * hw..(ch + 1) * hw], &wt[ch * kk..(ch + 1) * kk], &one));
    }
    out
}

pub(crate) fn depthwise_backward(x: &[f64], wt: &[f64], gout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let c = g.cout;
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let one = single_channel(g);
    let mut gx = Vec::with_capacity(c * hw);
    let mut gw = Vec::with_capacity(c * kk);
    for ch in 0..c {
        let (a, b) = conv2d_backward(
            &x[ch * hw..(ch + 1) * hw],
            &wt[ch * kk..(ch + 1) * kk],
            &gout[ch * ohw..(ch + 1) * ohw],
            &one,
        );
        gx.extend(a);
        gw.extend(b);
    }
    (gx, gw)
}

/// Normalised values and per-row inverse standard deviations, kept for the
/// backward pass.
pub(crate) struct LayerNormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_raw(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormSaved)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("layer_norm", "input is a scalar"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "last axis is {c} but gamma/beta are {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("layer_norm", "eps must be positive"));
    }
    let rows = x.numel() / c;
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..c {
            let xh = (row[j] - mean) * is;
            xhat[r * c + j] = xh;
            out[r * c + j] = xh * g[j] + b[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormSaved { xhat, inv_std },
    ))
}

/// Normalises over the last axis (biased variance), then applies `gamma`
/// and `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_raw(x, gamma, beta, eps).map(|(t, _)| t)
}

pub fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// GELU, tanh approximation:
/// `0.5·x·(1 + tanh(sqrt(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "input is a scalar"))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Source index of every output element of a pixel shuffle from
/// `[C·s² × H × W]` to `[C × sH × sW]`: output `(c, y·s+i, x·s+j)` reads
/// input channel `c·s² + i·s + j` at `(y, x)`.
pub fn pixel_shuffle_index(c: usize, h: usize, w: usize, s: usize) -> Vec<usize> {
    let (oh, ow) = (h * s, w * s);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let src_c = ch * s * s + (oy % s) * s + (ox % s);
                idx.push((src_c * h + oy / s) * w + ox / s);
            }
        }
    }
    idx
}

pub(crate) fn pixel_shuffle_dims(x: &Tensor, s: usize) -> Result<(usize, usize, usize)> {
    let (cs, h, w) = dims3("pixel_shuffle", x)?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cs} channels not divisible by scale² = {}", s * s),
        ));
    }
    Ok((cs / (s * s), h, w))
}

pub fn pixel_shuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = pixel_shuffle_dims(x, s)?;
    let idx = pixel_shuffle_index(c, h, w, s);
    let d = x.data();
    Ok(Tensor::from_parts(
        vec![c, h * s, w * s],
        idx.iter().map(|&i| d[i]).collect(),
    ))
}

/// Inverse of [`pixel_shuffle`]: `[C × sH × sW]` back to `[C·s² × H × W]`.
pub fn pixel_unshuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, sh, sw) = dims3("pixel_unshuffle", x)?;
    if s == 0 || sh % s != 0 || sw % s != 0 {
        return Err(Error::shape("pixel_unshuffle", "spatial extents not divisible by scale"));
    }
    let (h, w) = (sh / s, sw / s);
    let idx = pixel_shuffle_index(c, h, w, s);
    let mut out = vec![0.0; x.numel()];
    for (o, &i) in idx.iter().enumerate() {
        out[i] = x.data()[o];
    }
    Ok(Tensor::from_parts(vec![c * s * s, h, w], out))
}

/// Mirror-reflects `i` into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`), folding repeatedly for large offsets.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}
