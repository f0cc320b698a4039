//! Orthonormal 2D Haar transform and the wavelet value-downsampling path.
//!
//! For each 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2      lh = (a + b − c − d) / 2
//! hl = (a − b + c − d) / 2      hh = (a − b − c + d) / 2
//! ```
//!
//! The transform is orthonormal, so it preserves energy and its adjoint is
//! its inverse. On the tape the four bands are carried as one
//! `[4C × H/2 × W/2]` tensor in band-major order `ll, lh, hl, hh`.

use std::rc::Rc;

use crate::tensor::kernels::reflect_index;
use crate::tensor::{OpClass, OpCounter, Tape, Tensor, Var};
use crate::{Error, Result};

/// One decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    pub level: usize,
    /// Spatial extents of the input before any reflect padding; the inverse
    /// crops back to these.
    pub source_extent: (usize, usize),
}

impl SubbandSet {
    pub fn bands(&self) -> [&Tensor; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|b| b.sum_squares()).sum()
    }

    /// Band-major `[4C × H/2 × W/2]` stack.
    pub fn stacked(&self) -> Tensor {
        let mut data = Vec::with_capacity(4 * self.ll.numel());
        for b in self.bands() {
            data.extend_from_slice(b.data());
        }
        let s = self.ll.shape();
        Tensor::from_parts(vec![4 * s[0], s[1], s[2]], data)
    }

    fn from_stacked(t: Tensor, level: usize, source_extent: (usize, usize)) -> Self {
        let &[c4, h, w] = t.shape() else { unreachable!() };
        let c = c4 / 4;
        let n = c * h * w;
        let band = |i: usize| Tensor::from_parts(vec![c, h, w], t.data()[i * n..(i + 1) * n].to_vec());
        SubbandSet {
            ll: band(0),
            lh: band(1),
            hl: band(2),
            hh: band(3),
            level,
            source_extent,
        }
    }
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected C×H×W, got {:?}", t.shape()))),
    }
}

/// Forward Haar on even extents; output is the band-major stack.
fn dwt_raw(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let band = c * h2 * w2;
    let mut out = vec![0.0; 4 * band];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                let a = plane[2 * y * w + 2 * xx];
                let b = plane[2 * y * w + 2 * xx + 1];
                let cc = plane[(2 * y + 1) * w + 2 * xx];
                let d = plane[(2 * y + 1) * w + 2 * xx + 1];
                let o = (ch * h2 + y) * w2 + xx;
                out[o] = 0.5 * (a + b + cc + d);
                out[band + o] = 0.5 * (a + b - cc - d);
                out[2 * band + o] = 0.5 * (a - b + cc - d);
                out[3 * band + o] = 0.5 * (a - b - cc + d);
            }
        }
    }
    out
}

/// Inverse Haar from a band-major stack with `c` channels per band and
/// half-resolution extents `h2 × w2`.
fn idwt_raw(s: &[f64], c: usize, h2: usize, w2: usize) -> Vec<f64> {
    let (h, w) = (2 * h2, 2 * w2);
    let band = c * h2 * w2;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = (ch * h2 + y) * w2 + xx;
                let (ll, lh, hl, hh) = (s[o], s[band + o], s[2 * band + o], s[3 * band + o]);
                let base = ch * h * w;
                out[base + 2 * y * w + 2 * xx] = 0.5 * (ll + lh + hl + hh);
                out[base + 2 * y * w + 2 * xx + 1] = 0.5 * (ll + lh - hl - hh);
                out[base + (2 * y + 1) * w + 2 * xx] = 0.5 * (ll - lh + hl - hh);
                out[base + (2 * y + 1) * w + 2 * xx + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    out
}

/// Each output coefficient of either direction combines four inputs.
fn count_transform(numel: usize) {
    OpCounter::add(4 * numel as u128);
}

/// Haar decomposition of `x [C×H×W]`. Odd extents are rejected; see
/// [`haar_dwt2_reflect`].
pub fn haar_dwt2(x: &Tensor) -> Result<SubbandSet> {
    let (c, h, w) = chw("haar_dwt2", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "haar_dwt2",
            format!("extents {h}×{w} must be even (use reflect padding for odd inputs)"),
        ));
    }
    count_transform(x.numel());
    let stacked = Tensor::from_parts(vec![4 * c, h / 2, w / 2], dwt_raw(x.data(), c, h, w));
    Ok(SubbandSet::from_stacked(stacked, 1, (h, w)))
}

/// Haar decomposition after reflect-padding odd extents by one sample;
/// [`haar_idwt2`] crops the padding away.
pub fn haar_dwt2_reflect(x: &Tensor) -> Result<SubbandSet> {
    let (_, h, w) = chw("haar_dwt2", x)?;
    let padded = reflect_pad(x, h + h % 2, w + w % 2)?;
    let mut s = haar_dwt2(&padded)?;
    s.source_extent = (h, w);
    Ok(s)
}

/// Exact inverse of [`haar_dwt2`] / [`haar_dwt2_reflect`].
pub fn haar_idwt2(s: &SubbandSet) -> Result<Tensor> {
    let shape = s.ll.shape();
    let (c, h2, w2) = chw("haar_idwt2", &s.ll)?;
    if s.bands().iter().any(|b| b.shape() != shape) {
        return Err(Error::shape("haar_idwt2", "sub-bands differ in shape"));
    }
    let (oh, ow) = s.source_extent;
    if oh > 2 * h2 || ow > 2 * w2 || oh + 1 < 2 * h2 || ow + 1 < 2 * w2 {
        return Err(Error::shape(
            "haar_idwt2",
            format!("source extent {oh}×{ow} inconsistent with bands {h2}×{w2}"),
        ));
    }
    count_transform(c * 4 * h2 * w2);
    let full = Tensor::from_parts(vec![c, 2 * h2, 2 * w2], idwt_raw(s.stacked().data(), c, h2, w2));
    crop(&full, oh, ow)
}

/// Reflect-pads `x [C×H×W]` at the bottom/right to `ph × pw`.
pub fn reflect_pad(x: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let (c, h, w) = chw("reflect_pad", x)?;
    let idx = reflect_pad_index(c, h, w, ph, pw)?;
    Ok(Tensor::from_parts(vec![c, ph, pw], idx.iter().map(|&i| x.data()[i]).collect()))
}

pub fn crop(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (c, h, w) = chw("crop", x)?;
    let idx = crop_index(c, h, w, oh, ow)?;
    Ok(Tensor::from_parts(vec![c, oh, ow], idx.iter().map(|&i| x.data()[i]).collect()))
}

pub(crate) fn reflect_pad_index(c: usize, h: usize, w: usize, ph: usize, pw: usize) -> Result<Vec<usize>> {
    if ph < h || pw < w {
        return Err(Error::shape("reflect_pad", format!("{ph}×{pw} smaller than {h}×{w}")));
    }
    let mut idx = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let sy = reflect_index(y as isize, h);
            for x in 0..pw {
                idx.push((ch * h + sy) * w + reflect_index(x as isize, w));
            }
        }
    }
    Ok(idx)
}

pub(crate) fn crop_index(c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<usize>> {
    if oh > h || ow > w || oh == 0 || ow == 0 {
        return Err(Error::shape("crop", format!("cannot crop {h}×{w} to {oh}×{ow}")));
    }
    Ok((0..c)
        .flat_map(|ch| (0..oh).flat_map(move |y| (0..ow).map(move |x| (ch * h + y) * w + x)))
        .collect())
}

/// Tape op: Haar decomposition of an even-extent `[C×H×W]` into the
/// band-major `[4C × H/2 × W/2]` stack.
pub fn dwt(tape: &mut Tape, x: Var) -> Result<Var> {
    let (c, h, w) = chw("haar_dwt2", tape.value(x))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("haar_dwt2", format!("extents {h}×{w} must be even")));
    }
    count_transform(c * h * w);
    let out = Tensor::from_parts(vec![4 * c, h / 2, w / 2], dwt_raw(tape.value(x).data(), c, h, w));
    tape.record(
        "haar_dwt2",
        OpClass::Algebraic,
        &[x],
        out,
        Box::new(move |g, _, _| vec![Tensor::from_parts(vec![c, h, w], idwt_raw(g.data(), c, h / 2, w / 2))]),
    )
}

/// Tape op: inverse of [`dwt`].
pub fn idwt(tape: &mut Tape, bands: Var) -> Result<Var> {
    let (c4, h2, w2) = chw("haar_idwt2", tape.value(bands))?;
    if c4 % 4 != 0 {
        return Err(Error::shape("haar_idwt2", format!("{c4} channels is not four bands")));
    }
    let c = c4 / 4;
    count_transform(c4 * h2 * w2);
    let out = Tensor::from_parts(vec![c, 2 * h2, 2 * w2], idwt_raw(tape.value(bands).data(), c, h2, w2));
    tape.record(
        "haar_idwt2",
        OpClass::Algebraic,
        &[bands],
        out,
        Box::new(move |g, _, _| {
            vec![Tensor::from_parts(vec![c4, h2, w2], dwt_raw(g.data(), c, 2 * h2, 2 * w2))]
        }),
    )
}

/// Tape op: reflect-pad `[C×H×W]` at the bottom/right to `ph × pw`.
pub fn reflect_pad_var(tape: &mut Tape, x: Var, ph: usize, pw: usize) -> Result<Var> {
    let (c, h, w) = chw("reflect_pad", tape.value(x))?;
    if (ph, pw) == (h, w) {
        return Ok(x);
    }
    let idx = reflect_pad_index(c, h, w, ph, pw)?;
    tape.gather(x, vec![c, ph, pw], Rc::from(idx))
}

/// Tape op: keep the top-left `oh × ow` of `[C×H×W]`.
pub fn crop_var(tape: &mut Tape, x: Var, oh: usize, ow: usize) -> Result<Var> {
    let (c, h, w) = chw("crop", tape.value(x))?;
    if (oh, ow) == (h, w) {
        return Ok(x);
    }
    let idx = crop_index(c, h, w, oh, ow)?;
    tape.gather(x, vec![c, oh, ow], Rc::from(idx))
}

fn check_downsample(
    op: &'static str,
    v_shape: &[usize],
    window: (usize, usize),
    fuse_shapes: &[&[usize]],
) -> Result<usize> {
    let &[n, c] = v_shape else {
        return Err(Error::shape(op, format!("values must be n×C, got {v_shape:?}")));
    };
    let (h, w) = window;
    if n != h * w {
        return Err(Error::shape(op, format!("{n} tokens do not fill a {h}×{w} window")));
    }
    let levels = fuse_shapes.len();
    let step = 1usize << levels;
    if h % step != 0 || w % step != 0 {
        return Err(Error::shape(
            op,
            format!("window {h}×{w} not divisible by 2^{levels}"),
        ));
    }
    for s in fuse_shapes {
        if *s != [4 * c, c] {
            return Err(Error::shape(op, format!("fuse weight {s:?}, expected [{}, {c}]", 4 * c)));
        }
    }
    Ok(c)
}

/// Wavelet value downsampling: `levels = fuse.len()` repetitions of
/// {Haar decomposition, stack the four bands along channels, linear fusion
/// `4C → C`}. Zero levels is the identity.
///
/// `v` holds the `h·w` tokens of one window in row-major pixel order; the
/// result holds `(h/2^k)·(w/2^k)` tokens in the same order.
pub fn dwt_downsample(v: &Tensor, window: (usize, usize), fuse: &[Tensor]) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = fuse.iter().map(|f| f.shape()).collect();
    let c = check_downsample("dwt_downsample", v.shape(), window, &shapes)?;
    let (mut h, mut w) = window;
    let mut tokens = v.clone();
    for f in fuse {
        let map = crate::tensor::kernels::transpose2d(&tokens)?.reshape([c, h, w])?;
        let bands = haar_dwt2(&map)?.stacked();
        h /= 2;
        w /= 2;
        let stacked_tokens = crate::tensor::kernels::transpose2d(&bands.reshape([4 * c, h * w])?)?;
        tokens = crate::tensor::kernels::matmul(&stacked_tokens, f)?;
    }
    Ok(tokens)
}

/// Tape version of [`dwt_downsample`].
pub fn dwt_downsample_var(tape: &mut Tape, v: Var, window: (usize, usize), fuse: &[Var]) -> Result<Var> {
    let shapes: Vec<Vec<usize>> = fuse.iter().map(|&f| tape.shape(f).to_vec()).collect();
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    check_downsample("dwt_downsample", tape.shape(v), window, &refs)?;
    let (mut h, mut w) = window;
    let mut tokens = v;
    for &f in fuse {
        let map = tape.tokens_to_map(tokens, h, w)?;
        let bands = dwt(tape, map)?;
        h /= 2;
        w /= 2;
        let stacked = tape.map_to_tokens(bands)?;
        tokens = tape.matmul(stacked, f)?;
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Rng};

    fn block() -> Tensor {
        Tensor::new([1, 2, 2], vec![1., 2., 3., 4.]).unwrap()
    }

    #[test]
    fn constant_image_lives_in_ll() {
        let s = haar_dwt2(&Tensor::full([2, 6, 4], 0.75)).unwrap();
        assert!(s.ll.data().iter().all(|&v| v == 1.5));
        for b in [&s.lh, &s.hl, &s.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hand_block() {
        let s = haar_dwt2(&block()).unwrap();
        assert_eq!(
            (s.ll.item(), s.lh.item(), s.hl.item(), s.hh.item()),
            (5.0, -2.0, -1.0, 0.0)
        );
        assert_eq!(block().sum_squares(), 30.0);
        assert_eq!(s.energy(), 30.0);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = Rng::new(5);
        let x = Tensor::uniform([3, 16, 16], -1.0, 1.0, &mut rng);
        let y = haar_idwt2(&haar_dwt2(&x).unwrap()).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn ll_only_constant_and_zero_bands() {
        let x = Tensor::full([1, 4, 4], 0.3);
        let mut s = haar_dwt2(&x).unwrap();
        s.lh = Tensor::zeros(s.lh.shape().to_vec());
        s.hl = Tensor::zeros(s.hl.shape().to_vec());
        s.hh = Tensor::zeros(s.hh.shape().to_vec());
        assert!(haar_idwt2(&s).unwrap().max_abs_diff(&x) < 1e-15);

        let z = SubbandSet::from_stacked(Tensor::zeros([8, 3, 3]), 1, (6, 6));
        assert!(haar_idwt2(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_extents() {
        let x = Tensor::from_fn([2, 5, 7], |i| (i as f64 * 0.37).sin());
        assert!(haar_dwt2(&x).is_err());
        let s = haar_dwt2_reflect(&x).unwrap();
        assert_eq!(s.ll.shape(), &[2, 3, 4]);
        assert!(haar_idwt2(&s).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn idwt_shape_mismatch() {
        let mut s = haar_dwt2(&Tensor::ones([1, 4, 4])).unwrap();
        s.hh = Tensor::ones([1, 1, 2]);
        assert!(haar_idwt2(&s).is_err());
    }

    #[test]
    fn downsample_identity_and_token_counts() {
        let mut rng = Rng::new(2);
        let v = Tensor::uniform([64, 3], -1.0, 1.0, &mut rng);
        assert_eq!(dwt_downsample(&v, (8, 8), &[]).unwrap(), v);

        let fuse = Tensor::uniform([12, 3], -1.0, 1.0, &mut rng);
        let out = dwt_downsample(&v, (8, 8), &[fuse.clone()]).unwrap();
        assert_eq!(out.shape(), &[16, 3]);
        let out = dwt_downsample(&v, (8, 8), &[fuse.clone(), fuse.clone()]).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        assert!(dwt_downsample(&v, (8, 8), &vec![fuse.clone(); 4]).is_err());
        assert!(dwt_downsample(&v, (4, 16), &vec![fuse.clone(); 3]).is_err());
    }

    #[test]
    fn downsample_ll_selector_doubles_constant() {
        let c = 3;
        let mut sel = Tensor::zeros([4 * c, c]);
        for i in 0..c {
            sel.data_mut()[i * c + i] = 1.0;
        }
        let v = Tensor::full([16 * 16, c], 0.4);
        let one = dwt_downsample(&v, (16, 16), &[sel.clone()]).unwrap();
        assert!(one.data().iter().all(|&x| (x - 0.8).abs() < 1e-15));
        let two = dwt_downsample(&v, (16, 16), &[sel.clone(), sel]).unwrap();
        assert_eq!(two.shape(), &[16, c]);
        assert!(two.data().iter().all(|&x| (x - 1.6).abs() < 1e-15));
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let mut rng = Rng::new(9);
        let v = Tensor::uniform([32, 2], -1.0, 1.0, &mut rng);
        let f = Tensor::uniform([8, 2], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let vv = tape.constant(v.clone());
        let fv = tape.constant(f.clone());
        let out = dwt_downsample_var(&mut tape, vv, (4, 8), &[fv]).unwrap();
        let reference = dwt_downsample(&v, (4, 8), &[f]).unwrap();
        assert!(tape.value(out).max_abs_diff(&reference) < 1e-15);
    }

    #[test]
    fn gradients() {
        let mut rng = Rng::new(4);
        let v = Tensor::uniform([64, 2], -1.0, 1.0, &mut rng);
        let f1 = Tensor::uniform([8, 2], -1.0, 1.0, &mut rng);
        let f2 = Tensor::uniform([8, 2], -1.0, 1.0, &mut rng);
        let wts = Tensor::uniform([4, 2], 0.5, 1.5, &mut rng);
        let r = grad_check(
            |t, x| {
                let y = dwt_downsample_var(t, x[0], (8, 8), &[x[1], x[2]])?;
                let w = t.constant(wts.clone());
                let p = t.mul(y, w)?;
                t.sum(p)
            },
            &[v, f1, f2],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-5, "{:?}", r.per_input);

        let x = Tensor::uniform([2, 6, 4], -1.0, 1.0, &mut rng);
        let wts = Tensor::uniform([2, 6, 4], 0.5, 1.5, &mut rng);
        let r = grad_check(
            |t, x| {
                let b = dwt(t, x[0])?;
                let sq = t.mul(b, b)?;
                let y = idwt(t, sq)?;
                let w = t.constant(wts.clone());
                let p = t.mul(y, w)?;
                t.sum(p)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-5, "{}", r.max_rel_error);
    }

    #[test]
    fn transform_counts() {
        let x = Tensor::ones([3, 8, 6]);
        let (s, n) = OpCounter::measure(|| haar_dwt2(&x).unwrap()).unwrap();
        assert_eq!(n, 4 * 3 * 8 * 6);
        let (_, n) = OpCounter::measure(|| haar_idwt2(&s).unwrap()).unwrap();
        assert_eq!(n, 4 * 3 * 8 * 6);
    }
}
