//! Differentiable operations on a [`Tape`].

use std::rc::Rc;

use super::kernels::{self, mm_nt_raw, mm_raw, mm_tn_raw};
use super::tape::{OpClass, Tape, Var};
use super::{OpCounter, Tensor};
use crate::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn last_dim(op: &'static str, t: &Tensor) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| Error::shape(op, "scalar input"))
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        self.record(
            "add",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(|g, _, _| vec![g.clone(), g.clone()]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        self.record(
            "sub",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(|g, _, _| vec![g.clone(), g.map(|v| -v)]),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        self.record(
            "mul",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(|g, ins, _| vec![zip_map(g, ins[1], |p, q| p * q), zip_map(g, ins[0], |p, q| p * q)]),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.record(
            "scale",
            OpClass::Algebraic,
            &[a],
            out,
            Box::new(move |g, _, _| vec![g.map(|v| v * c)]),
        )
    }

    /// `a [.. × C] + b [C]`, broadcast over leading axes.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, bias) = (self.value(a), self.value(b));
        let c = last_dim("add_row", x)?;
        if bias.shape() != [c] {
            return Err(Error::shape("add_row", format!("bias {:?} vs last axis {c}", bias.shape())));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
        self.record(
            "add_row",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(move |g, _, _| {
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![g.clone(), Tensor::from_parts(vec![c], gb)]
            }),
        )
    }

    /// `a [.. × C] ⊙ s [C]`, scaling each column.
    pub fn mul_row(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, sc) = (self.value(a), self.value(s));
        let c = last_dim("mul_row", x)?;
        if sc.shape() != [c] {
            return Err(Error::shape("mul_row", format!("scale {:?} vs last axis {c}", sc.shape())));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, s) in row.iter_mut().zip(sc.data()) {
                *o *= s;
            }
        }
        self.record(
            "mul_row",
            OpClass::Algebraic,
            &[a, s],
            out,
            Box::new(move |g, ins, _| {
                let mut gx = g.clone();
                let mut gs = vec![0.0; c];
                for (grow, xrow) in gx.data_mut().chunks_mut(c).zip(ins[0].data().chunks(c)) {
                    for j in 0..c {
                        gs[j] += grow[j] * xrow[j];
                        grow[j] *= ins[1].data()[j];
                    }
                }
                vec![gx, Tensor::from_parts(vec![c], gs)]
            }),
        )
    }

    /// `x [C×H×W] + b [C]`, one bias per channel plane.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (t, bias) = (self.value(x), self.value(b));
        let &[c, h, w] = t.shape() else {
            return Err(Error::shape("add_channel", format!("expected C×H×W, got {:?}", t.shape())));
        };
        if bias.shape() != [c] {
            return Err(Error::shape("add_channel", format!("bias {:?} vs {c} channels", bias.shape())));
        }
        let hw = h * w;
        let mut out = t.clone();
        for (plane, bv) in out.data_mut().chunks_mut(hw).zip(bias.data()) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
        self.record(
            "add_channel",
            OpClass::Algebraic,
            &[x, b],
            out,
            Box::new(move |g, _, _| {
                let gb = g.data().chunks(hw).map(|p| p.iter().sum()).collect();
                vec![g.clone(), Tensor::from_parts(vec![c], gb)]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.record(
            "matmul",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(|g, ins, _| {
                let (m, k) = (ins[0].shape()[0], ins[0].shape()[1]);
                let n = ins[1].shape()[1];
                vec![
                    Tensor::from_parts(vec![m, k], mm_nt_raw(g.data(), ins[1].data(), m, n, k)),
                    Tensor::from_parts(vec![k, n], mm_tn_raw(ins[0].data(), g.data(), m, k, n)),
                ]
            }),
        )
    }

    /// `a · bᵀ` for `a [m×n]`, `b [k×n]`. Counts `m·n·k` mult-adds.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (&[m, n], &[k, n2]) = (x.shape(), y.shape()) else {
            return Err(Error::shape("matmul_nt", "expected matrices"));
        };
        if n != n2 {
            return Err(Error::shape("matmul_nt", format!("[{m}×{n}] · [{k}×{n2}]ᵀ")));
        }
        OpCounter::add(m as u128 * n as u128 * k as u128);
        let out = Tensor::from_parts(vec![m, k], mm_nt_raw(x.data(), y.data(), m, n, k));
        self.record(
            "matmul",
            OpClass::Algebraic,
            &[a, b],
            out,
            Box::new(move |g, ins, _| {
                vec![
                    Tensor::from_parts(vec![m, n], mm_raw(g.data(), ins[1].data(), m, k, n)),
                    Tensor::from_parts(vec![k, n], mm_tn_raw(g.data(), ins[0].data(), m, k, n)),
                ]
            }),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let &[r, c] = self.shape(a) else {
            return Err(Error::shape("transpose", format!("expected a matrix, got {:?}", self.shape(a))));
        };
        let idx: Vec<usize> = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather_named("transpose", a, vec![c, r], Rc::from(idx))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let g = kernels::conv_geom(self.value(x), self.value(w), pad)?;
        let out = kernels::conv2d(self.value(x), self.value(w), pad)?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        self.record(
            "conv2d",
            OpClass::Algebraic,
            &[x, w],
            out,
            Box::new(move |go, ins, _| {
                let (gx, gw) = kernels::conv2d_backward(ins[0].data(), ins[1].data(), go.data(), &g);
                vec![Tensor::from_parts(xs.clone(), gx), Tensor::from_parts(ws.clone(), gw)]
            }),
        )
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let g = kernels::depthwise_geom(self.value(x), self.value(w), pad)?;
        let out = kernels::depthwise_conv2d(self.value(x), self.value(w), pad)?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        self.record(
            "depthwise_conv2d",
            OpClass::Algebraic,
            &[x, w],
            out,
            Box::new(move |go, ins, _| {
                let (gx, gw) = kernels::depthwise_backward(ins[0].data(), ins[1].data(), go.data(), &g);
                vec![Tensor::from_parts(xs.clone(), gx), Tensor::from_parts(ws.clone(), gw)]
            }),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, saved) = kernels::layer_norm_raw(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let c = self.value(gamma).numel();
        self.record(
            "layer_norm",
            OpClass::Algebraic,
            &[x, gamma, beta],
            out,
            Box::new(move |g, ins, _| {
                let gam = ins[1].data();
                let mut gx = vec![0.0; g.numel()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (r, grow) in g.data().chunks(c).enumerate() {
                    let xh = &saved.xhat[r * c..(r + 1) * c];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        gg[j] += grow[j] * xh[j];
                        gb[j] += grow[j];
                        let d = grow[j] * gam[j];
                        s1 += d;
                        s2 += d * xh[j];
                    }
                    let is = saved.inv_std[r];
                    for j in 0..c {
                        let d = grow[j] * gam[j];
                        gx[r * c + j] = is * (d - s1 / c as f64 - xh[j] * s2 / c as f64);
                    }
                }
                vec![
                    Tensor::from_parts(ins[0].shape().to_vec(), gx),
                    Tensor::from_parts(vec![c], gg),
                    Tensor::from_parts(vec![c], gb),
                ]
            }),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(x));
        self.record(
            "gelu",
            OpClass::Exponential,
            &[x],
            out,
            Box::new(|g, ins, _| vec![zip_map(g, ins[0], |gv, xv| gv * kernels::gelu_grad_scalar(xv))]),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = kernels::sigmoid(self.value(x));
        self.record(
            "sigmoid",
            OpClass::Exponential,
            &[x],
            out,
            Box::new(|g, _, y| vec![zip_map(g, y, |gv, s| gv * s * (1.0 - s))]),
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(x))?;
        let n = last_dim("softmax", &out)?;
        self.record(
            "softmax",
            OpClass::Exponential,
            &[x],
            out,
            Box::new(move |g, _, y| {
                let mut gx = vec![0.0; g.numel()];
                for ((grow, yrow), orow) in g.data().chunks(n).zip(y.data().chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        orow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                vec![Tensor::from_parts(y.shape().to_vec(), gx)]
            }),
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let shape = self.shape(x).to_vec();
        self.record(
            "sum",
            OpClass::Algebraic,
            &[x],
            out,
            Box::new(move |g, _, _| vec![Tensor::full(shape.clone(), g.item())]),
        )
    }

    /// Column means of `x [n × C]`, giving `[C]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let &[n, c] = self.shape(x) else {
            return Err(Error::shape("mean_rows", format!("expected a matrix, got {:?}", self.shape(x))));
        };
        let mut m = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
        self.record(
            "mean_rows",
            OpClass::Algebraic,
            &[x],
            Tensor::from_parts(vec![c], m),
            Box::new(move |g, _, _| {
                let row: Vec<f64> = g.data().iter().map(|v| v / n as f64).collect();
                vec![Tensor::from_parts(vec![n, c], row.repeat(n))]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let out = self.value(x).clone().reshape(shape)?;
        let orig = self.shape(x).to_vec();
        self.record(
            "reshape",
            OpClass::Algebraic,
            &[x],
            out,
            Box::new(move |g, _, _| vec![Tensor::from_parts(orig.clone(), g.data().to_vec())]),
        )
    }

    /// `out[i] = x[index[i]]` reshaped to `shape`. Indices may repeat; the
    /// backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, shape: impl Into<Vec<usize>>, index: Rc<[usize]>) -> Result<Var> {
        self.gather_named("gather", x, shape.into(), index)
    }

    pub(crate) fn gather_named(
        &mut self,
        op: &'static str,
        x: Var,
        shape: Vec<usize>,
        index: Rc<[usize]>,
    ) -> Result<Var> {
        let src = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(op, format!("index length {} vs shape {shape:?}", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.numel()) {
            return Err(Error::shape(op, format!("index {bad} out of range {}", src.numel())));
        }
        let d = src.data();
        let out = Tensor::new(shape, index.iter().map(|&i| d[i]).collect())?;
        let in_shape = src.shape().to_vec();
        self.record(
            op,
            OpClass::Algebraic,
            &[x],
            out,
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; in_shape.iter().product()];
                for (&i, v) in index.iter().zip(g.data()) {
                    gx[i] += v;
                }
                vec![Tensor::from_parts(in_shape.clone(), gx)]
            }),
        )
    }

    /// Concatenates along the first axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{:?} vs trailing {tail:?}", t.shape())));
            }
            lead += t.shape()[0];
            sizes.push(t.numel());
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.record(
            "concat",
            OpClass::Algebraic,
            parts,
            Tensor::from_parts(shape, data),
            Box::new(move |g, ins, _| {
                let mut off = 0;
                ins.iter()
                    .zip(&sizes)
                    .map(|(t, &n)| {
                        let part = Tensor::from_parts(t.shape().to_vec(), g.data()[off..off + n].to_vec());
                        off += n;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// Concatenates matrices `[n × c_i]` side by side into `[n × Σc_i]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match *self.shape(p) {
                [r, c] if r == rows => widths.push(c),
                _ => return Err(Error::shape("concat_cols", format!("{:?} has wrong row count", self.shape(p)))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &c) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(&d[r * c..(r + 1) * c]);
            }
            off += c;
        }
        self.record(
            "concat_cols",
            OpClass::Algebraic,
            parts,
            Tensor::from_parts(vec![rows, total], out),
            Box::new(move |g, _, _| {
                let mut off = 0;
                widths
                    .iter()
                    .map(|&c| {
                        let mut part = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            part.extend_from_slice(&g.data()[r * total + off..r * total + off + c]);
                        }
                        off += c;
                        Tensor::from_parts(vec![rows, c], part)
                    })
                    .collect()
            }),
        )
    }

    /// Token matrix `[h·w × C]` to channel-first map `[C × h × w]`.
    pub fn tokens_to_map(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let &[n, c] = self.shape(x) else {
            return Err(Error::shape("tokens_to_map", format!("expected n×C, got {:?}", self.shape(x))));
        };
        if n != h * w {
            return Err(Error::shape("tokens_to_map", format!("{n} tokens do not fill {h}×{w}")));
        }
        let idx: Vec<usize> = (0..c).flat_map(|ch| (0..n).map(move |p| p * c + ch)).collect();
        self.gather_named("tokens_to_map", x, vec![c, h, w], Rc::from(idx))
    }

    /// Channel-first map `[C × h × w]` to token matrix `[h·w × C]`.
    pub fn map_to_tokens(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return Err(Error::shape("map_to_tokens", format!("expected C×H×W, got {:?}", self.shape(x))));
        };
        let n = h * w;
        let idx: Vec<usize> = (0..n).flat_map(|p| (0..c).map(move |ch| ch * n + p)).collect();
        self.gather_named("map_to_tokens", x, vec![n, c], Rc::from(idx))
    }

    /// Column block `[n × (hi − lo)]` of a matrix.
    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        let &[n, c] = self.shape(x) else {
            return Err(Error::shape("slice_cols", "expected a matrix"));
        };
        if lo >= hi || hi > c {
            return Err(Error::shape("slice_cols", format!("columns {lo}..{hi} of {c}")));
        }
        let idx: Vec<usize> = (0..n).flat_map(|r| (lo..hi).map(move |j| r * c + j)).collect();
        self.gather_named("slice_cols", x, vec![n, hi - lo], Rc::from(idx))
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let (c, h, w) = kernels::pixel_shuffle_dims(self.value(x), s)?;
        let idx = kernels::pixel_shuffle_index(c, h, w, s);
        self.gather_named("pixel_shuffle", x, vec![c, h * s, w * s], Rc::from(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Rng};

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn([2, 3], |i| i as f64));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn backward_of_sum_squares() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new([3], vec![1., 2., 3.]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2., 4., 6.]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones([2]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Backward(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones([2]));
        assert!(matches!(tape.backward(x), Err(Error::Backward(_))));
    }

    #[test]
    fn non_finite_names_op() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full([2], 1e300));
        let err = tape.mul(x, x).unwrap_err();
        assert!(err.to_string().starts_with("mul"), "{err}");
    }

    #[test]
    fn scopes_are_traced() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones([2, 2]));
        tape.scoped("outer", |t| t.scoped("inner", |t| t.sigmoid(x))).unwrap();
        let e = tape.trace().last().unwrap();
        assert_eq!(e.scope, "outer/inner");
        assert_eq!(e.class, OpClass::Exponential);
    }

    // Each primitive's gradient against central differences on random
    // 2–8 extent inputs.
    fn check(f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: Vec<Tensor>) {
        let r = grad_check(f, &inputs, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-5, "rel err {} {:?} {:?}", r.max_rel_error, r.per_input, inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>());
    }

    fn rnd(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
    }

    /// Weights the output so the scalar depends on every entry differently.
    fn weighted(t: &mut Tape, y: Var) -> Result<Var> {
        let mut r = Rng::new(t.value(y).numel() as u64);
        let w = Tensor::uniform(t.shape(y).to_vec(), 0.5, 1.5, &mut r);
        let w = t.constant(w);
        let p = t.mul(y, w)?;
        t.sum(p)
    }

    #[test]
    fn gradients_of_primitives() {
        let mut rng = Rng::new(11);
        for _ in 0..3 {
            let (m, k, n) = (2 + rng.below(7), 2 + rng.below(7), 2 + rng.below(7));
            check(|t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[k, n], &mut rng)]);
            check(|t, v| { let y = t.matmul_nt(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[n, k], &mut rng)]);
            check(|t, v| { let y = t.mul(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.sub(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.add_row(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[k], &mut rng)]);
            check(|t, v| { let y = t.mul_row(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[k], &mut rng)]);
            check(|t, v| { let y = t.transpose(v[0])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.mean_rows(v[0])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng)]);
            // Two features normalise to exactly ±1, leaving a ~0 gradient
            // that finite differences cannot resolve; use at least three.
            let kn = k.max(3);
            check(|t, v| { let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted(t, y) },
                vec![rnd(&[m, kn], &mut rng), rnd(&[kn], &mut rng), rnd(&[kn], &mut rng)]);
            check(|t, v| { let y = t.gelu(v[0])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.sigmoid(v[0])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.softmax_rows(v[0])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng)]);
            check(|t, v| { let y = t.concat_cols(&[v[0], v[1]])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[m, n], &mut rng)]);
            check(|t, v| { let y = t.concat(&[v[0], v[1]])?; weighted(t, y) }, vec![rnd(&[m, k], &mut rng), rnd(&[n, k], &mut rng)]);

            let (c, h, w) = (1 + rng.below(3), 2 + rng.below(7), 2 + rng.below(7));
            check(|t, v| { let y = t.conv2d(v[0], v[1], 1)?; weighted(t, y) }, vec![rnd(&[c, h, w], &mut rng), rnd(&[2, c, 3, 3], &mut rng)]);
            check(|t, v| { let y = t.depthwise_conv2d(v[0], v[1], 1)?; weighted(t, y) }, vec![rnd(&[c, h, w], &mut rng), rnd(&[c, 3, 3], &mut rng)]);
            check(|t, v| { let y = t.add_channel(v[0], v[1])?; weighted(t, y) }, vec![rnd(&[c, h, w], &mut rng), rnd(&[c], &mut rng)]);
            check(|t, v| { let y = t.pixel_shuffle(v[0], 2)?; weighted(t, y) }, vec![rnd(&[4 * c, h, w], &mut rng)]);
        }
    }
}
