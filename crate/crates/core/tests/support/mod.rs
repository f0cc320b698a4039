//! Thin wrappers that run library attention ops on plain tensors.
#![allow(dead_code)]

use std::rc::Rc;

use wavehit::attention::{self, relative_bias_index, DfeParams, WaScParams};
use wavehit::tensor::{Rng, Tape, Tensor};
use wavehit::windowing::WindowLayout;

/// Random attention weights for one window: `(table, fuse[head][level], proj)`.
pub fn wa_sc_weights(layout: &WindowLayout, width: usize, heads: usize, rng: &mut Rng) -> (Tensor, Vec<Vec<Tensor>>, Tensor) {
    let ch = width / heads;
    let t = (2 * layout.window_h - 1) * (2 * layout.window_w - 1);
    let table = Tensor::uniform([heads, t], -1.0, 1.0, rng);
    let fuse = (0..heads)
        .map(|_| (0..layout.dwt_levels).map(|_| Tensor::uniform([4 * ch, ch], -1.0, 1.0, rng)).collect())
        .collect();
    let proj = Tensor::uniform([width, width], -1.0, 1.0, rng);
    (table, fuse, proj)
}

pub fn wa_sc(q: &Tensor, v: &Tensor, layout: &WindowLayout, heads: usize, table: &Tensor, fuse: &[Vec<Tensor>], proj: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = WaScParams {
        heads,
        bias_table: tape.constant(table.clone()),
        fuse: fuse.iter().map(|f| f.iter().map(|t| tape.constant(t.clone())).collect()).collect(),
        proj: tape.constant(proj.clone()),
        bias_index: Rc::from(relative_bias_index(layout, heads)),
    };
    let (qv, vv) = (tape.constant(q.clone()), tape.constant(v.clone()));
    let out = attention::wa_sc(&mut tape, qv, vv, layout, &p).unwrap();
    tape.value(out).clone()
}

pub fn c_sc(q: &Tensor, v: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let (qv, vv) = (tape.constant(q.clone()), tape.constant(v.clone()));
    let out = attention::c_sc(&mut tape, qv, vv).unwrap();
    tape.value(out).clone()
}

/// Library DFE returning the `[C/2 × H × W]` query and value maps.
pub fn dfe_maps(x: &Tensor, lin_w: &Tensor, lin_b: &Tensor, wave_w: &Tensor, wave_b: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = DfeParams {
        linear_w: tape.constant(lin_w.clone()),
        linear_b: tape.constant(lin_b.clone()),
        wave_w: tape.constant(wave_w.clone()),
        wave_b: tape.constant(wave_b.clone()),
    };
    let xv = tape.constant(x.clone());
    let (q, v) = attention::dfe_maps(&mut tape, xv, &p).unwrap();
    (tape.value(q).clone(), tape.value(v).clone())
}
