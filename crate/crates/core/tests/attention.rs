mod common;
mod support;

use wavehit::tensor::{Rng, Tensor};
use wavehit::windowing::WindowLayout;

#[test]
fn wa_sc_matches_oracle_on_small_windows() {
    let mut rng = Rng::new(11);
    let width = 4;
    let mut cases = Vec::new();
    for h in 1..=4 {
        for w in 1..=4 {
            cases.push((h, w, 0));
        }
    }
    for h in [2, 4] {
        for w in [2, 4] {
            cases.push((h, w, 1));
        }
    }
    for (h, w, k) in cases {
        let layout = WindowLayout::with_levels((h, w), k).unwrap();
        for heads in [1, 2] {
            let q = Tensor::uniform([h * w, width], -1.0, 1.0, &mut rng);
            let v = Tensor::uniform([h * w, width], -1.0, 1.0, &mut rng);
            let (table, fuse, proj) = support::wa_sc_weights(&layout, width, heads, &mut rng);
            let got = support::wa_sc(&q, &v, &layout, heads, &table, &fuse, &proj);
            let want = common::wa_sc(&q, &v, (h, w), heads, &table, &fuse, &proj);
            let err = common::max_rel_err(&got, &want);
            assert!(err < 1e-10, "{h}x{w} k={k} heads={heads}: {err:e}");
        }
    }
}

#[test]
fn c_sc_matches_oracle() {
    let mut rng = Rng::new(12);
    for _ in 0..5 {
        let q = Tensor::uniform([8, 4], -1.0, 1.0, &mut rng);
        let v = Tensor::uniform([8, 4], -1.0, 1.0, &mut rng);
        let err = common::max_rel_err(&support::c_sc(&q, &v), &common::c_sc(&q, &v));
        assert!(err < 1e-10, "{err:e}");
    }
}

#[test]
fn dfe_matches_oracle() {
    let mut rng = Rng::new(13);
    for (h, w) in [(8, 8), (7, 5)] {
        let x = Tensor::uniform([4, h, w], -1.0, 1.0, &mut rng);
        let lw = Tensor::uniform([4, 4], -1.0, 1.0, &mut rng);
        let lb = Tensor::uniform([4], -1.0, 1.0, &mut rng);
        let ww = Tensor::uniform([16, 3, 3], -1.0, 1.0, &mut rng);
        let wb = Tensor::uniform([16], -1.0, 1.0, &mut rng);
        let (q, v) = support::dfe_maps(&x, &lw, &lb, &ww, &wb);
        let (qo, vo) = common::dfe(&x, &lw, &lb, &ww, &wb);
        assert!(common::max_rel_err(&q, &qo) < 1e-10);
        assert!(common::max_rel_err(&v, &vo) < 1e-10);
    }
}
