//! Straight-line reference implementations used as test oracles. They share
//! no code with the library beyond `Tensor` storage.
#![allow(dead_code)]

use wavehit::tensor::Tensor;

pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Vec<Vec<f64>> {
    assert_eq!(data.len(), rows * cols);
    data.chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    let &[r, c] = t.shape() else { panic!("not a matrix: {:?}", t.shape()) };
    dense(r, c, t.data().to_vec())
}

pub fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `[C][H][W]` from a channel-first tensor.
pub fn planes(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let &[c, h, w] = t.shape() else { panic!("not C×H×W") };
    (0..c)
        .map(|ch| (0..h).map(|y| t.data()[(ch * h + y) * w..(ch * h + y + 1) * w].to_vec()).collect())
        .collect()
}

pub fn from_planes(p: &[Vec<Vec<f64>>]) -> Tensor {
    let (c, h, w) = (p.len(), p[0].len(), p[0][0].len());
    Tensor::new([c, h, w], p.iter().flatten().flatten().copied().collect()).unwrap()
}

/// Pixel tokens `[H·W][C]`.
pub fn to_tokens(p: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let (h, w) = (p[0].len(), p[0][0].len());
    (0..h * w).map(|i| p.iter().map(|pl| pl[i / w][i % w]).collect()).collect()
}

pub fn from_tokens(t: &[Vec<f64>], h: usize, w: usize) -> Vec<Vec<Vec<f64>>> {
    let c = t[0].len();
    (0..c).map(|ch| (0..h).map(|y| (0..w).map(|x| t[y * w + x][ch]).collect()).collect()).collect()
}

/// Haar analysis of one plane: `[ll, lh, hl, hh]` by the 2×2 block formulas.
pub fn haar(p: &[Vec<f64>]) -> [Vec<Vec<f64>>; 4] {
    let (h, w) = (p.len() / 2, p[0].len() / 2);
    let mut out: [Vec<Vec<f64>>; 4] = std::array::from_fn(|_| vec![vec![0.0; w]; h]);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (p[2 * y][2 * x], p[2 * y][2 * x + 1]);
            let (c, d) = (p[2 * y + 1][2 * x], p[2 * y + 1][2 * x + 1]);
            out[0][y][x] = (a + b + c + d) / 2.0;
            out[1][y][x] = (a + b - c - d) / 2.0;
            out[2][y][x] = (a - b + c - d) / 2.0;
            out[3][y][x] = (a - b - c + d) / 2.0;
        }
    }
    out
}

pub fn inverse_haar(b: &[Vec<Vec<f64>>; 4]) -> Vec<Vec<f64>> {
    let (h, w) = (b[0].len(), b[0][0].len());
    let mut p = vec![vec![0.0; 2 * w]; 2 * h];
    for y in 0..h {
        for x in 0..w {
            let (ll, lh, hl, hh) = (b[0][y][x], b[1][y][x], b[2][y][x], b[3][y][x]);
            p[2 * y][2 * x] = (ll + lh + hl + hh) / 2.0;
            p[2 * y][2 * x + 1] = (ll + lh - hl - hh) / 2.0;
            p[2 * y + 1][2 * x] = (ll - lh + hl - hh) / 2.0;
            p[2 * y + 1][2 * x + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
    p
}

/// Mirror index without repeating the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

pub fn reflect_plane(p: &[Vec<f64>], h: usize, w: usize) -> Vec<Vec<f64>> {
    let (sh, sw) = (p.len(), p[0].len());
    (0..h).map(|y| (0..w).map(|x| p[mirror(y as isize, sh)][mirror(x as isize, sw)]).collect()).collect()
}

/// 3×3 zero-padded cross-correlation of a plane.
pub fn conv3(p: &[Vec<f64>], k: &[f64]) -> Vec<Vec<f64>> {
    let (h, w) = (p.len() as isize, p[0].len() as isize);
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut s = 0.0;
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let (yy, xx) = (y + dy, x + dx);
                            if yy >= 0 && yy < h && xx >= 0 && xx < w {
                                s += p[yy as usize][xx as usize] * k[((dy + 1) * 3 + dx + 1) as usize];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// DFE: returns the `[C/2]` query and value planes.
pub fn dfe(x: &Tensor, lin_w: &Tensor, lin_b: &Tensor, wave_w: &Tensor, wave_b: &Tensor) -> (Tensor, Tensor) {
    let xp = planes(x);
    let (c, h, w) = (xp.len(), xp[0].len(), xp[0][0].len());
    let lw = mat(lin_w);
    let mut x_ch = matmul(&to_tokens(&xp), &lw);
    for row in &mut x_ch {
        for (v, b) in row.iter_mut().zip(lin_b.data()) {
            *v += b;
        }
    }
    let x_ch = from_tokens(&x_ch, h, w);
    let (ph, pw) = (h + h % 2, w + w % 2);
    let bands: Vec<_> = xp.iter().map(|pl| haar(&reflect_plane(pl, ph, pw))).collect();
    let mut out = vec![vec![vec![0.0; w]; h]; c];
    for ch in 0..c {
        let conv: [Vec<Vec<f64>>; 4] = std::array::from_fn(|b| {
            let idx = b * c + ch;
            let k = &wave_w.data()[idx * 9..idx * 9 + 9];
            let mut r = conv3(&bands[ch][b], k);
            r.iter_mut().flatten().for_each(|v| *v += wave_b.data()[idx]);
            r
        });
        let rec = inverse_haar(&conv);
        for y in 0..h {
            for x in 0..w {
                out[ch][y][x] = x_ch[ch][y][x] * rec[y][x];
            }
        }
    }
    (from_planes(&out[..c / 2]), from_planes(&out[c / 2..]))
}

/// Downsamples one head's window tokens `[h·w][C]` through `fuse.len()`
/// Haar levels.
pub fn downsample(v: &[Vec<f64>], h: usize, w: usize, fuse: &[Tensor]) -> Vec<Vec<f64>> {
    let mut tok = v.to_vec();
    let (mut h, mut w) = (h, w);
    for f in fuse {
        let pl = from_tokens(&tok, h, w);
        let c = pl.len();
        let bands: Vec<_> = pl.iter().map(|p| haar(p)).collect();
        h /= 2;
        w /= 2;
        let stacked: Vec<Vec<f64>> = (0..h * w)
            .map(|i| (0..4 * c).map(|k| bands[k % c][k / c][i / w][i % w]).collect())
            .collect();
        tok = matmul(&stacked, &mat(f));
    }
    tok
}

/// Spatial self-correlation over one window, head by head.
pub fn wa_sc(
    q: &Tensor,
    v: &Tensor,
    window: (usize, usize),
    heads: usize,
    table: &Tensor,
    fuse: &[Vec<Tensor>],
    proj: &Tensor,
) -> Tensor {
    let (h, w) = window;
    let (q, v) = (mat(q), mat(v));
    let n = q.len();
    let ch = q[0].len() / heads;
    let t = (2 * h - 1) * (2 * w - 1);
    let mut cat = vec![Vec::new(); n];
    for j in 0..heads {
        let cols = |m: &[Vec<f64>]| -> Vec<Vec<f64>> { m.iter().map(|r| r[j * ch..(j + 1) * ch].to_vec()).collect() };
        let (qj, vj) = (cols(&q), cols(&v));
        let vd = downsample(&vj, h, w, &fuse[j]);
        let s = 1usize << fuse[j].len();
        let dw = w / s;
        for p in 0..n {
            let mut row = vec![0.0; ch];
            for (r, vr) in vd.iter().enumerate() {
                let dot: f64 = qj[p].iter().zip(vr).map(|(a, b)| a * b).sum();
                let dy = (p / w) as isize - ((r / dw) * s) as isize;
                let dx = (p % w) as isize - ((r % dw) * s) as isize;
                let e = (dy + h as isize - 1) as usize * (2 * w - 1) + (dx + w as isize - 1) as usize;
                let m = dot / ch as f64 + table.data()[j * t + e];
                for (o, x) in row.iter_mut().zip(vr) {
                    *o += m * x;
                }
            }
            cat[p].extend(row);
        }
    }
    let out = matmul(&cat, &mat(proj));
    Tensor::new([n, out[0].len()], flat(&out)).unwrap()
}

pub fn c_sc(q: &Tensor, v: &Tensor) -> Tensor {
    let (qm, vm) = (mat(q), mat(v));
    let n = qm.len() as f64;
    let m: Vec<Vec<f64>> = matmul(&transpose(&qm), &vm).into_iter().map(|r| r.into_iter().map(|x| x / n).collect()).collect();
    let out = matmul(&qm, &m);
    Tensor::new(q.shape().to_vec(), flat(&out)).unwrap()
}

/// Largest deviation relative to the oracle's largest magnitude.
pub fn max_rel_err(got: &Tensor, want: &Tensor) -> f64 {
    assert_eq!(got.shape(), want.shape());
    got.max_abs_diff(want) / want.max_abs().max(1e-8)
}
