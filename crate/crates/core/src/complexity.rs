//! Closed-form attention costs, exact multiply-add predictions for the
//! instrumented kernels, a dense softmax window-attention baseline and the
//! window-size scaling experiment.

use std::fmt::Write as _;
use std::rc::Rc;
use std::time::Instant;

use crate::attention::{bias_table_len, relative_bias_index, wa_sc, WaScParams, WAVE_KERNEL};
use crate::network::{ModelConfig, CONV_KERNEL};
use crate::tensor::kernels::{matmul, softmax_rows, transpose2d};
use crate::tensor::{OpCounter, Rng, Tape, Tensor};
use crate::windowing::{schedule, WindowLayout};
use crate::{Error, Result};

/// Header of [`CostReport::to_csv`].
pub const COST_CSV_HEADER: &str = "window,area,analytic_wsa,analytic_wasc,measured_wasc,measured_wsa,seconds_wasc,seconds_wsa";

/// Softmax window self-attention: `2·N·C·(h·w)²`.
pub fn analytic_w_sa(n: u64, c: u64, h: u64, w: u64) -> u128 {
    let area = h as u128 * w as u128;
    2 * n as u128 * c as u128 * area * area
}

/// Wavelet self-correlation: `2·N·C_h·(w/2)·(h/2)`.
pub fn analytic_wa_sc(n: u64, c_h: u64, h: u64, w: u64) -> u128 {
    2 * n as u128 * c_h as u128 * (w / 2) as u128 * (h / 2) as u128
}

/// Counted mult-adds of one [`wa_sc`] call on a window of `layout` with
/// `channels` query channels split into `heads`.
pub fn predict_wa_sc(layout: &WindowLayout, channels: usize, heads: usize) -> u128 {
    let ch = (channels / heads) as u128;
    let n = layout.tokens() as u128;
    let nd = layout.downsampled_tokens() as u128;
    let mut down = 0u128;
    let mut tokens = n;
    for _ in 0..layout.dwt_levels {
        // Haar transform, then the 4·C_h → C_h fusion on a quarter of the tokens
        down += 4 * ch * tokens + (tokens / 4) * 4 * ch * ch;
        tokens /= 4;
    }
    heads as u128 * (down + 2 * n * nd * ch) + n * (channels * channels) as u128
}

/// Counted mult-adds of one channel self-correlation over `n` tokens.
pub fn predict_c_sc(n: usize, channels: usize) -> u128 {
    2 * (n * channels * channels) as u128
}

/// Counted mult-adds of transformer layer `layer` on a `C × h × w` map.
pub fn predict_layer(config: &ModelConfig, layer: usize, h: usize, w: usize) -> Result<u128> {
    let layout = schedule(config, layer)?;
    let c = config.channels as u128;
    let cq = config.channels / 2;
    let hw = (h * w) as u128;
    let (ph, pw) = ((h + h % 2) as u128, (w + w % 2) as u128);
    let k2 = (WAVE_KERNEL * WAVE_KERNEL) as u128;
    let dfe = hw * c * c + 4 * c * ph * pw + 4 * c * k2 * (ph / 2) * (pw / 2) + 4 * c * ph * pw;
    let windows = (h.div_ceil(layout.window_h) * w.div_ceil(layout.window_w)) as u128;
    let corr = if config.is_channel_layer(layer) {
        predict_c_sc(layout.tokens(), cq)
    } else {
        predict_wa_sc(&layout, cq, config.heads)
    };
    let r = config.gate_hidden() as u128;
    let hidden = (config.channels * config.ffn_expansion) as u128;
    Ok(dfe + windows * corr + hw * cq as u128 * c + 2 * c * r + 2 * hw * c * hidden)
}

/// Counted mult-adds of one transformer block on a `C × h × w` map.
pub fn predict_block(config: &ModelConfig, h: usize, w: usize) -> Result<u128> {
    let mut total = 0;
    for layer in 0..config.layers_per_block {
        total += predict_layer(config, layer, h, w)?;
    }
    let c = config.channels as u128;
    Ok(total + c * c * (CONV_KERNEL * CONV_KERNEL) as u128 * (h * w) as u128)
}

/// Dense softmax attention within one window, `softmax(Q_j·K_jᵀ/√d)·V_j` per
/// head, concatenated. Counts `2·n²·C` mult-adds.
pub fn reference_w_sa(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let &[n, c] = q.shape() else {
        return Err(Error::shape("w_sa", "queries must be n×C"));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() || heads == 0 || c % heads != 0 {
        return Err(Error::shape("w_sa", format!("q {:?}, k {:?}, v {:?}, {heads} heads", q.shape(), k.shape(), v.shape())));
    }
    let d = c / heads;
    let cols = |t: &Tensor, j: usize| -> Result<Tensor> {
        let data = t.data().chunks(c).flat_map(|r| r[j * d..(j + 1) * d].iter().copied()).collect();
        Tensor::new([n, d], data)
    };
    let mut out = vec![0.0; n * c];
    for j in 0..heads {
        let scores = matmul(&cols(q, j)?, &transpose2d(&cols(k, j)?)?)?;
        let scores = softmax_rows(&scores.map(|s| s / (d as f64).sqrt()))?;
        let o = matmul(&scores, &cols(v, j)?)?;
        for (r, row) in o.data().chunks(d).enumerate() {
            out[r * c + j * d..r * c + (j + 1) * d].copy_from_slice(row);
        }
    }
    Tensor::new([n, c], out)
}

/// One window size of the scaling experiment. Counts are per window.
#[derive(Clone, Debug, PartialEq)]
pub struct CostProbe {
    pub window: usize,
    pub area: usize,
    /// Windows tiling the fixed image.
    pub windows: usize,
    pub analytic_wsa: u128,
    pub analytic_wasc: u128,
    pub predicted_wasc: u128,
    pub measured_wasc: u128,
    pub measured_wsa: u128,
    pub seconds_wasc: f64,
    pub seconds_wsa: f64,
}

/// Least-squares line through `(ln area, ln count)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub image_side: usize,
    pub probes: Vec<CostProbe>,
    pub wasc: LogLogFit,
    pub wsa: LogLogFit,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(COST_CSV_HEADER);
        s.push('\n');
        for p in &self.probes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6}",
                p.window,
                p.area,
                p.analytic_wsa,
                p.analytic_wasc,
                p.measured_wasc,
                p.measured_wsa,
                p.seconds_wasc,
                p.seconds_wsa
            );
        }
        s
    }
}

/// Fits `ln y = slope · ln x + b`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::invalid("fit_log_log", "need at least two positive points"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit_log_log", "all abscissae are equal"));
    }
    let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let residual = (logs.iter().map(|p| (p.1 - slope * p.0 - icpt).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LogLogFit { slope, residual })
}

/// Tiles a fixed square image, whose side is the largest probed window,
/// with each window size in turn. Wavelet self-correlation runs with the
/// Haar depth the schedule rule gives for that size, so its value tokens
/// stay at the base window; the dense baseline runs over all `C` channels.
/// Costs are reported per window.
pub fn scaling_experiment(config: &ModelConfig, sizes: &[usize], seed: u64) -> Result<CostReport> {
    config.validate()?;
    let base = config.base_window;
    let side = *sizes.iter().max().ok_or_else(|| Error::invalid("scaling_experiment", "no window sizes"))?;
    for &s in sizes {
        if !s.is_power_of_two() || s < 8 || s < base {
            return Err(Error::invalid(
                "scaling_experiment",
                format!("window {s} must be a power of two no smaller than 8 and the base window {base}"),
            ));
        }
    }
    let c = config.channels;
    let cq = c / 2;
    let heads = config.heads;
    let ch = config.head_dim();
    let mut rng = Rng::new(seed);
    let mut probes = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let layout = WindowLayout::new(0, (s, s), (base, base))?;
        let n = layout.tokens();
        let windows = (side / s) * (side / s);

        let mut tape = Tape::new();
        let fuse = (0..heads)
            .map(|_| (0..layout.dwt_levels).map(|_| tape.constant(Tensor::init_weight([4 * ch, ch], 4 * ch, &mut rng))).collect())
            .collect();
        let params = WaScParams {
            heads,
            bias_table: tape.constant(Tensor::zeros([heads, bias_table_len(&layout)])),
            fuse,
            proj: tape.constant(Tensor::init_weight([cq, cq], cq, &mut rng)),
            bias_index: Rc::from(relative_bias_index(&layout, heads)),
        };
        let start = Instant::now();
        let mut measured_wasc = 0u128;
        for _ in 0..windows {
            let q = tape.constant(Tensor::uniform([n, cq], -1.0, 1.0, &mut rng));
            let v = tape.constant(Tensor::uniform([n, cq], -1.0, 1.0, &mut rng));
            let (r, count) = OpCounter::measure(|| wa_sc(&mut tape, q, v, &layout, &params))?;
            r?;
            measured_wasc += count as u128;
        }
        let seconds_wasc = start.elapsed().as_secs_f64();
        drop(tape);

        let start = Instant::now();
        let mut measured_wsa = 0u128;
        for _ in 0..windows {
            let q = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
            let k = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
            let v = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
            let (r, count) = OpCounter::measure(|| reference_w_sa(&q, &k, &v, heads))?;
            r?;
            measured_wsa += count as u128;
        }
        let seconds_wsa = start.elapsed().as_secs_f64();

        let w = windows as u128;
        probes.push(CostProbe {
            window: s,
            area: n,
            windows,
            analytic_wsa: analytic_w_sa(1, c as u64, s as u64, s as u64),
            analytic_wasc: analytic_wa_sc(1, ch as u64, s as u64, s as u64),
            predicted_wasc: predict_wa_sc(&layout, cq, heads),
            measured_wasc: measured_wasc / w,
            measured_wsa: measured_wsa / w,
            seconds_wasc: seconds_wasc / windows as f64,
            seconds_wsa: seconds_wsa / windows as f64,
        });
    }
    let fit = |f: fn(&CostProbe) -> u128| -> Result<LogLogFit> {
        fit_log_log(&probes.iter().map(|p| (p.area as f64, f(p) as f64)).collect::<Vec<_>>())
    };
    Ok(CostReport {
        image_side: side,
        wasc: fit(|p| p.measured_wasc)?,
        wsa: fit(|p| p.measured_wsa)?,
        probes,
    })
}
