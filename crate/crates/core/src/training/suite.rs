use std::rc::Rc;

use super::l1_loss;
use crate::attention::{bias_table_len, c_sc, dfe, relative_bias_index, wa_sc, DfeParams, WaScParams};
use crate::network::{ModelConfig, SrModel};
use crate::tensor::{grad_check, Rng, Tape, Tensor, Var};
use crate::wavelet::{crop_var, dwt, dwt_downsample_var, idwt, reflect_pad_var};
use crate::windowing::{merge_var, partition_var, WindowLayout};
use crate::Result;

/// Finite-difference step used by the suite.
pub const SUITE_STEP: f64 = 1e-6;

/// Worst relative gradient error of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
}

fn rnd(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Contracts `y` with fixed positive weights so every output entry
/// contributes to the scalar.
fn weighted(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = Rng::new(shape.iter().product::<usize>() as u64);
    let w = tape.constant(Tensor::uniform(shape, 0.5, 1.5, &mut rng));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

struct Suite {
    entries: Vec<SuiteEntry>,
    rng: Rng,
}

impl Suite {
    fn check(&mut self, name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<()> {
        let r = grad_check(|t, v| f(t, v).and_then(|y| weighted(t, y)), &inputs, SUITE_STEP)?;
        self.entries.push(SuiteEntry { name: name.into(), max_rel_error: r.max_rel_error, coords: r.coords_checked });
        Ok(())
    }

    fn dims(&mut self) -> (usize, usize, usize) {
        (2 + self.rng.below(7), 2 + self.rng.below(7), 2 + self.rng.below(7))
    }
}

/// Gradient checks of every differentiable primitive on random tensors with
/// extents 2 to 8, of the wavelet, window and attention ops, and of the L1
/// loss.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite { entries: Vec::new(), rng: Rng::new(seed) };
    let (m, k, n) = s.dims();
    let r = &mut Rng::new(seed ^ 1);
    s.check("matmul", vec![rnd(&[m, k], r), rnd(&[k, n], r)], |t, v| t.matmul(v[0], v[1]))?;
    s.check("matmul_nt", vec![rnd(&[m, k], r), rnd(&[n, k], r)], |t, v| t.matmul_nt(v[0], v[1]))?;
    s.check("add", vec![rnd(&[m, k], r), rnd(&[m, k], r)], |t, v| t.add(v[0], v[1]))?;
    s.check("sub", vec![rnd(&[m, k], r), rnd(&[m, k], r)], |t, v| t.sub(v[0], v[1]))?;
    s.check("mul", vec![rnd(&[m, k], r), rnd(&[m, k], r)], |t, v| t.mul(v[0], v[1]))?;
    s.check("scale", vec![rnd(&[m, k], r)], |t, v| t.scale(v[0], -1.7))?;
    s.check("add_row", vec![rnd(&[m, k], r), rnd(&[k], r)], |t, v| t.add_row(v[0], v[1]))?;
    s.check("mul_row", vec![rnd(&[m, k], r), rnd(&[k], r)], |t, v| t.mul_row(v[0], v[1]))?;
    s.check("transpose", vec![rnd(&[m, k], r)], |t, v| t.transpose(v[0]))?;
    s.check("mean_rows", vec![rnd(&[m, k], r)], |t, v| t.mean_rows(v[0]))?;
    s.check("concat", vec![rnd(&[m, k], r), rnd(&[n, k], r)], |t, v| t.concat(&[v[0], v[1]]))?;
    s.check("concat_cols", vec![rnd(&[m, k], r), rnd(&[m, n], r)], |t, v| t.concat_cols(&[v[0], v[1]]))?;
    s.check("slice_cols", vec![rnd(&[m, k], r)], |t, v| t.slice_cols(v[0], 1, k))?;
    // two features normalise to exactly ±1 and leave no resolvable gradient
    let kn = k.max(3);
    s.check("layer_norm", vec![rnd(&[m, kn], r), rnd(&[kn], r), rnd(&[kn], r)], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))?;
    s.check("gelu", vec![rnd(&[m, k], r)], |t, v| t.gelu(v[0]))?;
    s.check("sigmoid", vec![rnd(&[m, k], r)], |t, v| t.sigmoid(v[0]))?;
    s.check("softmax_rows", vec![rnd(&[m, k], r)], |t, v| t.softmax_rows(v[0]))?;
    s.check("l1_loss", vec![rnd(&[m, k], r), rnd(&[m, k], r)], |t, v| l1_loss(t, v[0], v[1]))?;

    let (c, h, w) = (1 + s.rng.below(3), 2 + s.rng.below(7), 2 + s.rng.below(7));
    s.check("conv2d", vec![rnd(&[c, h, w], r), rnd(&[2, c, 3, 3], r)], |t, v| t.conv2d(v[0], v[1], 1))?;
    s.check("depthwise_conv2d", vec![rnd(&[c, h, w], r), rnd(&[c, 3, 3], r)], |t, v| t.depthwise_conv2d(v[0], v[1], 1))?;
    s.check("add_channel", vec![rnd(&[c, h, w], r), rnd(&[c], r)], |t, v| t.add_channel(v[0], v[1]))?;
    s.check("pixel_shuffle", vec![rnd(&[4 * c, h, w], r)], |t, v| t.pixel_shuffle(v[0], 2))?;
    s.check("tokens_to_map", vec![rnd(&[h * w, c], r)], |t, v| t.tokens_to_map(v[0], h, w))?;

    let (eh, ew) = (2 * (1 + s.rng.below(4)), 2 * (1 + s.rng.below(4)));
    s.check("dwt", vec![rnd(&[c, eh, ew], r)], |t, v| dwt(t, v[0]))?;
    s.check("idwt", vec![rnd(&[4 * c, eh / 2, ew / 2], r)], |t, v| idwt(t, v[0]))?;
    s.check("reflect_pad", vec![rnd(&[c, h, w], r)], |t, v| reflect_pad_var(t, v[0], h + 3, w + 1))?;
    s.check("crop", vec![rnd(&[c, h, w], r)], |t, v| crop_var(t, v[0], h - 1, w))?;
    s.check("dwt_downsample", vec![rnd(&[64, 2], r), rnd(&[8, 2], r), rnd(&[8, 2], r)], |t, v| {
        dwt_downsample_var(t, v[0], (8, 8), &v[1..])
    })?;
    let layout = WindowLayout::new(0, (4, 4), (4, 4))?;
    s.check("partition_merge", vec![rnd(&[c, h + 3, w + 2], r)], move |t, v| {
        let (wins, pad) = partition_var(t, v[0], &layout)?;
        let twice = t.scale(wins, 2.0)?;
        merge_var(t, twice, &pad, &layout)
    })?;

    let cc = 4;
    s.check(
        "dfe",
        vec![rnd(&[cc, 5, 6], r), rnd(&[cc, cc], r), rnd(&[cc], r), rnd(&[4 * cc, 3, 3], r), rnd(&[4 * cc], r)],
        |t, v| {
            let p = DfeParams { linear_w: v[1], linear_b: v[2], wave_w: v[3], wave_b: v[4] };
            let (q, vv) = dfe(t, v[0], &p)?;
            t.concat_cols(&[q, vv])
        },
    )?;
    let layout = WindowLayout::with_levels((4, 4), 1)?;
    let idx: Rc<[usize]> = Rc::from(relative_bias_index(&layout, 2));
    s.check(
        "wa_sc",
        vec![
            rnd(&[16, 4], r),
            rnd(&[16, 4], r),
            rnd(&[2, bias_table_len(&layout)], r),
            rnd(&[8, 2], r),
            rnd(&[8, 2], r),
            rnd(&[4, 4], r),
        ],
        move |t, v| {
            let p = WaScParams { heads: 2, bias_table: v[2], fuse: vec![vec![v[3]], vec![v[4]]], proj: v[5], bias_index: idx.clone() };
            wa_sc(t, v[0], v[1], &layout, &p)
        },
    )?;
    s.check("c_sc", vec![rnd(&[m, k], r), rnd(&[m, k], r)], |t, v| c_sc(t, v[0], v[1]))?;
    Ok(s.entries)
}

/// Finite-difference step of the end-to-end model check. The larger step
/// keeps cancellation error below the smallest parameter gradients.
pub const MODEL_STEP: f64 = 1e-4;

/// Half-width of the uniform jitter added to every parameter before the
/// model check. Large enough that attention-path gradients clear the
/// cancellation floor.
pub const MODEL_JITTER: f64 = 0.3;

/// Smallest distance between prediction and target in the model check, so
/// no L1 kink lies within reach of the finite-difference step.
pub const TIE_MARGIN: f64 = 0.05;

/// Checks the L1 loss of `config`'s model against every parameter tensor,
/// one entry per tensor. Parameters are jittered away from their
/// initialisation so zero biases and unit norms are not special points, and
/// the target sits at least [`TIE_MARGIN`] below the prediction everywhere.
pub fn model_suite(config: &ModelConfig, seed: u64, step: f64) -> Result<Vec<SuiteEntry>> {
    let mut model = SrModel::new(config.clone(), seed)?;
    let mut rng = Rng::new(seed ^ 2);
    for t in model.params_mut().tensors_mut() {
        let jitter = Tensor::uniform(t.shape().to_vec(), -MODEL_JITTER, MODEL_JITTER, &mut rng);
        for (v, j) in t.data_mut().iter_mut().zip(jitter.data()) {
            *v += j;
        }
    }
    let side = 2 * config.base_window;
    let lr = Tensor::uniform([3, side, side], 0.0, 1.0, &mut rng);
    let pred = {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.constant(lr.clone());
        let out = model.forward(&mut tape, &vars, x)?;
        tape.value(out).clone()
    };
    let offsets: Vec<f64> = (0..pred.numel()).map(|_| -rng.uniform(TIE_MARGIN, 4.0 * TIE_MARGIN)).collect();
    let target = Tensor::new(pred.shape().to_vec(), pred.data().iter().zip(&offsets).map(|(p, d)| p + d).collect())?;
    let inputs = model.params().tensors().to_vec();
    let r = grad_check(
        |tape, vars| {
            let x = tape.constant(lr.clone());
            let y = tape.constant(target.clone());
            let out = model.forward(tape, vars, x)?;
            l1_loss(tape, out, y)
        },
        &inputs,
        step,
    )?;
    Ok(model
        .params()
        .iter()
        .zip(&r.per_input)
        .map(|((name, t), &e)| SuiteEntry { name: name.to_string(), max_rel_error: e, coords: t.numel() })
        .collect())
}

/// [`primitive_suite`] and, when `with_model`, [`model_suite`] on the tiny
/// configuration with and without alternating channel correlation.
pub fn gradient_suite(seed: u64, with_model: bool) -> Result<Vec<SuiteEntry>> {
    let mut out = primitive_suite(seed)?;
    if with_model {
        for alternate in [false, true] {
            let cfg = ModelConfig { alternate, ..ModelConfig::tiny() };
            let tag = if alternate { "tiny+csc" } else { "tiny" };
            out.extend(model_suite(&cfg, seed, MODEL_STEP)?.into_iter().map(|e| SuiteEntry { name: format!("{tag}/{}", e.name), ..e }));
        }
    }
    Ok(out)
}
