use std::rc::Rc;

use super::{ModelConfig, ParamStore};
use crate::attention::{bias_table_len, c_sc, dfe_maps, relative_bias_index, wa_sc, DfeParams, WaScParams, WAVE_KERNEL};
use crate::tensor::kernels::LAYER_NORM_EPS;
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::windowing::{merge_var, partition_var, schedule, window_var, WindowLayout};
use crate::{Error, Result};

/// Kernel size of the shallow, block and reconstruction convolutions.
pub const CONV_KERNEL: usize = 3;

#[derive(Clone, Debug)]
enum Correlation {
    Spatial {
        bias_table: usize,
        /// `fuse[head][level]`
        fuse: Vec<Vec<usize>>,
        proj: usize,
        bias_index: Rc<[usize]>,
    },
    Channel,
}

#[derive(Clone, Debug)]
struct LayerSlots {
    layout: WindowLayout,
    ln1: (usize, usize),
    dfe: [usize; 4],
    corr: Correlation,
    out: (usize, usize),
    gate: [usize; 4],
    ln2: (usize, usize),
    ffn: [usize; 4],
}

#[derive(Clone, Debug)]
struct BlockSlots {
    layers: Vec<LayerSlots>,
    conv: (usize, usize),
}

/// The super-resolution network: configuration, parameter slots and the
/// parameters themselves.
#[derive(Clone, Debug)]
pub struct SrModel {
    config: ModelConfig,
    params: ParamStore,
    shallow: (usize, usize),
    blocks: Vec<BlockSlots>,
    recon: (usize, usize),
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> Result<usize> {
        let t = Tensor::init_weight(shape, fan_in, self.rng);
        self.store.push(name, t)
    }

    fn fill(&mut self, name: String, shape: Vec<usize>, value: f64) -> Result<usize> {
        self.store.push(name, Tensor::full(shape, value))
    }
}

impl SrModel {
    /// A freshly initialized model. Weights are `U(±1/√fan_in)`, biases and
    /// position tables zero, norms unit.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut b = Builder { store: ParamStore::new(), rng: &mut rng };
        let c = config.channels;
        let cq = c / 2;
        let ch = config.head_dim();
        let hidden = c * config.ffn_expansion;
        let gate = config.gate_hidden();
        let k2 = CONV_KERNEL * CONV_KERNEL;

        let shallow = (
            b.weight("shallow.w".into(), vec![c, 3, CONV_KERNEL, CONV_KERNEL], 3 * k2)?,
            b.fill("shallow.b".into(), vec![c], 0.0)?,
        );
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for bi in 0..config.num_blocks {
            let mut layers = Vec::with_capacity(config.layers_per_block);
            for li in 0..config.layers_per_block {
                let p = format!("blocks.{bi}.layers.{li}");
                let layout = schedule(&config, li)?;
                let ln1 = (
                    b.fill(format!("{p}.ln1.gamma"), vec![c], 1.0)?,
                    b.fill(format!("{p}.ln1.beta"), vec![c], 0.0)?,
                );
                let dfe = [
                    b.weight(format!("{p}.dfe.linear.w"), vec![c, c], c)?,
                    b.fill(format!("{p}.dfe.linear.b"), vec![c], 0.0)?,
                    b.weight(format!("{p}.dfe.wave.w"), vec![4 * c, WAVE_KERNEL, WAVE_KERNEL], WAVE_KERNEL * WAVE_KERNEL)?,
                    b.fill(format!("{p}.dfe.wave.b"), vec![4 * c], 0.0)?,
                ];
                let corr = if config.is_channel_layer(li) {
                    Correlation::Channel
                } else {
                    let bias_table = b.fill(format!("{p}.wasc.bias_table"), vec![config.heads, bias_table_len(&layout)], 0.0)?;
                    let mut fuse = Vec::with_capacity(config.heads);
                    for h in 0..config.heads {
                        let mut levels = Vec::with_capacity(layout.dwt_levels);
                        for l in 0..layout.dwt_levels {
                            levels.push(b.weight(format!("{p}.wasc.fuse.h{h}.l{l}"), vec![4 * ch, ch], 4 * ch)?);
                        }
                        fuse.push(levels);
                    }
                    let proj = b.weight(format!("{p}.wasc.proj"), vec![cq, cq], cq)?;
                    Correlation::Spatial {
                        bias_table,
                        fuse,
                        proj,
                        bias_index: Rc::from(relative_bias_index(&layout, config.heads)),
                    }
                };
                let out = (
                    b.weight(format!("{p}.out.w"), vec![cq, c], cq)?,
                    b.fill(format!("{p}.out.b"), vec![c], 0.0)?,
                );
                let gate = [
                    b.weight(format!("{p}.gate.w1"), vec![c, gate], c)?,
                    b.fill(format!("{p}.gate.b1"), vec![gate], 0.0)?,
                    b.weight(format!("{p}.gate.w2"), vec![gate, c], gate)?,
                    b.fill(format!("{p}.gate.b2"), vec![c], 0.0)?,
                ];
                let ln2 = (
                    b.fill(format!("{p}.ln2.gamma"), vec![c], 1.0)?,
                    b.fill(format!("{p}.ln2.beta"), vec![c], 0.0)?,
                );
                let ffn = [
                    b.weight(format!("{p}.ffn.w1"), vec![c, hidden], c)?,
                    b.fill(format!("{p}.ffn.b1"), vec![hidden], 0.0)?,
                    b.weight(format!("{p}.ffn.w2"), vec![hidden, c], hidden)?,
                    b.fill(format!("{p}.ffn.b2"), vec![c], 0.0)?,
                ];
                layers.push(LayerSlots { layout, ln1, dfe, corr, out, gate, ln2, ffn });
            }
            let conv = (
                b.weight(format!("blocks.{bi}.conv.w"), vec![c, c, CONV_KERNEL, CONV_KERNEL], c * k2)?,
                b.fill(format!("blocks.{bi}.conv.b"), vec![c], 0.0)?,
            );
            blocks.push(BlockSlots { layers, conv });
        }
        let s2 = config.upscale * config.upscale;
        let recon = (
            b.weight("recon.w".into(), vec![3 * s2, c, CONV_KERNEL, CONV_KERNEL], c * k2)?,
            b.fill("recon.b".into(), vec![3 * s2], 0.0)?,
        );
        let params = b.store;
        Ok(SrModel { config, params, shallow, blocks, recon })
    }

    /// Rebuilds a model around existing parameters, checking every name and
    /// shape against the layout `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = SrModel::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "{} parameter tensors, config expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for ((name, t), (want, wt)) in params.iter().zip(model.params.iter()) {
            if name != want {
                return Err(Error::Config(format!("parameter {name:?} where {want:?} was expected")));
            }
            if t.shape() != wt.shape() {
                return Err(Error::Config(format!("parameter {name:?} has shape {:?}, expected {:?}", t.shape(), wt.shape())));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Places the parameters on `tape`; see [`ParamStore::bind`].
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    /// Window layout of every layer in a block.
    pub fn layouts(&self) -> Vec<WindowLayout> {
        self.blocks.first().map(|b| b.layers.iter().map(|l| l.layout).collect()).unwrap_or_default()
    }

    /// One transformer layer on `x [C×H×W]`.
    ///
    /// Attention branch: layer norm, DFE, per-window spatial or channel
    /// self-correlation, merge, projection back to `C`, then a squeeze gate
    /// (`sigmoid(W₂·gelu(W₁·mean + b₁) + b₂)`) scaling each channel. The FFN
    /// branch is `C → ffn_expansion·C → C` with GELU. Both are residual.
    pub fn transformer_layer(&self, tape: &mut Tape, vars: &[Var], block: usize, layer: usize, x: Var) -> Result<Var> {
        let s = self
            .blocks
            .get(block)
            .and_then(|b| b.layers.get(layer))
            .ok_or_else(|| Error::Config(format!("no layer {layer} in block {block}")))?;
        let v = |i: usize| vars[i];
        let &[c, h, w] = tape.shape(x) else {
            return Err(Error::shape("transformer_layer", format!("expected C×H×W, got {:?}", tape.shape(x))));
        };
        if c != self.config.channels {
            return Err(Error::shape("transformer_layer", format!("{c} channels, model has {}", self.config.channels)));
        }
        let t = tape.map_to_tokens(x)?;
        let attn = tape.scoped("attention", |tape| -> Result<Var> {
            let a = tape.layer_norm(t, v(s.ln1.0), v(s.ln1.1), LAYER_NORM_EPS)?;
            let a = tape.tokens_to_map(a, h, w)?;
            let p = DfeParams { linear_w: v(s.dfe[0]), linear_b: v(s.dfe[1]), wave_w: v(s.dfe[2]), wave_b: v(s.dfe[3]) };
            let (qm, vm) = dfe_maps(tape, a, &p)?;
            let (qw, pad) = partition_var(tape, qm, &s.layout)?;
            let (vw, _) = partition_var(tape, vm, &s.layout)?;
            let spatial = match &s.corr {
                Correlation::Spatial { bias_table, fuse, proj, bias_index } => Some(WaScParams {
                    heads: self.config.heads,
                    bias_table: v(*bias_table),
                    fuse: fuse.iter().map(|lv| lv.iter().map(|&i| v(i)).collect()).collect(),
                    proj: v(*proj),
                    bias_index: bias_index.clone(),
                }),
                Correlation::Channel => None,
            };
            let n = pad.windows(&s.layout);
            let mut outs = Vec::with_capacity(n);
            for i in 0..n {
                let qi = window_var(tape, qw, i)?;
                let vi = window_var(tape, vw, i)?;
                outs.push(match &spatial {
                    Some(p) => wa_sc(tape, qi, vi, &s.layout, p)?,
                    None => c_sc(tape, qi, vi)?,
                });
            }
            let stacked = tape.concat(&outs)?;
            let stacked = tape.reshape(stacked, vec![n, s.layout.tokens(), c / 2])?;
            let merged = merge_var(tape, stacked, &pad, &s.layout)?;
            let o = tape.map_to_tokens(merged)?;
            let o = tape.matmul(o, v(s.out.0))?;
            tape.add_row(o, v(s.out.1))
        })?;
        let squeeze = tape.mean_rows(attn)?;
        let squeeze = tape.reshape(squeeze, vec![1, c])?;
        let g = tape.matmul(squeeze, v(s.gate[0]))?;
        let g = tape.add_row(g, v(s.gate[1]))?;
        let g = tape.gelu(g)?;
        let g = tape.matmul(g, v(s.gate[2]))?;
        let g = tape.add_row(g, v(s.gate[3]))?;
        let g = tape.sigmoid(g)?;
        let g = tape.reshape(g, vec![c])?;
        let attn = tape.mul_row(attn, g)?;
        let y = tape.add(t, attn)?;

        let f = tape.layer_norm(y, v(s.ln2.0), v(s.ln2.1), LAYER_NORM_EPS)?;
        let f = tape.matmul(f, v(s.ffn[0]))?;
        let f = tape.add_row(f, v(s.ffn[1]))?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, v(s.ffn[2]))?;
        let f = tape.add_row(f, v(s.ffn[3]))?;
        let z = tape.add(y, f)?;
        tape.tokens_to_map(z, h, w)
    }

    /// The layer chain of `block`, a 3×3 convolution and the block residual.
    pub fn transformer_block(&self, tape: &mut Tape, vars: &[Var], block: usize, x: Var) -> Result<Var> {
        let slots = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::Config(format!("no block {block}")))?;
        let mut y = x;
        for layer in 0..slots.layers.len() {
            y = self.transformer_layer(tape, vars, block, layer, y)?;
        }
        let y = tape.conv2d(y, vars[slots.conv.0], CONV_KERNEL / 2)?;
        let y = tape.add_channel(y, vars[slots.conv.1])?;
        tape.add(x, y)
    }

    /// Shallow convolution, the blocks, the global residual and the
    /// pixel-shuffle reconstruction. `lr` is `[3×H×W]` with `H, W` at least
    /// the base window.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], lr: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::Config(format!("{} bound variables for {} parameters", vars.len(), self.params.len())));
        }
        let &[3, h, w] = tape.shape(lr) else {
            return Err(Error::shape("model_forward", format!("expected 3×H×W, got {:?}", tape.shape(lr))));
        };
        let min = self.config.base_window;
        if h < min || w < min {
            return Err(Error::shape("model_forward", format!("input {h}×{w} smaller than the {min}×{min} base window")));
        }
        let fs = tape.conv2d(lr, vars[self.shallow.0], CONV_KERNEL / 2)?;
        let fs = tape.add_channel(fs, vars[self.shallow.1])?;
        let mut deep = fs;
        for b in 0..self.blocks.len() {
            deep = self.transformer_block(tape, vars, b, deep)?;
        }
        let r = tape.add(deep, fs)?;
        let r = tape.conv2d(r, vars[self.recon.0], CONV_KERNEL / 2)?;
        let r = tape.add_channel(r, vars[self.recon.1])?;
        tape.pixel_shuffle(r, self.config.upscale)
    }

    /// Forward pass without gradients, clamped to `[0, 1]`.
    pub fn infer(&self, lr: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(lr.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).map(|v| v.clamp(0.0, 1.0)))
    }
}
