//! L1 objective, Adam, the step-fraction learning-rate schedule, bicubic
//! patch sampling and a deterministic toy training loop.

mod suite;

pub use suite::{gradient_suite, model_suite, primitive_suite, SuiteEntry, MODEL_JITTER, MODEL_STEP, SUITE_STEP, TIE_MARGIN};

use std::fmt::Write as _;

use crate::imaging::{bicubic_resize, Image};
use crate::network::{ModelConfig, SrModel};
use crate::tensor::{OpClass, Rng, Tape, Tensor, Var};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;
/// Initial learning rate of the full-scale protocol.
pub const FULL_LR: f64 = 6e-4;
/// Fractions of the run after which the learning rate halves.
pub const MILESTONES: [f64; 4] = [0.5, 0.8, 0.9, 0.95];
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

/// Mean absolute difference. The subgradient at a tie is zero.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::shape(
            "l1_loss",
            format!("prediction {:?} vs target {:?}", tape.shape(pred), tape.shape(target)),
        ));
    }
    let (p, t) = (tape.value(pred), tape.value(target));
    let n = p.numel() as f64;
    let loss = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    tape.record(
        "l1_loss",
        OpClass::Algebraic,
        &[pred, target],
        Tensor::scalar(loss),
        Box::new(move |g, ins, _| {
            let s = g.item() / n;
            let sign: Vec<f64> = ins[0]
                .data()
                .iter()
                .zip(ins[1].data())
                .map(|(a, b)| if a > b { s } else if a < b { -s } else { 0.0 })
                .collect();
            let shape = ins[0].shape().to_vec();
            let neg = sign.iter().map(|v| -v).collect();
            vec![Tensor::new(shape.clone(), sign).expect("same shape"), Tensor::new(shape, neg).expect("same shape")]
        }),
    )
}

/// Adam moments for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        OptimState { m: zeros(), v: zeros(), t: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape("adam_step", format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((x, &gi), (mi, vi)) in it {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Patch sampling and optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    /// HR patch side.
    pub patch: usize,
    pub batch: usize,
    pub steps: usize,
    pub scale: usize,
    pub lr: f64,
    pub milestones: Vec<f64>,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl TrainSpec {
    pub fn toy() -> Self {
        TrainSpec {
            patch: 32,
            batch: 4,
            steps: 500,
            scale: 2,
            lr: 7e-3,
            milestones: MILESTONES.to_vec(),
            seed: 0,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }

    pub fn full() -> Self {
        TrainSpec { patch: 64, batch: 64, steps: 500_000, lr: FULL_LR, ..TrainSpec::toy() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.batch == 0 || self.scale == 0 {
            return bad("patch, batch and scale must be positive".into());
        }
        if self.patch % self.scale != 0 {
            return bad(format!("patch {} not divisible by scale {}", self.patch, self.scale));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if self.milestones.iter().any(|&m| !(m > 0.0 && m < 1.0)) || self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be ascending in (0, 1)", self.milestones));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive".into());
        }
        Ok(())
    }

    /// Learning rate at `step`: halved once for every milestone
    /// `floor(fraction · steps)` already reached.
    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| step >= (m * self.steps as f64).floor() as usize)
            .count();
        self.lr * 0.5f64.powi(passed as i32)
    }
}

/// A random `patch × patch` crop of `hr` and its bicubic reduction by
/// `spec.scale`.
pub fn sample_patch(hr: &Image, spec: &TrainSpec, rng: &mut Rng) -> Result<(Image, Image)> {
    let p = spec.patch;
    if hr.width() < p || hr.height() < p {
        return Err(Error::invalid(
            "sample_patches",
            format!("image {}×{} smaller than the {p}×{p} patch", hr.width(), hr.height()),
        ));
    }
    let x = rng.below(hr.width() - p + 1);
    let y = rng.below(hr.height() - p + 1);
    let hr_patch = hr.crop(x, y, p, p)?;
    let lr_patch = bicubic_resize(&hr_patch, p / spec.scale, p / spec.scale)?;
    Ok((lr_patch, hr_patch))
}

/// `spec.batch` patches from one image.
pub fn sample_patches(hr: &Image, spec: &TrainSpec, rng: &mut Rng) -> Result<Vec<(Image, Image)>> {
    (0..spec.batch).map(|_| sample_patch(hr, spec, rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: SrModel,
    pub trace: Vec<TraceRow>,
}

/// Loss trace as `step,lr,loss` CSV.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in trace {
        let _ = writeln!(s, "{},{:e},{:.17e}", r.step, r.lr, r.loss);
    }
    s
}

/// Trains a fresh model seeded by `spec.seed`. Batch slot `i` of step `t`
/// draws from image `(t·batch + i) mod len`, so small image sets are
/// visited evenly. The returned parameters are rounded to `f32`, the
/// checkpoint precision.
pub fn train_toy(config: &ModelConfig, spec: &TrainSpec, hr_images: &[Image]) -> Result<TrainOutcome> {
    spec.validate()?;
    if hr_images.is_empty() {
        return Err(Error::invalid("train_toy", "no training images"));
    }
    if config.upscale != spec.scale {
        return Err(Error::Config(format!("model upscale {} vs training scale {}", config.upscale, spec.scale)));
    }
    if hr_images.iter().any(|i| i.channels() != 3) {
        return Err(Error::invalid("train_toy", "training images must be RGB"));
    }
    let mut model = SrModel::new(config.clone(), spec.seed)?;
    let mut rng = Rng::new(spec.seed ^ 0x5eed_da7a);
    let mut state = OptimState::new(model.params().tensors());
    let mut trace = Vec::with_capacity(spec.steps);
    for step in 0..spec.steps {
        let lr = spec.lr_at(step);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { step },
            other => other,
        };
        let mut losses = Vec::with_capacity(spec.batch);
        for i in 0..spec.batch {
            let img = &hr_images[(step * spec.batch + i) % hr_images.len()];
            let (lr_patch, hr_patch) = sample_patch(img, spec, &mut rng)?;
            let x = tape.constant(lr_patch.to_tensor());
            let target = tape.constant(hr_patch.to_tensor());
            let out = model.forward(&mut tape, &vars, x).map_err(diverged)?;
            losses.push(l1_loss(&mut tape, out, target).map_err(diverged)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l).map_err(diverged)?;
        }
        let loss = tape.scale(total, 1.0 / spec.batch as f64).map_err(diverged)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        tape.backward(loss)?;
        let mut grads: Vec<Tensor> = vars
            .iter()
            .zip(model.params().tensors())
            .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        if let Some(c) = spec.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        adam_step(model.params_mut().tensors_mut(), &grads, &mut state, lr).map_err(diverged)?;
        trace.push(TraceRow { step, lr, loss: value });
    }
    for t in model.params_mut().tensors_mut() {
        t.round_f32();
    }
    Ok(TrainOutcome { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn l1_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new([2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = l1_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
        let b = tape.constant(Tensor::new([2, 2], vec![0.35, 0.45, 0.55, 0.65]).unwrap());
        let d = l1_loss(&mut tape, a, b).unwrap();
        assert!((tape.value(d).item() - 0.25).abs() < 1e-15);
        let c = tape.constant(Tensor::zeros([4]));
        assert!(l1_loss(&mut tape, a, c).is_err());
    }

    #[test]
    fn l1_gradient_away_from_ties() {
        let mut rng = Rng::new(1);
        let x = Tensor::uniform([3, 4], -1.0, 1.0, &mut rng);
        let y = Tensor::uniform([3, 4], -1.0, 1.0, &mut rng);
        let r = grad_check(|tape, v| l1_loss(tape, v[0], v[1]), &[x, y], 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);

        let mut tape = Tape::new();
        let p = tape.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::new([2], vec![1.0, 0.0]).unwrap());
        let l = l1_loss(&mut tape, p, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::full([3], 2.0)];
        let mut s = OptimState::new(&p);
        adam_step(&mut p, &[Tensor::ones([3])], &mut s, 0.1).unwrap();
        for &v in p[0].data() {
            assert!((v - 1.9).abs() < 1e-8);
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_and_errors() {
        let mut p = vec![Tensor::full([2], 0.5)];
        let mut s = OptimState::new(&p);
        adam_step(&mut p, &[Tensor::zeros([2])], &mut s, 0.1).unwrap();
        assert_eq!(p[0], Tensor::full([2], 0.5));
        assert_eq!(s.t, 1);
        let nan = Tensor::new([2], vec![f64::NAN, 0.0]).unwrap();
        assert!(adam_step(&mut p, &[nan], &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &[Tensor::zeros([3])], &mut s, 0.1).is_err());
    }

    #[test]
    fn schedule_halves_at_milestones() {
        let spec = TrainSpec { steps: 100, lr: 1.0, ..TrainSpec::toy() };
        assert_eq!(spec.lr_at(0), 1.0);
        assert_eq!(spec.lr_at(49), 1.0);
        assert_eq!(spec.lr_at(50), 0.5);
        assert_eq!(spec.lr_at(79), 0.5);
        assert_eq!(spec.lr_at(80), 0.25);
        assert_eq!(spec.lr_at(90), 0.125);
        assert_eq!(spec.lr_at(95), 0.0625);
        let full = TrainSpec::full();
        assert_eq!(full.lr_at(250_000), FULL_LR / 2.0);
        assert_eq!(full.lr_at(475_000), FULL_LR / 16.0);
    }

    #[test]
    fn spec_validation() {
        TrainSpec::toy().validate().unwrap();
        assert!(TrainSpec { patch: 33, ..TrainSpec::toy() }.validate().is_err());
        assert!(TrainSpec { milestones: vec![0.8, 0.5], ..TrainSpec::toy() }.validate().is_err());
        assert!(TrainSpec { milestones: vec![1.0], ..TrainSpec::toy() }.validate().is_err());
        assert!(TrainSpec { lr: f64::NAN, ..TrainSpec::toy() }.validate().is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::full([4], 1.0)];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 2.0);
        assert!((g[0].sum_squares() - 1.0).abs() < 1e-15);
        let mut g = vec![Tensor::full([4], 0.1)];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g[0], Tensor::full([4], 0.1));
    }

    #[test]
    fn patches() {
        let img = Image::filled(40, 36, 3, 0.6).unwrap();
        let spec = TrainSpec::toy();
        let a = sample_patches(&img, &spec, &mut Rng::new(3)).unwrap();
        let b = sample_patches(&img, &spec, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        for (lr, hr) in &a {
            assert_eq!((lr.width(), lr.height(), hr.width()), (16, 16, 32));
            assert!(lr.samples().iter().all(|v| (v - 0.6).abs() < 1e-12));
        }
        assert!(sample_patch(&Image::filled(20, 40, 3, 0.0).unwrap(), &spec, &mut Rng::new(0)).is_err());
    }
}
