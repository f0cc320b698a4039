use super::{Rng, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// Largest relative error per input tensor.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::invalid("grad_check", "function must return a scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::invalid("grad_check", "function value is not finite"));
    }
    Ok(v)
}

fn analytic<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect())
}

/// Compares backward-mode gradients of the scalar function `f` with
/// central differences of step `h` at every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    run(&f, inputs, h, &coords)
}

/// Like [`grad_check`] but checks at most `max_coords` seeded-random
/// coordinates per input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.numel() <= max_coords {
                (0..t.numel()).collect()
            } else {
                (0..max_coords).map(|_| rng.below(t.numel())).collect()
            }
        })
        .collect();
    run(&f, inputs, h, &coords)
}

fn run<F>(f: &F, inputs: &[Tensor], h: f64, coords: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("grad_check", "step must be positive"));
    }
    eval(f, inputs)?;
    let grads = analytic(f, inputs)?;
    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (i, idxs) in coords.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for &j in idxs {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grads[i].data()[j], numeric));
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().cloned().fold(0.0, f64::max),
        per_input,
        coords_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new([4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{}", r.max_rel_error);
        assert_eq!(r.coords_checked, 4);
    }

    #[test]
    fn rejects_non_finite_value() {
        let x = Tensor::full([2], 1e200);
        let r = grad_check(
            |t, v| {
                let p = t.mul(v[0], v[0])?;
                t.sum(p)
            },
            &[x],
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
