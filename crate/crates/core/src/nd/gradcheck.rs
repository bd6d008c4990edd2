//! Finite-difference verification of tape gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::cell::RefCell;

use super::ops::{with_kink_log, KinkLog};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input, element) where the relative error peaks.
    pub worst: (usize, usize),
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f32,
    /// Check at most this many evenly spaced elements per input.
    pub max_coords: usize,
    /// Hold every LeakyReLU on the side it took at the unperturbed point,
    /// so the differences see the linear piece the gradient describes.
    pub freeze_kinks: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { step: 1e-3, max_coords: usize::MAX, freeze_kinks: false }
    }
}

/// Compares the tape gradient of the scalar `f` against central differences
/// at every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<GradReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, CheckOptions::default())
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: CheckOptions) -> Result<GradReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let gradient = || -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let grads = f(&vars)?.backward()?;
        Ok(vars.iter().map(|v| grads.get_or_zeros(v)).collect())
    };
    let (analytic, log) = if opts.freeze_kinks {
        let (g, log) = with_kink_log(KinkLog::default(), gradient);
        (g?, Some(log))
    } else {
        (gradient()?, None)
    };
    let log = RefCell::new(log);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let run = || -> Result<f64> {
            let tape = Tape::inference();
            let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
            Ok(f(&vars)?.value().item() as f64)
        };
        let installed = log.borrow_mut().take();
        match installed {
            Some(l) => {
                let (y, l) = with_kink_log(l, run);
                *log.borrow_mut() = Some(l);
                y
            }
            None => run(),
        }
    };

    let mut report = GradReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0 };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    let h = opts.step;
    for (i, input) in inputs.iter().enumerate() {
        let stride = input.len().div_ceil(opts.max_coords.max(1)).max(1);
        for j in (0..input.len()).step_by(stride) {
            let x0 = input.data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h as f64);
            let a = analytic[i].data()[j] as f64;
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite { what: format!("gradient of input {i}"), step: j });
            }
            let abs = (a - numeric).abs();
            let rel = abs / 1f64.max(a.abs()).max(numeric.abs());
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces `y` to a scalar by a fixed random projection `Σ y·r`,
/// `r ~ U(-1, 1)` drawn from `seed`, so every output element matters.
pub fn project(y: &Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = y.tape().constant(Tensor::uniform(y.shape(), -1.0, 1.0, &mut rng));
    Ok(y.mul(&r)?.sum_all())
}
