//! Training objectives. All reduce by the mean.

use std::f32::consts::PI;

use crate::nd::Var;
use crate::{Error, Result};

fn same_shape(a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("prediction {:?} and target {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn loss_rec(pred: &Var, target: &Var) -> Result<Var> {
    same_shape(pred, target)?;
    Ok(pred.sub(target)?.abs().mean_all())
}

/// Mean absolute difference of the forward spatial differences of `pred`
/// and `target` (replicate boundary), averaged over the `H` and `W`
/// directions.
pub fn loss_grad(pred: &Var, target: &Var) -> Result<Var> {
    same_shape(pred, target)?;
    let nd = pred.shape().len();
    if nd < 2 {
        return Err(Error::shape("gradient loss needs [.., H, W] inputs"));
    }
    // differencing is linear, so diff(pred) - diff(target) = diff(pred - target)
    let d = pred.sub(target)?;
    let gh = d.forward_diff(nd - 2)?.abs().mean_all();
    let gw = d.forward_diff(nd - 1)?.abs().mean_all();
    Ok(gh.add(&gw)?.scale(0.5))
}

/// `loss_rec + lambda·loss_grad`.
pub fn loss_total(pred: &Var, target: &Var, lambda: f32) -> Result<Var> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("gradient-loss weight {lambda} is negative")));
    }
    let rec = loss_rec(pred, target)?;
    if lambda == 0.0 {
        return Ok(rec);
    }
    rec.add(&loss_grad(pred, target)?.scale(lambda))
}

/// Mean Gaussian negative log-likelihood
/// `ln σ + ½ ln 2π + (y − μ)² / 2σ²`.
pub fn loss_nll(mean: &Var, sigma: &Var, target: &Var) -> Result<Var> {
    same_shape(mean, target)?;
    same_shape(sigma, target)?;
    if let Some(s) = sigma.value().data().iter().find(|&&s| s.is_nan() || s <= 0.0) {
        return Err(Error::invalid(format!("standard deviation {s} is not positive")));
    }
    let z = target.sub(mean)?.div(sigma)?;
    Ok(sigma.ln().add(&z.square().scale(0.5))?.add_scalar(0.5 * (2.0 * PI).ln()).mean_all())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nd::{Tape, Tensor};

    fn pair(seed: u64, shape: &[usize]) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::uniform(shape.to_vec(), 0.0, 1.0, &mut rng),
            Tensor::uniform(shape.to_vec(), 0.0, 1.0, &mut rng),
        )
    }

    fn eval(f: impl Fn(&Var, &Var) -> Result<Var>, a: &Tensor, b: &Tensor) -> f32 {
        let tape = Tape::inference();
        f(&tape.constant(a.clone()), &tape.constant(b.clone())).unwrap().value().item()
    }

    #[test]
    fn rec_cases() {
        let (a, b) = pair(0, &[2, 1, 4, 5]);
        assert_eq!(eval(loss_rec, &a, &a), 0.0);
        let shifted = a.map(|v| v + 0.5);
        assert!((eval(loss_rec, &shifted, &a) - 0.5).abs() < 1e-6);
        let brute: f64 =
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64;
        assert!((eval(loss_rec, &a, &b) as f64 - brute).abs() < 1e-6);
    }

    #[test]
    fn grad_loss_hand_case() {
        // pred [[1,2],[3,5]], target 0: dH = [[2,3],[0,0]], dW = [[1,0],[2,0]]
        let p = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let z = Tensor::zeros(vec![2, 2]);
        let expect = (5.0 / 4.0 + 3.0 / 4.0) / 2.0;
        assert!((eval(loss_grad, &p, &z) - expect).abs() < 1e-6);
    }

    #[test]
    fn grad_loss_is_translation_invariant() {
        let (a, b) = pair(1, &[3, 1, 6, 6]);
        assert_eq!(eval(loss_grad, &a, &a), 0.0);
        let base = eval(loss_grad, &a, &b);
        let moved = eval(loss_grad, &a.map(|v| v + 0.25), &b);
        assert!((base - moved).abs() < 1e-6);
        assert!(eval(loss_grad, &a.map(|v| v + 0.3), &a) < 1e-6);
    }

    #[test]
    fn total_is_linear_in_lambda() {
        let (a, b) = pair(2, &[2, 1, 5, 5]);
        let rec = eval(loss_rec, &a, &b);
        let grad = eval(loss_grad, &a, &b);
        assert_eq!(eval(|p, t| loss_total(p, t, 0.0), &a, &b), rec);
        let l1 = eval(|p, t| loss_total(p, t, 0.3), &a, &b);
        let l2 = eval(|p, t| loss_total(p, t, 0.6), &a, &b);
        assert!((l1 - (rec + 0.3 * grad)).abs() < 1e-6);
        assert!((l2 - l1 - 0.3 * grad).abs() < 1e-6);
        assert_eq!(eval(|p, t| loss_total(p, t, 0.5), &a, &a), 0.0);
        let tape = Tape::inference();
        assert!(loss_total(&tape.constant(a.clone()), &tape.constant(b), -1.0).is_err());
    }

    #[test]
    fn nll_closed_form_and_minimum() {
        let (y, mu) = pair(3, &[2, 1, 4, 4]);
        let tape = Tape::new();
        let ones = tape.constant(Tensor::ones(y.shape().to_vec()));
        let at_truth = loss_nll(&tape.constant(y.clone()), &ones, &tape.constant(y.clone())).unwrap();
        assert!((at_truth.value().item() - 0.918_938_5).abs() < 1e-6);

        let sigma = Tensor::uniform(y.shape().to_vec(), 0.2, 2.0, &mut ChaCha8Rng::seed_from_u64(4));
        let brute: f64 = (0..y.len())
            .map(|i| {
                let (yy, m, s) = (y.data()[i] as f64, mu.data()[i] as f64, sigma.data()[i] as f64);
                s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + (yy - m).powi(2) / (2.0 * s * s)
            })
            .sum::<f64>()
            / y.len() as f64;
        let m = tape.leaf(mu.clone());
        let l = loss_nll(&m, &tape.constant(sigma), &tape.constant(y.clone())).unwrap();
        assert!((l.value().item() as f64 - brute).abs() < 1e-5);
        // gradient points away from the target, so descent moves μ toward y
        let g = l.backward().unwrap().get_or_zeros(&m);
        for i in 0..y.len() {
            let d = mu.data()[i] - y.data()[i];
            assert!(d == 0.0 || g.data()[i].signum() == d.signum());
        }
    }

    #[test]
    fn nll_rejects_bad_sigma() {
        let tape = Tape::inference();
        let z = tape.constant(Tensor::zeros(vec![2]));
        let s = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        assert!(loss_nll(&z, &s, &z).is_err());
    }
}
