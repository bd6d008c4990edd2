//! Inference and recursive multi-window forecasting.

use super::net::{check_params, forward};
use super::ModelConfig;
use crate::nd::{ParamStore, Tape, Tensor};
use crate::{Error, Result};

/// Forecast frames `[L_o, C, H, W]`. `mean` is clamped to `[0, 1]`;
/// `sigma` is present for the Gaussian head.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub mean: Tensor,
    pub sigma: Option<Tensor>,
}

/// Runs the network without recording gradients.
pub fn predict(config: &ModelConfig, params: &ParamStore, x: &Tensor) -> Result<Forecast> {
    let tape = Tape::inference();
    let out = forward(config, &params.bind(&tape), &tape.constant(x.clone()))?;
    let mean = out.mean.value().map(|v| v.clamp(0.0, 1.0));
    if !mean.all_finite() {
        return Err(Error::NonFinite { what: "forecast".into(), step: 0 });
    }
    Ok(Forecast { mean, sigma: out.sigma.map(|s| (*s.value()).clone()) })
}

/// Chains `steps` forecasts, each fed the latest `L_i` frames of input and
/// clamped predictions so far. Returns `[steps·L_o, C, H, W]`.
pub fn recursive_forecast(
    config: &ModelConfig,
    params: &ParamStore,
    x: &Tensor,
    steps: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("recursive forecast needs at least one step"));
    }
    check_params(config, params)?;
    let shape = x.shape().to_vec();
    let [t, c, h, w] = shape[..] else {
        return Err(Error::shape(format!("input must be [L_i, C, H, W], got {shape:?}")));
    };
    let frame = c * h * w;
    let mut history = x.data().to_vec();
    let mut out = Vec::with_capacity(steps * config.out_len * frame);
    for _ in 0..steps {
        let start = history.len() - t * frame;
        let input = Tensor::new(shape.clone(), history[start..].to_vec())?;
        let f = predict(config, params, &input)?;
        history.extend_from_slice(f.mean.data());
        out.extend_from_slice(f.mean.data());
    }
    Tensor::new(vec![steps * config.out_len, c, h, w], out)
}
