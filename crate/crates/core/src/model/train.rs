//! Mini-batch training with early stopping on validation MAE.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::forecast::predict;
use super::loss::{loss_nll, loss_total};
use super::net::{check_params, forward, init_params};
use super::optim::{AdamW, AdamWConfig};
use super::{Head, ModelConfig};
use crate::data::SampleWindow;
use crate::metrics::mae;
use crate::nd::{ParamStore, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optim: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Seeds both the initial weights and the epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { optim: AdamWConfig::default(), batch_size: 4, max_epochs: 100, patience: 10, seed: 0 }
    }
}

/// Training and validation windows. `ocean` restricts validation MAE to
/// ocean cells; `None` scores every cell.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [SampleWindow],
    pub val: &'a [SampleWindow],
    pub ocean: Option<&'a [bool]>,
}

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub val_mae: f64,
    pub lr: f32,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

/// Loss and parameter gradients of one window.
fn sample_grads(config: &ModelConfig, params: &ParamStore, w: &SampleWindow) -> Result<(f32, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = forward(config, &bound, &tape.constant(w.input.clone()))?;
    let target = tape.constant(w.target.clone());
    let loss = match (config.head, &out.sigma) {
        (Head::Gaussian, Some(sigma)) => loss_nll(&out.mean, sigma, &target)?,
        _ => loss_total(&out.mean, &target, config.lambda)?,
    };
    let value = loss.value().item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = loss.backward()?;
    Ok((value, bound.gradients(&grads)))
}

/// Owns parameters and optimiser state; every [`Trainer::step`] is one
/// AdamW update on the batch-mean loss.
pub struct Trainer {
    config: ModelConfig,
    params: ParamStore,
    opt: AdamW,
    steps: usize,
}

impl Trainer {
    pub fn new(config: ModelConfig, params: ParamStore, optim: AdamWConfig) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        let opt = AdamW::new(optim, params.tensors());
        Ok(Trainer { config, params, opt, steps: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mean loss and mean gradients over `batch`. Samples run in parallel
    /// on separate tapes and are reduced in batch order.
    pub fn loss_and_grads(&self, batch: &[SampleWindow]) -> Result<(f64, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let per: Vec<(f32, Vec<Tensor>)> =
            batch.par_iter().map(|w| sample_grads(&self.config, &self.params, w)).collect::<Result<_>>()?;
        let n = batch.len() as f32;
        let loss = per.iter().map(|(l, _)| *l as f64).sum::<f64>() / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "training loss".into(), step: self.steps });
        }
        let mut sum: Vec<Vec<f32>> = self.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for (_, grads) in &per {
            for (acc, g) in sum.iter_mut().zip(grads) {
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
        let grads = sum
            .into_iter()
            .zip(self.params.tensors())
            .map(|(acc, t)| Tensor::new(t.shape().to_vec(), acc.into_iter().map(|v| v / n).collect()))
            .collect::<Result<Vec<_>>>()?;
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite { what: "training gradient".into(), step: self.steps });
        }
        Ok((loss, grads))
    }

    /// One optimiser update; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[SampleWindow]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        self.opt.step(self.params.tensors_mut(), &grads)?;
        self.steps += 1;
        Ok(loss)
    }

    /// MAE in percent of the clamped forecasts over `windows`.
    pub fn evaluate(&self, windows: &[SampleWindow], ocean: Option<&[bool]>) -> Result<f64> {
        validation_mae(&self.config, &self.params, windows, ocean)
    }
}

fn validation_mae(
    config: &ModelConfig,
    params: &ParamStore,
    windows: &[SampleWindow],
    ocean: Option<&[bool]>,
) -> Result<f64> {
    let errs: Vec<(f64, usize)> = windows
        .par_iter()
        .map(|w| {
            let f = predict(config, params, &w.input)?;
            let plane = w.target.shape()[2] * w.target.shape()[3];
            let all = vec![true; plane];
            let mask = ocean.unwrap_or(&all);
            let cells = mask.iter().filter(|&&o| o).count() * w.target.len() / plane;
            Ok((mae(&f.mean, &w.target, mask)? * cells as f64, cells))
        })
        .collect::<Result<_>>()?;
    let cells: usize = errs.iter().map(|e| e.1).sum();
    Ok(errs.iter().map(|e| e.0).sum::<f64>() / cells as f64)
}

/// Trains from fresh weights until `max_epochs` or until validation MAE
/// has not improved for `patience` epochs, and returns the best weights.
pub fn train(config: &ModelConfig, tcfg: &TrainConfig, data: TrainData) -> Result<TrainOutcome> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data("training and validation splits must be nonempty".into()));
    }
    if tcfg.batch_size == 0 || tcfg.max_epochs == 0 {
        return Err(Error::invalid("batch size and epoch count must be positive"));
    }
    let mut trainer = Trainer::new(config.clone(), init_params(config, tcfg.seed)?, tcfg.optim)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    let mut best = (trainer.params.clone(), 0usize, f64::INFINITY);
    let mut stale = 0;
    for epoch in 1..=tcfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<SampleWindow> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            total += trainer.step(&batch)?;
            batches += 1;
        }
        let val_mae = trainer.evaluate(data.val, data.ocean)?;
        history.push(HistoryRow { epoch, train_loss: total / batches as f64, val_mae, lr: tcfg.optim.lr });
        if val_mae < best.2 {
            best = (trainer.params.clone(), epoch, val_mae);
            stale = 0;
        } else {
            stale += 1;
            if stale >= tcfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best.0, history, best_epoch: best.1, best_val_mae: best.2 })
}

/// Writes `epoch,train_loss,val_mae,lr` rows.
pub fn write_history_csv(rows: &[HistoryRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_mae,lr")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_mae, r.lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, windows, SynthConfig};

    fn toy() -> ModelConfig {
        ModelConfig { in_len: 4, out_len: 4, hidden: 4, n_fssm: 1, state_size: 2, ..Default::default() }
    }

    fn samples(n: usize) -> Vec<SampleWindow> {
        let g =
            synth_generate(&SynthConfig { t: 8 + n - 1, h: 8, w: 8, seed: 2, ..Default::default() }).unwrap();
        windows(&g, 4, 4, 1).unwrap()
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = toy();
        let start = init_params(&cfg, 1).unwrap();
        let optim = AdamWConfig { lr: 0.0, ..Default::default() };
        let mut t = Trainer::new(cfg, start.clone(), optim).unwrap();
        let data = samples(4);
        for _ in 0..3 {
            t.step(&data).unwrap();
        }
        for (a, b) in t.params().tensors().iter().zip(start.tensors()) {
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn training_is_deterministic_and_stops_early() {
        let cfg = toy();
        let data = samples(10);
        let tcfg = TrainConfig { max_epochs: 4, patience: 1, seed: 5, ..Default::default() };
        let run =
            || train(&cfg, &tcfg, TrainData { train: &data[..7], val: &data[7..], ocean: None }).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.tensors(), b.params.tensors());
        assert!(!a.history.is_empty() && a.history.len() <= 4);
        let best = a.history.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
        assert_eq!(best, a.best_val_mae);
        assert_eq!(a.history[a.best_epoch - 1].val_mae, best);
    }

    #[test]
    fn history_csv_layout() {
        let rows = [HistoryRow { epoch: 1, train_loss: 0.5, val_mae: 3.25, lr: 0.001 }];
        let mut buf = Vec::new();
        write_history_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_mae,lr\n1,0.5,3.25,0.001\n");
    }

    #[test]
    fn gaussian_head_trains() {
        let cfg = ModelConfig { head: Head::Gaussian, ..toy() };
        let data = samples(2);
        let mut t = Trainer::new(cfg.clone(), init_params(&cfg, 0).unwrap(), AdamWConfig::default()).unwrap();
        let first = t.step(&data).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = t.step(&data).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn rejects_empty_splits() {
        let data = samples(2);
        let r = train(&toy(), &TrainConfig::default(), TrainData { train: &data, val: &[], ocean: None });
        assert!(r.is_err());
    }
}
