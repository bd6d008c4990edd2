//! Ocean-only forecast scores, extent and overlap, bias maps and the JSON
//! report.
//!
//! Frame-shaped inputs are tensors whose two trailing axes are `H, W`; the
//! ocean mask is a row-major `H·W` slice applied to every leading index.

use std::io::Write;

use crate::nd::Tensor;
use crate::{Error, Result};

/// Concentration at or above which a cell counts as ice.
pub const ICE_THRESHOLD: f32 = 0.15;

fn plane(t: &Tensor) -> Result<usize> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::shape(format!("expected [.., H, W], got {s:?}")));
    }
    Ok(s[s.len() - 2] * s[s.len() - 1])
}

/// Ocean `(prediction, target)` pairs.
fn ocean_pairs(pred: &Tensor, target: &Tensor, ocean: &[bool]) -> Result<Vec<(f64, f64)>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let p = plane(pred)?;
    if ocean.len() != p {
        return Err(Error::shape(format!("ocean mask has {} cells, frames have {p}", ocean.len())));
    }
    let pairs: Vec<(f64, f64)> = pred
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .filter(|(i, _)| ocean[i % p])
        .map(|(_, (&a, &b))| (a as f64, b as f64))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("ocean mask is empty"));
    }
    Ok(pairs)
}

fn rmse_of(pairs: &[(f64, f64)]) -> f64 {
    let s: f64 = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum();
    100.0 * (s / pairs.len() as f64).sqrt()
}

fn mae_of(pairs: &[(f64, f64)]) -> f64 {
    let s: f64 = pairs.iter().map(|(a, b)| (a - b).abs()).sum();
    100.0 * s / pairs.len() as f64
}

fn nse_of(pairs: &[(f64, f64)]) -> Result<f64> {
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let var: f64 = pairs.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum();
    if var == 0.0 {
        return Err(Error::Data("target is constant over the ocean; efficiency undefined".into()));
    }
    let res: f64 = pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(100.0 * (1.0 - res / var))
}

/// Root mean square error over ocean cells, in percent.
pub fn rmse(pred: &Tensor, target: &Tensor, ocean: &[bool]) -> Result<f64> {
    Ok(rmse_of(&ocean_pairs(pred, target, ocean)?))
}

/// Mean absolute error over ocean cells, in percent.
pub fn mae(pred: &Tensor, target: &Tensor, ocean: &[bool]) -> Result<f64> {
    Ok(mae_of(&ocean_pairs(pred, target, ocean)?))
}

/// Nash–Sutcliffe efficiency over ocean cells, in percent.
pub fn nse(pred: &Tensor, target: &Tensor, ocean: &[bool]) -> Result<f64> {
    nse_of(&ocean_pairs(pred, target, ocean)?)
}

fn check_threshold(threshold: f32) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("ice threshold {threshold} outside (0, 1)")));
    }
    Ok(())
}

/// Ice extent: cells at or above `threshold` times `cell_area`.
pub fn sie(frame: &Tensor, threshold: f32, cell_area: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let n = frame.data().iter().filter(|&&v| v >= threshold).count();
    Ok(n as f64 * cell_area)
}

/// Intersection over union of the ice masks; 1 when both are empty.
pub fn iou(pred: &Tensor, target: &Tensor, threshold: f32) -> Result<f64> {
    check_threshold(threshold)?;
    if pred.shape() != target.shape() {
        return Err(Error::shape("iou inputs differ in shape"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let (a, b) = (a >= threshold, b >= threshold);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Signed error `pred − target`.
pub fn bias_map(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.zip_map(target, |a, b| a - b)
}

fn bias_frame(bias: &Tensor) -> Result<(usize, usize, f32)> {
    let &[h, w] = bias.shape() else {
        return Err(Error::shape(format!("bias image must be [H, W], got {:?}", bias.shape())));
    };
    let scale = bias.data().iter().fold(0.0f32, |m, v| if v.is_nan() { m } else { m.max(v.abs()) });
    Ok((h, w, scale))
}

fn level(v: f32, scale: f32) -> u8 {
    if scale == 0.0 || v.is_nan() {
        0
    } else {
        (255.0 * (v.abs() / scale).min(1.0)).round() as u8
    }
}

/// Binary PPM of a `[H, W]` bias map: positive errors in red, negative in
/// blue, both scaled by the largest magnitude.
pub fn write_bias_ppm(bias: &Tensor, mut out: impl Write) -> Result<()> {
    let (h, w, scale) = bias_frame(bias)?;
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut px = Vec::with_capacity(3 * h * w);
    for &v in bias.data() {
        let l = level(v, scale);
        px.extend(if v > 0.0 { [l, 0, 0] } else { [0, 0, l] });
    }
    out.write_all(&px)?;
    Ok(())
}

/// Binary PGM of a `[H, W]` bias map: 128 is zero, 255 and 1 the largest
/// positive and negative errors.
pub fn write_bias_pgm(bias: &Tensor, mut out: impl Write) -> Result<()> {
    let (h, w, scale) = bias_frame(bias)?;
    write!(out, "P5\n{w} {h}\n255\n")?;
    let px: Vec<u8> = bias
        .data()
        .iter()
        .map(|&v| {
            let l = level(v, scale) as f32 * 127.0 / 255.0;
            (128.0 + v.signum() * l).round() as u8
        })
        .collect();
    out.write_all(&px)?;
    Ok(())
}

/// Scores of a set of frames.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scores {
    /// 1-based lead day; absent for the overall scores.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lead_day: Option<usize>,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the target is constant over the ocean.
    pub nse: Option<f64>,
    /// Mean per-frame ice-mask IoU.
    pub iou: f64,
    /// Mean per-frame ice extent of the forecast.
    pub sie_pred: f64,
    /// Mean per-frame ice extent of the target.
    pub sie_true: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub overall: Scores,
    pub per_lead_day: Vec<Scores>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalOptions {
    pub threshold: f32,
    pub cell_area: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: ICE_THRESHOLD, cell_area: 1.0 }
    }
}

#[derive(Default)]
struct Pool {
    pairs: Vec<(f64, f64)>,
    iou: f64,
    sie_pred: f64,
    sie_true: f64,
    frames: usize,
}

impl Pool {
    fn scores(&self, lead_day: Option<usize>) -> Scores {
        let f = self.frames as f64;
        Scores {
            lead_day,
            rmse: rmse_of(&self.pairs),
            mae: mae_of(&self.pairs),
            nse: nse_of(&self.pairs).ok(),
            iou: self.iou / f,
            sie_pred: self.sie_pred / f,
            sie_true: self.sie_true / f,
        }
    }
}

fn ocean_only(frame: &[f32], ocean: &[bool], h: usize, w: usize) -> Result<Tensor> {
    let masked = frame.iter().zip(ocean).map(|(&v, &o)| if o { v } else { 0.0 }).collect();
    Tensor::new(vec![h, w], masked)
}

/// Scores forecasts against targets. Each pair is `[L, .., H, W]` with the
/// lead day on the first axis; extents and IoU use ocean cells only.
pub fn evaluate(pairs: &[(Tensor, Tensor)], ocean: &[bool], opts: &EvalOptions) -> Result<MetricsReport> {
    check_threshold(opts.threshold)?;
    let Some((first, _)) = pairs.first() else {
        return Err(Error::invalid("nothing to evaluate"));
    };
    let shape = first.shape().to_vec();
    if shape.len() < 3 {
        return Err(Error::shape(format!("forecasts must be [L, .., H, W], got {shape:?}")));
    }
    let (leads, h, w) = (shape[0], shape[shape.len() - 2], shape[shape.len() - 1]);
    let p = h * w;
    let mut pools: Vec<Pool> = (0..leads).map(|_| Pool::default()).collect();
    for (pred, target) in pairs {
        if pred.shape() != &shape[..] || target.shape() != &shape[..] {
            return Err(Error::shape("forecast and target shapes differ across pairs"));
        }
        let per_lead = pred.len() / leads;
        for (lead, pool) in pools.iter_mut().enumerate() {
            let range = lead * per_lead..(lead + 1) * per_lead;
            let pt = Tensor::new(shape[1..].to_vec(), pred.data()[range.clone()].to_vec())?;
            let tt = Tensor::new(shape[1..].to_vec(), target.data()[range].to_vec())?;
            pool.pairs.extend(ocean_pairs(&pt, &tt, ocean)?);
            for k in 0..per_lead / p {
                let a = ocean_only(&pt.data()[k * p..(k + 1) * p], ocean, h, w)?;
                let b = ocean_only(&tt.data()[k * p..(k + 1) * p], ocean, h, w)?;
                pool.iou += iou(&a, &b, opts.threshold)?;
                pool.sie_pred += sie(&a, opts.threshold, opts.cell_area)?;
                pool.sie_true += sie(&b, opts.threshold, opts.cell_area)?;
                pool.frames += 1;
            }
        }
    }
    let mut all = Pool::default();
    for pool in &pools {
        all.pairs.extend_from_slice(&pool.pairs);
        all.iou += pool.iou;
        all.sie_pred += pool.sie_pred;
        all.sie_true += pool.sie_true;
        all.frames += pool.frames;
    }
    Ok(MetricsReport {
        overall: all.scores(None),
        per_lead_day: pools.iter().enumerate().map(|(i, pool)| pool.scores(Some(i + 1))).collect(),
    })
}
