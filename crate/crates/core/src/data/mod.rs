//! Gridded concentration series: container I/O, preprocessing, sliding
//! windows and a synthetic generator.

mod container;
mod preprocess;
mod synth;

pub use container::{read_grid, read_grid_from, write_grid, write_grid_to};
pub use preprocess::{
    apply_land, detect_land, fill_missing_dates, preprocess, st_idw_fill, IdwConfig, PreprocessOptions,
    LAND_THRESHOLD,
};
pub use synth::{degrade, synth_generate, DegradeConfig, SynthConfig};

use crate::nd::Tensor;
use crate::{Error, Result};

/// A `(T, H, W)` series of concentration frames. Missing values are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    frames: Tensor,
    dates: Vec<i64>,
    land: Vec<bool>,
}

impl Grid3 {
    /// `frames` is `[T, H, W]`, `dates` holds `T` strictly increasing day
    /// numbers and `land` is a row-major `H·W` mask.
    pub fn new(frames: Tensor, dates: Vec<i64>, land: Vec<bool>) -> Result<Self> {
        let &[t, h, w] = frames.shape() else {
            return Err(Error::shape(format!("grid frames must be [T, H, W], got {:?}", frames.shape())));
        };
        if dates.len() != t {
            return Err(Error::Data(format!("{} dates for {t} frames", dates.len())));
        }
        if dates.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        if land.len() != h * w {
            return Err(Error::Data(format!("land mask has {} cells, grid has {}", land.len(), h * w)));
        }
        Ok(Grid3 { frames, dates, land })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2])
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn dates(&self) -> &[i64] {
        &self.dates
    }

    pub fn land(&self) -> &[bool] {
        &self.land
    }

    /// Values of frame `t`, row-major.
    pub fn frame(&self, t: usize) -> &[f32] {
        let (_, h, w) = self.dims();
        &self.frames.data()[t * h * w..(t + 1) * h * w]
    }

    /// Ocean mask, `true` where the cell is not land.
    pub fn ocean(&self) -> Vec<bool> {
        self.land.iter().map(|&l| !l).collect()
    }

    pub fn count_missing(&self) -> usize {
        self.frames.data().iter().filter(|v| v.is_nan()).count()
    }
}

/// One training example: `input[L_i, 1, H, W]` followed directly by
/// `target[L_o, 1, H, W]`. `anchor` is the date of the first input frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub input: Tensor,
    pub target: Tensor,
    pub anchor: i64,
}

/// Number of windows [`windows`] produces.
pub fn window_count(t: usize, in_len: usize, out_len: usize, stride: usize) -> usize {
    if stride == 0 || t < in_len + out_len {
        0
    } else {
        (t - in_len - out_len) / stride + 1
    }
}

/// Sliding windows over a daily series, one every `stride` days.
pub fn windows(g: &Grid3, in_len: usize, out_len: usize, stride: usize) -> Result<Vec<SampleWindow>> {
    if in_len == 0 || out_len == 0 || stride == 0 {
        return Err(Error::invalid("window lengths and stride must be positive"));
    }
    let (t, h, w) = g.dims();
    if t < in_len + out_len {
        return Err(Error::Data(format!(
            "series of {t} frames is shorter than one {in_len}+{out_len} window"
        )));
    }
    let plane = h * w;
    let take = |start: usize, len: usize| {
        Tensor::new(vec![len, 1, h, w], g.frames.data()[start * plane..(start + len) * plane].to_vec())
    };
    (0..window_count(t, in_len, out_len, stride))
        .map(|k| {
            let s = k * stride;
            Ok(SampleWindow {
                input: take(s, in_len)?,
                target: take(s + in_len, out_len)?,
                anchor: g.dates[s],
            })
        })
        .collect()
}

/// Chronological split into train, validation and test parts. The
/// fractions apply to the window count; the test part takes the rest.
pub fn split_chronological<T: Clone>(
    items: &[T],
    train_frac: f64,
    val_frac: f64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 {
        return Err(Error::invalid("split fractions must be in [0, 1] and sum to at most 1"));
    }
    let n = items.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train);
    Ok((
        items[..n_train].to_vec(),
        items[n_train..n_train + n_val].to_vec(),
        items[n_train + n_val..].to_vec(),
    ))
}
