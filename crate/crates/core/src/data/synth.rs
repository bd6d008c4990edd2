//! Synthetic drifting-blob series standing in for satellite concentration
//! products, plus a degrader that punches realistic holes into them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Grid3;
use crate::nd::Tensor;
use crate::{Error, Result};

/// Parameters of [`synth_generate`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub n_blobs: usize,
    /// Blob speed in cells per day.
    pub drift: f64,
    /// Day number of the first frame.
    pub start_day: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 0, t: 120, h: 16, w: 16, n_blobs: 4, drift: 0.3, start_day: 0 }
    }
}

struct Blob {
    y: f64,
    x: f64,
    vy: f64,
    vx: f64,
    radius: f64,
    amp: f64,
}

/// Cells inside a quarter disc at the `(0, 0)` corner.
fn land_mask(h: usize, w: usize) -> Vec<bool> {
    let r = 0.25 * h.min(w) as f64;
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            y * y + x * x < r * r
        })
        .collect()
}

/// Gaussian blobs on a torus, each moving at `drift` cells per day in its
/// own random direction, scaled by an annual cycle and clamped to `[0, 1]`.
/// Land is a quarter disc in one corner and holds zeros.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Grid3> {
    let SynthConfig { t, h, w, .. } = *cfg;
    if t < 8 || h < 8 || w < 8 {
        return Err(Error::invalid(format!("synthetic dims must be at least 8, got ({t}, {h}, {w})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase: f64 = rng.gen_range(0.0..365.0);
    let blobs: Vec<Blob> = (0..cfg.n_blobs)
        .map(|_| {
            let angle: f64 = rng.gen_range(0.0..2.0 * PI);
            Blob {
                y: rng.gen_range(0.0..h as f64),
                x: rng.gen_range(0.0..w as f64),
                vy: cfg.drift * angle.sin(),
                vx: cfg.drift * angle.cos(),
                radius: rng.gen_range(0.12..0.3) * h.min(w) as f64,
                amp: rng.gen_range(0.6..1.2),
            }
        })
        .collect();
    let land = land_mask(h, w);
    // shortest signed offset on a ring of length n
    let wrap = |d: f64, n: f64| d - n * (d / n).round();
    let mut data = Vec::with_capacity(t * h * w);
    for f in 0..t {
        let day = f as f64;
        let season = 0.75 + 0.25 * (2.0 * PI * (day + phase) / 365.0).cos();
        for y in 0..h {
            for x in 0..w {
                if land[y * w + x] {
                    data.push(0.0);
                    continue;
                }
                let v: f64 = blobs
                    .iter()
                    .map(|b| {
                        let dy = wrap(y as f64 - (b.y + b.vy * day), h as f64);
                        let dx = wrap(x as f64 - (b.x + b.vx * day), w as f64);
                        b.amp * (-(dy * dy + dx * dx) / (2.0 * b.radius * b.radius)).exp()
                    })
                    .sum();
                data.push((season * v).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Grid3::new(Tensor::new(vec![t, h, w], data)?, (cfg.start_day..cfg.start_day + t as i64).collect(), land)
}

/// Parameters of [`degrade`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradeConfig {
    /// Probability that an ocean value goes missing.
    pub missing_fraction: f64,
    /// Number of interior dates dropped from the series.
    pub gap_days: usize,
    pub seed: u64,
}

/// Turns a clean grid into a raw-looking one: land becomes missing, a
/// random fraction of ocean values goes missing and `gap_days` interior
/// dates are removed. The land mask is cleared so it must be re-detected.
pub fn degrade(g: &Grid3, cfg: &DegradeConfig) -> Result<Grid3> {
    if !(0.0..1.0).contains(&cfg.missing_fraction) {
        return Err(Error::invalid("missing fraction must be in [0, 1)"));
    }
    let (t, h, w) = g.dims();
    if cfg.gap_days + 2 > t {
        return Err(Error::invalid(format!("cannot drop {} of {t} dates", cfg.gap_days)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut interior: Vec<usize> = (1..t - 1).collect();
    let mut dropped = vec![false; t];
    for k in 0..cfg.gap_days {
        let j = rng.gen_range(k..interior.len());
        interior.swap(k, j);
        dropped[interior[k]] = true;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity((t - cfg.gap_days) * plane);
    let mut dates = Vec::with_capacity(t - cfg.gap_days);
    for f in (0..t).filter(|&f| !dropped[f]) {
        dates.push(g.dates()[f]);
        for (i, &v) in g.frame(f).iter().enumerate() {
            let gone = g.land()[i] || rng.gen_bool(cfg.missing_fraction);
            data.push(if gone { f32::NAN } else { v });
        }
    }
    Grid3::new(Tensor::new(vec![dates.len(), h, w], data)?, dates, vec![false; plane])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, PreprocessOptions};

    fn cfg() -> SynthConfig {
        SynthConfig { t: 20, ..Default::default() }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = synth_generate(&cfg()).unwrap();
        let b = synth_generate(&cfg()).unwrap();
        let bits = |g: &Grid3| g.frames().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.frames().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.frames().data().iter().any(|&v| v > 0.3));
        let (_, h, w) = a.dims();
        for f in 0..20 {
            assert!((0..h * w).filter(|&i| a.land()[i]).all(|i| a.frame(f)[i] == 0.0));
        }
        assert!(a.land()[0] && !a.land()[h * w - 1]);
    }

    #[test]
    fn no_blobs_is_empty_ocean() {
        let g = synth_generate(&SynthConfig { n_blobs: 0, ..cfg() }).unwrap();
        assert!(g.frames().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_drift_only_changes_amplitude() {
        let g = synth_generate(&SynthConfig { drift: 0.0, n_blobs: 2, ..cfg() }).unwrap();
        // unclamped cells scale by one factor per frame
        let first = g.frame(0);
        for f in 1..20 {
            let ratios: Vec<f32> = g
                .frame(f)
                .iter()
                .zip(first)
                .filter(|(a, b)| **b > 0.01 && **b < 0.5 && **a < 0.99)
                .map(|(a, b)| a / b)
                .collect();
            assert!(!ratios.is_empty());
            let r0 = ratios[0];
            assert!(ratios.iter().all(|r| (r - r0).abs() < 1e-4));
        }
    }

    #[test]
    fn rejects_small_dims() {
        assert!(synth_generate(&SynthConfig { h: 4, ..cfg() }).is_err());
    }

    #[test]
    fn degraded_grid_preprocesses_back() {
        let g = synth_generate(&cfg()).unwrap();
        let raw = degrade(&g, &DegradeConfig { missing_fraction: 0.05, gap_days: 3, seed: 1 }).unwrap();
        assert_eq!(raw.dims().0, 17);
        assert!(raw.count_missing() > 0);
        let clean = preprocess(&raw, &PreprocessOptions::default()).unwrap();
        assert_eq!(clean.dims(), g.dims());
        assert_eq!(clean.land(), g.land());
        assert_eq!(clean.count_missing(), 0);
    }
}
