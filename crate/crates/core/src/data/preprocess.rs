//! Gap filling, land detection and spatio-temporal interpolation.

use super::Grid3;
use crate::nd::Tensor;
use crate::{Error, Result};

/// A cell missing in more than this fraction of frames is land.
pub const LAND_THRESHOLD: f64 = 0.95;

/// Makes the dates a contiguous daily range. A frame with no valid value
/// counts as absent. Every absent day becomes the elementwise mean of the
/// nearest valid frames before and after it.
pub fn fill_missing_dates(g: &Grid3) -> Result<Grid3> {
    let (t, h, w) = g.dims();
    let plane = h * w;
    let valid: Vec<usize> = (0..t).filter(|&i| g.frame(i).iter().any(|v| !v.is_nan())).collect();
    let (Some(&first), Some(&last)) = (valid.first(), valid.last()) else {
        return Err(Error::Data("series has no valid frame".into()));
    };
    if first != 0 || last != t - 1 {
        return Err(Error::Data("missing frames at the start or end of the series cannot be filled".into()));
    }
    let (d0, d1) = (g.dates()[first], g.dates()[last]);
    let days = usize::try_from(d1 - d0 + 1).map_err(|_| Error::Data("date range overflows".into()))?;
    let mut data = Vec::with_capacity(days * plane);
    for pair in valid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        data.extend_from_slice(g.frame(a));
        let gap = (g.dates()[b] - g.dates()[a] - 1) as usize;
        let mean: Vec<f32> = g.frame(a).iter().zip(g.frame(b)).map(|(x, y)| (x + y) / 2.0).collect();
        for _ in 0..gap {
            data.extend_from_slice(&mean);
        }
    }
    data.extend_from_slice(g.frame(last));
    Grid3::new(Tensor::new(vec![days, h, w], data)?, (d0..=d1).collect(), g.land().to_vec())
}

/// Cells missing in more than `threshold` of all frames.
pub fn detect_land(g: &Grid3, threshold: f64) -> Vec<bool> {
    let (t, h, w) = g.dims();
    let mut missing = vec![0usize; h * w];
    for f in 0..t {
        for (m, v) in missing.iter_mut().zip(g.frame(f)) {
            *m += v.is_nan() as usize;
        }
    }
    missing.into_iter().map(|m| m as f64 / t as f64 > threshold).collect()
}

/// Marks `land` cells as land and sets them to zero in every frame.
pub fn apply_land(g: &Grid3, land: &[bool]) -> Result<Grid3> {
    let (_, h, w) = g.dims();
    if land.len() != h * w {
        return Err(Error::Data("land mask does not match the grid".into()));
    }
    let mut frames = g.frames().clone();
    for (i, v) in frames.data_mut().iter_mut().enumerate() {
        if land[i % (h * w)] {
            *v = 0.0;
        }
    }
    let mask = g.land().iter().zip(land).map(|(&a, &b)| a || b).collect();
    Grid3::new(frames, g.dates().to_vec(), mask)
}

/// Neighbourhood and kernel of [`st_idw_fill`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdwConfig {
    /// Largest spatial distance to a neighbour, in cells.
    pub spatial_radius: f64,
    /// Largest time offset to a neighbour, in days.
    pub temporal_radius: usize,
    /// Gaussian bandwidth.
    pub sigma: f64,
    /// Cells per day when mixing time into the distance.
    pub time_scale: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        IdwConfig { spatial_radius: 2.0, temporal_radius: 1, sigma: 1.0, time_scale: 1.0 }
    }
}

/// Fills every missing ocean value with a Gaussian-weighted mean of the
/// originally valid ocean values in its space-time neighbourhood:
/// `Σ wᵢvᵢ / Σ wᵢ`, `wᵢ = exp(-dᵢ² / 2σ²)`. Valid values are untouched;
/// land cells are neither filled nor used.
pub fn st_idw_fill(g: &Grid3, cfg: &IdwConfig) -> Result<Grid3> {
    if cfg.sigma.is_nan() || cfg.sigma <= 0.0 || cfg.spatial_radius < 0.0 || cfg.time_scale < 0.0 {
        return Err(Error::invalid("interpolation radius, scale and bandwidth must be positive"));
    }
    let (t, h, w) = g.dims();
    let src = g.frames().data();
    let land = g.land();
    let r = cfg.spatial_radius.floor() as isize;
    let tr = cfg.temporal_radius as isize;
    let mut out = src.to_vec();
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                let idx = (f * h + y) * w + x;
                if !src[idx].is_nan() || land[y * w + x] {
                    continue;
                }
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for dt in -tr..=tr {
                    let ff = f as isize + dt;
                    if ff < 0 || ff >= t as isize {
                        continue;
                    }
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y as isize + dy, x as isize + dx);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let ds2 = (dx * dx + dy * dy) as f64;
                            if ds2 > cfg.spatial_radius * cfg.spatial_radius {
                                continue;
                            }
                            let (yy, xx) = (yy as usize, xx as usize);
                            let v = src[(ff as usize * h + yy) * w + xx];
                            if v.is_nan() || land[yy * w + xx] {
                                continue;
                            }
                            let st = cfg.time_scale * dt as f64;
                            let wt = (-(ds2 + st * st) / (2.0 * cfg.sigma * cfg.sigma)).exp();
                            num += wt * v as f64;
                            den += wt;
                        }
                    }
                }
                if den == 0.0 {
                    return Err(Error::Data(format!(
                        "missing value at frame {f}, cell ({y}, {x}) has no valid neighbour"
                    )));
                }
                out[idx] = (num / den) as f32;
            }
        }
    }
    Grid3::new(Tensor::new(vec![t, h, w], out)?, g.dates().to_vec(), land.to_vec())
}

/// Options of [`preprocess`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PreprocessOptions {
    pub land_threshold: f64,
    /// Interpolation of the remaining gaps; `None` requires there be none.
    pub idw: Option<IdwConfig>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { land_threshold: LAND_THRESHOLD, idw: Some(IdwConfig::default()) }
    }
}

/// Date gap filling, land detection and zeroing, interpolation of what is
/// still missing and clamping to `[0, 1]`.
pub fn preprocess(g: &Grid3, opts: &PreprocessOptions) -> Result<Grid3> {
    let filled = fill_missing_dates(g)?;
    let land = detect_land(&filled, opts.land_threshold);
    let mut out = apply_land(&filled, &land)?;
    if out.count_missing() > 0 {
        out = match &opts.idw {
            Some(cfg) => st_idw_fill(&out, cfg)?,
            None => {
                return Err(Error::Data(format!(
                    "{} ocean values still missing and interpolation is off",
                    out.count_missing()
                )))
            }
        };
    }
    let frames = out.frames().map(|v| v.clamp(0.0, 1.0));
    Grid3::new(frames, out.dates().to_vec(), out.land().to_vec())
}
