//! One-level 2-d discrete wavelet transforms and the frequency branch.
//!
//! Transforms act on the two trailing axes of a tensor and use periodic
//! extension, so every even length reconstructs perfectly. The stacked
//! layout used on the tape is `[..., 4, H/2, W/2]` with subbands ordered
//! `ll, lh, hl, hh`; `lh` holds horizontal detail (differences along `W`),
//! `hl` vertical detail (differences along `H`).

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::nd::{concat, Tensor, Var};
use crate::{Error, Result};

/// Wavelet family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Haar,
    Db2,
    #[serde(rename = "bior1.3")]
    Bior13,
}

/// Low-pass and high-pass filters, each `(taps, offset)`.
type FilterPair = [(Vec<f64>, isize); 2];

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Haar => "haar",
            Basis::Db2 => "db2",
            Basis::Bior13 => "bior1.3",
        }
    }

    /// Analysis filters, then the dual filters whose transposed operator
    /// is the synthesis. Each filter is `(taps, offset of the first tap
    /// relative to 2k)`.
    fn banks(self) -> (FilterPair, FilterPair) {
        match self {
            Basis::Haar => {
                let lo = vec![1.0 / SQRT_2, 1.0 / SQRT_2];
                let hi = vec![1.0 / SQRT_2, -1.0 / SQRT_2];
                let bank = [(lo, 0), (hi, 0)];
                (bank.clone(), bank)
            }
            Basis::Db2 => {
                let s3 = 3f64.sqrt();
                let k = 4.0 * SQRT_2;
                let lo = vec![(1.0 + s3) / k, (3.0 + s3) / k, (3.0 - s3) / k, (1.0 - s3) / k];
                let hi: Vec<f64> = (0..4).map(|n| if n % 2 == 0 { lo[3 - n] } else { -lo[3 - n] }).collect();
                let bank = [(lo, 0), (hi, 0)];
                (bank.clone(), bank)
            }
            Basis::Bior13 => {
                let k = 8.0 * SQRT_2;
                let analysis = [
                    ([-1.0, 1.0, 8.0, 8.0, 1.0, -1.0].map(|v| v / k).to_vec(), -2),
                    (vec![1.0 / SQRT_2, -1.0 / SQRT_2], 0),
                ];
                let dual = [
                    (vec![1.0 / SQRT_2, 1.0 / SQRT_2], 0),
                    ([-1.0, -1.0, 8.0, -8.0, 1.0, 1.0].map(|v| v / k).to_vec(), -2),
                ];
                (analysis, dual)
            }
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(Basis::Haar),
            "db2" => Ok(Basis::Db2),
            "bior1.3" | "bior13" => Ok(Basis::Bior13),
            _ => Err(Error::invalid(format!("unknown wavelet basis {s}"))),
        }
    }
}

/// Dense `n × n` operator; rows `0..n/2` low-pass, `n/2..n` high-pass.
fn periodic_operator(bank: &[(Vec<f64>, isize); 2], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for (b, (taps, off)) in bank.iter().enumerate() {
        for k in 0..n / 2 {
            let row = b * n / 2 + k;
            for (i, &t) in taps.iter().enumerate() {
                let col = (2 * k as isize + off + i as isize).rem_euclid(n as isize) as usize;
                m[row * n + col] += t;
            }
        }
    }
    m
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

/// The four plane maps of one basis at one size.
struct Plan {
    /// analysis operators along H and W
    ah: Vec<f64>,
    aw: Vec<f64>,
    /// synthesis operators (transposed duals)
    sh: Vec<f64>,
    sw: Vec<f64>,
}

impl Plan {
    fn new(basis: Basis, h: usize, w: usize) -> Result<Plan> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(Error::shape(format!("wavelet transform needs even sizes, got {h}x{w}")));
        }
        let (analysis, dual) = basis.banks();
        Ok(Plan {
            ah: periodic_operator(&analysis, h),
            aw: periodic_operator(&analysis, w),
            sh: transpose(&periodic_operator(&dual, h), h),
            sw: transpose(&periodic_operator(&dual, w), w),
        })
    }
}

/// `L · X · Rᵀ` for an `h × w` plane `X`.
fn sandwich(l: &[f64], x: &[f32], r: &[f64], h: usize, w: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let rr = &r[j * w..(j + 1) * w];
            tmp[i * w + j] = x[i * w..(i + 1) * w].iter().zip(rr).map(|(&a, &b)| a as f64 * b).sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = (0..h).map(|k| l[i * h + k] * tmp[k * w + j]).sum::<f64>() as f32;
        }
    }
    out
}

/// Plane in block layout (`[lo|hi]` quadrants) to stacked `[4, h/2, w/2]`.
fn blocks_to_stacked(p: &[f32], h: usize, w: usize, out: &mut [f32]) {
    let (hh, hw) = (h / 2, w / 2);
    for band in 0..4 {
        let (r0, c0) = [(0, 0), (0, hw), (hh, 0), (hh, hw)][band];
        for i in 0..hh {
            for j in 0..hw {
                out[(band * hh + i) * hw + j] = p[(r0 + i) * w + c0 + j];
            }
        }
    }
}

fn stacked_to_blocks(s: &[f32], h: usize, w: usize) -> Vec<f32> {
    let (hh, hw) = (h / 2, w / 2);
    let mut p = vec![0.0f32; h * w];
    for band in 0..4 {
        let (r0, c0) = [(0, 0), (0, hw), (hh, 0), (hh, hw)][band];
        for i in 0..hh {
            for j in 0..hw {
                p[(r0 + i) * w + c0 + j] = s[(band * hh + i) * hw + j];
            }
        }
    }
    p
}

/// Per plane: `[H, W] -> [4, H/2, W/2]` via `L · X · Rᵀ`.
fn forward_planes(x: &[f32], l: &[f64], r: &[f64], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(h * w)) {
        blocks_to_stacked(&sandwich(l, src, r, h, w), h, w, dst);
    }
    out
}

/// Per plane: `[4, H/2, W/2] -> [H, W]` via `L · Y · Rᵀ`.
fn inverse_planes(s: &[f32], l: &[f64], r: &[f64], h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(s.len());
    for src in s.chunks(h * w) {
        out.extend(sandwich(l, &stacked_to_blocks(src, h, w), r, h, w));
    }
    out
}

fn trailing_hw(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] => Ok((*h, *w)),
        _ => Err(Error::shape(format!("wavelet input needs [.., H, W], got {shape:?}"))),
    }
}

/// Analysis on the tape: `[..., H, W] -> [..., 4, H/2, W/2]`.
pub fn dwt2_var(x: &Var, basis: Basis) -> Result<Var> {
    let shape = x.shape();
    let (h, w) = trailing_hw(&shape)?;
    let plan = Plan::new(basis, h, w)?;
    let data = forward_planes(x.value().data(), &plan.ah, &plan.aw, h, w);
    let mut out_shape = shape[..shape.len() - 2].to_vec();
    out_shape.extend([4, h / 2, w / 2]);
    let value = Tensor::new(out_shape, data)?;
    let (aht, awt) = (transpose(&plan.ah, h), transpose(&plan.aw, w));
    Ok(x.tape().record(value, &[x], move |g, _, _| {
        let gx = inverse_planes(g.data(), &aht, &awt, h, w);
        vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
    }))
}

/// Synthesis on the tape: `[..., 4, h, w] -> [..., 2h, 2w]`.
pub fn idwt2_var(s: &Var, basis: Basis) -> Result<Var> {
    let shape = s.shape();
    let n = shape.len();
    if n < 3 || shape[n - 3] != 4 {
        return Err(Error::shape(format!("expected [.., 4, h, w] subbands, got {shape:?}")));
    }
    let (h, w) = (2 * shape[n - 2], 2 * shape[n - 1]);
    let plan = Plan::new(basis, h, w)?;
    let data = inverse_planes(s.value().data(), &plan.sh, &plan.sw, h, w);
    let mut out_shape = shape[..n - 3].to_vec();
    out_shape.extend([h, w]);
    let value = Tensor::new(out_shape, data)?;
    let (sht, swt) = (transpose(&plan.sh, h), transpose(&plan.sw, w));
    Ok(s.tape().record(value, &[s], move |g, _, _| {
        let gs = forward_planes(g.data(), &sht, &swt, h, w);
        vec![Some(Tensor::new(shape.clone(), gs).unwrap())]
    }))
}

/// Subbands of a one-level transform.
#[derive(Clone, Debug, PartialEq)]
pub struct DwtPyramid {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    pub basis: Basis,
}

/// One-level analysis of `x[..., H, W]` with even `H`, `W`.
pub fn dwt2(x: &Tensor, basis: Basis) -> Result<DwtPyramid> {
    let tape = crate::nd::Tape::inference();
    let s = dwt2_var(&tape.constant(x.clone()), basis)?.value();
    let shape = s.shape();
    let n = shape.len();
    let band_len = shape[n - 2] * shape[n - 1];
    let outer = s.len() / (4 * band_len);
    let mut band_shape = shape[..n - 3].to_vec();
    band_shape.extend(&shape[n - 2..]);
    let mut bands = (0..4).map(|b| {
        let mut data = Vec::with_capacity(outer * band_len);
        for o in 0..outer {
            let start = (o * 4 + b) * band_len;
            data.extend_from_slice(&s.data()[start..start + band_len]);
        }
        Tensor::new(band_shape.clone(), data)
    });
    Ok(DwtPyramid {
        ll: bands.next().unwrap()?,
        lh: bands.next().unwrap()?,
        hl: bands.next().unwrap()?,
        hh: bands.next().unwrap()?,
        basis,
    })
}

/// Inverse of [`dwt2`].
pub fn idwt2(p: &DwtPyramid) -> Result<Tensor> {
    let shape = p.ll.shape();
    if [&p.lh, &p.hl, &p.hh].iter().any(|b| b.shape() != shape) || shape.len() < 2 {
        return Err(Error::shape("subbands differ in shape"));
    }
    let n = shape.len();
    let band_len = shape[n - 2] * shape[n - 1];
    let outer = p.ll.len() / band_len;
    let mut data = Vec::with_capacity(4 * p.ll.len());
    for o in 0..outer {
        for b in [&p.ll, &p.lh, &p.hl, &p.hh] {
            data.extend_from_slice(&b.data()[o * band_len..(o + 1) * band_len]);
        }
    }
    let mut stacked_shape = shape[..n - 2].to_vec();
    stacked_shape.extend([4, shape[n - 2], shape[n - 1]]);
    let tape = crate::nd::Tape::inference();
    let s = tape.constant(Tensor::new(stacked_shape, data)?);
    Ok((*idwt2_var(&s, p.basis)?.value()).clone())
}

/// Pads the trailing axis `axis` to even length by repeating its last entry.
fn pad_even(x: &Var, axis: usize) -> Result<Var> {
    let n = x.shape()[axis];
    if n.is_multiple_of(2) {
        Ok(x.clone())
    } else {
        concat(&[x, &x.slice(axis, n - 1, 1)?], axis)
    }
}

/// Frequency branch on `x[T, C, H, W]`: transform every frame and channel,
/// scale the three detail subbands by `gains[C, 3]` (ordered `lh, hl, hh`)
/// and transform back. Odd sizes are padded by replication and cropped.
pub fn freq_branch(x: &Var, gains: &Var, basis: Basis) -> Result<Var> {
    let shape = x.shape();
    let [_, c, h, w] = shape[..] else {
        return Err(Error::shape(format!("frequency branch input {shape:?} is not 4-d")));
    };
    if gains.shape() != [c, 3] {
        return Err(Error::shape(format!("gains {:?} do not match {c} channels", gains.shape())));
    }
    let padded = pad_even(&pad_even(x, 2)?, 3)?;
    let bands = dwt2_var(&padded, basis)?;
    let one = x.tape().constant(Tensor::ones(vec![c, 1]));
    let full = concat(&[&one, gains], 1)?.reshape(vec![c, 4, 1, 1])?;
    let y = idwt2_var(&bands.mul(&full)?, basis)?;
    let y = if y.shape()[2] != h { y.slice(2, 0, h)? } else { y };
    if y.shape()[3] != w {
        y.slice(3, 0, w)
    } else {
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nd::gradcheck::{grad_check, project};
    use crate::nd::Tape;

    const BASES: [Basis; 3] = [Basis::Haar, Basis::Db2, Basis::Bior13];

    #[test]
    fn haar_two_by_two_matches_matrix() {
        let (a, b, c, d) = (1.0f32, 4.0, -2.0, 0.5);
        let x = Tensor::new(vec![2, 2], vec![a, b, c, d]).unwrap();
        let p = dwt2(&x, Basis::Haar).unwrap();
        let close = |t: &Tensor, v: f32| assert!((t.item() - v).abs() < 1e-6, "{t:?} vs {v}");
        close(&p.ll, (a + b + c + d) / 2.0);
        close(&p.lh, (a - b + c - d) / 2.0);
        close(&p.hl, (a + b - c - d) / 2.0);
        close(&p.hh, (a - b - c + d) / 2.0);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = Tensor::full(vec![6, 8], 0.3);
        for basis in BASES {
            let p = dwt2(&x, basis).unwrap();
            assert!(p.ll.data().iter().all(|&v| (v - 0.6).abs() < 1e-6), "{basis}");
            for band in [&p.lh, &p.hl, &p.hh] {
                assert!(band.max_abs() < 1e-6, "{basis}");
            }
        }
    }

    #[test]
    fn perfect_reconstruction_all_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for basis in BASES {
            for (h, w) in [(2, 2), (4, 6), (10, 8), (64, 64)] {
                let x = Tensor::uniform(vec![2, h, w], -1.0, 1.0, &mut rng);
                let back = idwt2(&dwt2(&x, basis).unwrap()).unwrap();
                assert!(back.max_abs_diff(&x) < 1e-5, "{basis} {h}x{w}");
            }
        }
    }

    #[test]
    fn haar_and_db2_conserve_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::uniform(vec![16, 12], -1.0, 1.0, &mut rng);
        for basis in [Basis::Haar, Basis::Db2] {
            let p = dwt2(&x, basis).unwrap();
            let e: f64 = [&p.ll, &p.lh, &p.hl, &p.hh].iter().map(|b| b.dot(b)).sum();
            assert!((e - x.dot(&x)).abs() < 1e-4 * x.dot(&x), "{basis}");
        }
    }

    #[test]
    fn odd_size_rejected() {
        assert!(dwt2(&Tensor::zeros(vec![3, 4]), Basis::Haar).is_err());
    }

    #[test]
    fn unit_gains_are_identity_and_zero_gains_block_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::uniform(vec![2, 3, 4, 6], 0.0, 1.0, &mut rng));
        let y = freq_branch(&x, &tape.leaf(Tensor::ones(vec![3, 3])), Basis::Haar).unwrap();
        assert!(y.value().max_abs_diff(&x.value()) < 1e-5);

        let y = freq_branch(&x, &tape.leaf(Tensor::zeros(vec![3, 3])), Basis::Haar).unwrap();
        let (xv, yv) = (x.value(), y.value());
        for (t, c, i, j) in (0..2).flat_map(|t| {
            (0..3).flat_map(move |c| (0..4).flat_map(move |i| (0..6).map(move |j| (t, c, i, j))))
        }) {
            let (bi, bj) = (i / 2 * 2, j / 2 * 2);
            let mean = (xv.at(&[t, c, bi, bj])
                + xv.at(&[t, c, bi + 1, bj])
                + xv.at(&[t, c, bi, bj + 1])
                + xv.at(&[t, c, bi + 1, bj + 1]))
                / 4.0;
            assert!((yv.at(&[t, c, i, j]) - mean).abs() < 1e-5);
        }
    }

    #[test]
    fn hh_gain_scales_only_hh() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tape = Tape::new();
        let xt = Tensor::uniform(vec![1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let x = tape.leaf(xt.clone());
        let gains = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, 1.0, 2.0]).unwrap());
        let y = freq_branch(&x, &gains, Basis::Haar).unwrap();
        let (px, py) = (dwt2(&xt, Basis::Haar).unwrap(), dwt2(&y.value(), Basis::Haar).unwrap());
        assert!(py.hh.max_abs_diff(&px.hh.map(|v| 2.0 * v)) < 1e-5);
        assert!(py.ll.max_abs_diff(&px.ll) < 1e-5);
        assert!(py.lh.max_abs_diff(&px.lh) < 1e-5);
    }

    #[test]
    fn odd_frames_keep_their_shape() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(vec![1, 2, 5, 3], |i| (i as f32).sin()));
        let y = freq_branch(&x, &tape.leaf(Tensor::ones(vec![2, 3])), Basis::Haar).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 5, 3]);
        assert!(y.value().max_abs_diff(&x.value()) < 1e-5);
    }

    #[test]
    fn transform_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for basis in BASES {
            let rep = grad_check(
                |v| project(&freq_branch(&v[0], &v[1], basis)?, 1),
                &[
                    Tensor::uniform(vec![2, 2, 4, 3], -1.0, 1.0, &mut rng),
                    Tensor::uniform(vec![2, 3], 0.5, 1.5, &mut rng),
                ],
            )
            .unwrap();
            assert!(rep.max_rel_err < 1e-3, "{basis} {rep:?}");
        }
    }

    #[test]
    fn basis_names_roundtrip() {
        for b in BASES {
            assert_eq!(b.name().parse::<Basis>().unwrap(), b);
        }
    }
}
