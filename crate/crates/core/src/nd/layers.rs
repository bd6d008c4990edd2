//! Dense, convolutional and normalisation layers as tape operations.

use super::{Tensor, Var};
use crate::{Error, Result};

pub const NORM_EPS: f32 = 1e-5;

/// How samples outside the input are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Clamp to the nearest edge sample.
    Replicate,
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape(format!("{what} must be 4-d, got {s:?}"))),
    }
}

/// `a[M,K] · b[K,N]`.
pub fn matmul(a: &Var, b: &Var) -> Result<Var> {
    let (av, bv) = (a.value(), b.value());
    let (m, k, n) = match (av.shape(), bv.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
        (sa, sb) => return Err(Error::shape(format!("matmul {sa:?} x {sb:?}"))),
    };
    let value = Tensor::new(vec![m, n], mm(av.data(), bv.data(), m, k, n))?;
    Ok(a.tape().record(value, &[a, b], move |g, inp, _| {
        let (a, b) = (inp[0].data(), inp[1].data());
        // dA = G·Bᵀ, dB = Aᵀ·G
        let mut da = vec![0.0f32; m * k];
        for i in 0..m {
            let gr = &g.data()[i * n..(i + 1) * n];
            for p in 0..k {
                let br = &b[p * n..(p + 1) * n];
                da[i * k + p] = gr.iter().zip(br).map(|(x, y)| x * y).sum();
            }
        }
        let mut db = vec![0.0f32; k * n];
        for i in 0..m {
            let gr = &g.data()[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gr) {
                    *d += av * gv;
                }
            }
        }
        vec![Some(Tensor::new(vec![m, k], da).unwrap()), Some(Tensor::new(vec![k, n], db).unwrap())]
    }))
}

fn mm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Affine map over the last axis: `x[..., Din] · w[Din, Dout] + b`.
pub fn linear(x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
    let shape = x.shape();
    let din = *shape.last().ok_or_else(|| Error::shape("linear on a scalar"))?;
    let dout = match w.shape()[..] {
        [i, o] if i == din => o,
        ref s => return Err(Error::shape(format!("linear input {shape:?} with weight {s:?}"))),
    };
    let rows = shape.iter().product::<usize>() / din;
    let mut y = matmul(&x.reshape(vec![rows, din])?, w)?;
    if let Some(b) = b {
        y = y.add(b)?;
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = dout;
    y.reshape(out_shape)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    mode: Padding,
}

impl Geometry {
    #[inline]
    fn source(&self, pos: isize, len: usize) -> Option<usize> {
        if pos >= 0 && (pos as usize) < len {
            Some(pos as usize)
        } else {
            match self.mode {
                Padding::Zero => None,
                Padding::Replicate => Some(pos.clamp(0, len as isize - 1) as usize),
            }
        }
    }

    /// Visits every (output index, input index, kernel index) triple of a
    /// strided cross-correlation whose kernel is `[O, C, kh, kw]`.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let &Geometry { n, c, h, w, o, kh, kw, oh, ow, stride, pad, .. } = self;
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for x in 0..ow {
                        let out = ((b * o + oc) * oh + y) * ow + x;
                        for ic in 0..c {
                            for i in 0..kh {
                                let Some(sy) = self.source((y * stride + i) as isize - pad as isize, h)
                                else {
                                    continue;
                                };
                                for j in 0..kw {
                                    let Some(sx) = self.source((x * stride + j) as isize - pad as isize, w)
                                    else {
                                        continue;
                                    };
                                    f(
                                        out,
                                        ((b * c + ic) * h + sy) * w + sx,
                                        ((oc * c + ic) * kh + i) * kw + j,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias(y: Var, bias: Option<&Var>, channels: usize) -> Result<Var> {
    match bias {
        Some(b) => y.add(&b.reshape(vec![channels, 1, 1])?),
        None => Ok(y),
    }
}

/// 2-d cross-correlation of `x[N, C, H, W]` with `kernel[O, C, kh, kw]`.
pub fn conv2d(
    x: &Var,
    kernel: &Var,
    bias: Option<&Var>,
    stride: usize,
    pad: usize,
    mode: Padding,
) -> Result<Var> {
    let (xv, kv) = (x.value(), kernel.value());
    let [n, c, h, w] = dims4(&xv, "conv2d input")?;
    let [o, kc, kh, kw] = dims4(&kv, "conv2d kernel")?;
    if kc != c {
        return Err(Error::shape(format!("kernel expects {kc} channels, input has {c}")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let geo = Geometry {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
        mode,
    };
    let mut out = vec![0.0f32; n * o * geo.oh * geo.ow];
    let (xd, kd) = (xv.data(), kv.data());
    geo.for_each(|yo, xi, ki| out[yo] += xd[xi] * kd[ki]);
    let value = Tensor::new(vec![n, o, geo.oh, geo.ow], out)?;
    let y = x.tape().record(value, &[x, kernel], move |g, inp, _| {
        let (xd, kd, gd) = (inp[0].data(), inp[1].data(), g.data());
        let mut dx = vec![0.0f32; xd.len()];
        let mut dk = vec![0.0f32; kd.len()];
        geo.for_each(|yo, xi, ki| {
            dx[xi] += gd[yo] * kd[ki];
            dk[ki] += gd[yo] * xd[xi];
        });
        vec![
            Some(Tensor::new(inp[0].shape().to_vec(), dx).unwrap()),
            Some(Tensor::new(inp[1].shape().to_vec(), dk).unwrap()),
        ]
    });
    add_channel_bias(y, bias, o)
}

/// Transposed convolution of `x[N, Cin, H, W]` with `kernel[Cin, Cout, kh, kw]`;
/// the adjoint of [`conv2d`] (zero padding) with the same kernel and geometry.
pub fn conv_transpose2d(x: &Var, kernel: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Result<Var> {
    let (xv, kv) = (x.value(), kernel.value());
    let [n, cin, h, w] = dims4(&xv, "conv_transpose2d input")?;
    let [kc, cout, kh, kw] = dims4(&kv, "conv_transpose2d kernel")?;
    if kc != cin {
        return Err(Error::shape(format!("kernel expects {kc} channels, input has {cin}")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(Error::shape("padding consumes the whole output"));
    }
    // Output is the input of the matching forward convolution, so reuse its
    // geometry with the roles of input and output swapped.
    let geo = Geometry {
        n,
        c: cout,
        h: full_h - 2 * pad,
        w: full_w - 2 * pad,
        o: cin,
        kh,
        kw,
        oh: h,
        ow: w,
        stride,
        pad,
        mode: Padding::Zero,
    };
    let mut out = vec![0.0f32; n * cout * geo.h * geo.w];
    let (xd, kd) = (xv.data(), kv.data());
    geo.for_each(|xi, yo, ki| out[yo] += xd[xi] * kd[ki]);
    let value = Tensor::new(vec![n, cout, geo.h, geo.w], out)?;
    let y = x.tape().record(value, &[x, kernel], move |g, inp, _| {
        let (xd, kd, gd) = (inp[0].data(), inp[1].data(), g.data());
        let mut dx = vec![0.0f32; xd.len()];
        let mut dk = vec![0.0f32; kd.len()];
        geo.for_each(|xi, yo, ki| {
            dx[xi] += gd[yo] * kd[ki];
            dk[ki] += gd[yo] * xd[xi];
        });
        vec![
            Some(Tensor::new(inp[0].shape().to_vec(), dx).unwrap()),
            Some(Tensor::new(inp[1].shape().to_vec(), dk).unwrap()),
        ]
    });
    add_channel_bias(y, bias, cout)
}

/// Per-channel stride-1 convolution with `kernel[C, 1, kh, kw]` and
/// "same" output size (odd kernels).
pub fn depthwise_conv2d(x: &Var, kernel: &Var, bias: Option<&Var>, mode: Padding) -> Result<Var> {
    let (xv, kv) = (x.value(), kernel.value());
    let [n, c, h, w] = dims4(&xv, "depthwise input")?;
    let [kc, one, kh, kw] = dims4(&kv, "depthwise kernel")?;
    if kc != c || one != 1 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!("depthwise kernel {:?} for {c} channels", kv.shape())));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    if kh > h + 2 * ph || kw > w + 2 * pw {
        return Err(Error::shape("kernel larger than padded input"));
    }
    let geo = Geometry { n: n * c, c: 1, h, w, o: 1, kh, kw, oh: h, ow: w, stride: 1, pad: 0, mode };
    let visit = move |f: &mut dyn FnMut(usize, usize, usize)| {
        for b in 0..n {
            for ch in 0..c {
                let plane = (b * c + ch) * h * w;
                for y in 0..h {
                    for x in 0..w {
                        for i in 0..kh {
                            let Some(sy) = geo.source((y + i) as isize - ph as isize, h) else {
                                continue;
                            };
                            for j in 0..kw {
                                let Some(sx) = geo.source((x + j) as isize - pw as isize, w) else {
                                    continue;
                                };
                                f(plane + y * w + x, plane + sy * w + sx, (ch * kh + i) * kw + j);
                            }
                        }
                    }
                }
            }
        }
    };
    let mut out = vec![0.0f32; xv.len()];
    let (xd, kd) = (xv.data(), kv.data());
    visit(&mut |yo, xi, ki| out[yo] += xd[xi] * kd[ki]);
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    let y = x.tape().record(value, &[x, kernel], move |g, inp, _| {
        let (xd, kd, gd) = (inp[0].data(), inp[1].data(), g.data());
        let mut dx = vec![0.0f32; xd.len()];
        let mut dk = vec![0.0f32; kd.len()];
        visit(&mut |yo, xi, ki| {
            dx[xi] += gd[yo] * kd[ki];
            dk[ki] += gd[yo] * xd[xi];
        });
        vec![
            Some(Tensor::new(inp[0].shape().to_vec(), dx).unwrap()),
            Some(Tensor::new(inp[1].shape().to_vec(), dk).unwrap()),
        ]
    });
    add_channel_bias(y, bias, c)
}

/// Depthwise causal convolution along the sequence: for `x[L, D]` and
/// `kernel[D, K]`, `y[t, d] = Σ_j kernel[d, j] · x[t - K + 1 + j, d]`
/// with zeros before the start.
pub fn conv1d_causal(x: &Var, kernel: &Var, bias: Option<&Var>) -> Result<Var> {
    let (xv, kv) = (x.value(), kernel.value());
    let (l, d, k) = match (xv.shape(), kv.shape()) {
        (&[l, d], &[d2, k]) if d == d2 => (l, d, k),
        (sx, sk) => return Err(Error::shape(format!("conv1d input {sx:?} kernel {sk:?}"))),
    };
    let visit = move |f: &mut dyn FnMut(usize, usize, usize)| {
        for t in 0..l {
            for j in 0..k {
                let Some(src) = (t + j + 1).checked_sub(k) else {
                    continue;
                };
                for ch in 0..d {
                    f(t * d + ch, src * d + ch, ch * k + j);
                }
            }
        }
    };
    let mut out = vec![0.0f32; l * d];
    let (xd, kd) = (xv.data(), kv.data());
    visit(&mut |yo, xi, ki| out[yo] += xd[xi] * kd[ki]);
    let value = Tensor::new(vec![l, d], out)?;
    let y = x.tape().record(value, &[x, kernel], move |g, inp, _| {
        let (xd, kd, gd) = (inp[0].data(), inp[1].data(), g.data());
        let mut dx = vec![0.0f32; xd.len()];
        let mut dk = vec![0.0f32; kd.len()];
        visit(&mut |yo, xi, ki| {
            dx[xi] += gd[yo] * kd[ki];
            dk[ki] += gd[yo] * xd[xi];
        });
        vec![Some(Tensor::new(vec![l, d], dx).unwrap()), Some(Tensor::new(vec![d, k], dk).unwrap())]
    });
    match bias {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// Grouped 1×1 convolution over the last axis in groups of three:
/// `y[.., 3g + a] = Σ_b weights[g, a, b] · x[.., 3g + b] + bias[3g + a]`.
pub fn group_conv1d(x: &Var, weights: &Var, bias: Option<&Var>) -> Result<Var> {
    let shape = x.shape();
    let ch = *shape.last().ok_or_else(|| Error::shape("group conv on a scalar"))?;
    if ch % 3 != 0 {
        return Err(Error::shape(format!("{ch} channels not divisible into triples")));
    }
    let groups = ch / 3;
    if weights.shape() != [groups, 3, 3] {
        return Err(Error::shape(format!("group weights {:?}, expected [{groups}, 3, 3]", weights.shape())));
    }
    let rows = shape.iter().product::<usize>() / ch;
    let visit = move |f: &mut dyn FnMut(usize, usize, usize)| {
        for r in 0..rows {
            for g in 0..groups {
                for a in 0..3 {
                    for b in 0..3 {
                        f(r * ch + 3 * g + a, r * ch + 3 * g + b, (g * 3 + a) * 3 + b);
                    }
                }
            }
        }
    };
    let (xv, wv) = (x.value(), weights.value());
    let mut out = vec![0.0f32; xv.len()];
    let (xd, wd) = (xv.data(), wv.data());
    visit(&mut |yo, xi, wi| out[yo] += xd[xi] * wd[wi]);
    let value = Tensor::new(shape, out)?;
    let y = x.tape().record(value, &[x, weights], move |g, inp, _| {
        let (xd, wd, gd) = (inp[0].data(), inp[1].data(), g.data());
        let mut dx = vec![0.0f32; xd.len()];
        let mut dw = vec![0.0f32; wd.len()];
        visit(&mut |yo, xi, wi| {
            dx[xi] += gd[yo] * wd[wi];
            dw[wi] += gd[yo] * xd[xi];
        });
        vec![
            Some(Tensor::new(inp[0].shape().to_vec(), dx).unwrap()),
            Some(Tensor::new(inp[1].shape().to_vec(), dw).unwrap()),
        ]
    });
    match bias {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// Zero-mean, unit-variance normalisation of every run of `block`
/// consecutive values.
fn normalize_blocks(x: &Var, block: usize) -> Result<Var> {
    let xv = x.value();
    let blocks = xv.len() / block;
    let mut out = vec![0.0f32; xv.len()];
    let mut inv_std = vec![0.0f32; blocks];
    for (bi, (src, dst)) in xv.data().chunks(block).zip(out.chunks_mut(block)).enumerate() {
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / block as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / block as f64;
        let is = 1.0 / (var + NORM_EPS as f64).sqrt();
        inv_std[bi] = is as f32;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = ((s as f64 - mean) * is) as f32;
        }
    }
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(x.tape().record(value, &[x], move |g, _, out| {
        let mut dx = vec![0.0f32; g.len()];
        let n = block as f32;
        for (bi, ((gb, yb), db)) in
            g.data().chunks(block).zip(out.data().chunks(block)).zip(dx.chunks_mut(block)).enumerate()
        {
            let mg = gb.iter().sum::<f32>() / n;
            let mgy = gb.iter().zip(yb).map(|(a, b)| a * b).sum::<f32>() / n;
            for ((d, &gv), &yv) in db.iter_mut().zip(gb).zip(yb) {
                *d = inv_std[bi] * (gv - mg - yv * mgy);
            }
        }
        vec![Some(Tensor::new(g.shape().to_vec(), dx).unwrap())]
    }))
}

/// Normalises over the last axis, then applies `gamma`, `beta`.
pub fn layernorm(x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
    let d = *x.shape().last().ok_or_else(|| Error::shape("layernorm on a scalar"))?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(format!("layernorm affine must be [{d}]")));
    }
    normalize_blocks(x, d)?.mul(gamma)?.add(beta)
}

/// Group normalisation of `x[N, C, H, W]` with per-channel affine.
pub fn groupnorm(x: &Var, groups: usize, gamma: &Var, beta: &Var) -> Result<Var> {
    let [_, c, h, w] = dims4(&x.value(), "groupnorm input")?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!("groupnorm affine must be [{c}]")));
    }
    let y = normalize_blocks(x, c / groups * h * w)?;
    y.mul(&gamma.reshape(vec![c, 1, 1])?)?.add(&beta.reshape(vec![c, 1, 1])?)
}

/// Mean over the two trailing (spatial) axes.
pub fn global_avg_pool(x: &Var) -> Result<Var> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::shape(format!("global pool needs [.., H, W], got {shape:?}")));
    }
    let mut flat = shape[..shape.len() - 2].to_vec();
    flat.push(shape[shape.len() - 2] * shape[shape.len() - 1]);
    let last = flat.len() - 1;
    x.reshape(flat)?.mean_axis(last)
}
