//! Elementwise, reduction and shape operations on [`Var`].

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{numel, strides};
use super::{Tensor, Var};
use crate::{Error, Result};

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Which side of its kink every piecewise-linear activation took, in
/// evaluation order. While a log is installed, the first pass records the
/// sides and later passes replay them, so finite differences stay on one
/// linear piece.
#[derive(Default)]
pub(crate) struct KinkLog {
    sides: Vec<Rc<[bool]>>,
    cursor: usize,
    replay: bool,
}

thread_local! {
    static KINKS: RefCell<Option<KinkLog>> = const { RefCell::new(None) };
}

/// Runs `f` with `log` installed; returns the result and the log, now in
/// replay mode with its cursor rewound.
pub(crate) fn with_kink_log<R>(log: KinkLog, f: impl FnOnce() -> R) -> (R, KinkLog) {
    let previous = KINKS.with(|k| k.replace(Some(log)));
    let out = f();
    let mut log = KINKS.with(|k| k.replace(previous)).expect("log installed above");
    log.cursor = 0;
    log.replay = true;
    (out, log)
}

/// `x >= 0` per element, or the recorded sides when replaying.
fn kink_sides(x: &Tensor) -> Rc<[bool]> {
    let fresh = || x.data().iter().map(|&v| v >= 0.0).collect::<Rc<[bool]>>();
    KINKS.with(|k| match k.borrow_mut().as_mut() {
        None => fresh(),
        Some(log) if log.replay => {
            let sides = log.sides.get(log.cursor).cloned().filter(|s| s.len() == x.len());
            log.cursor += 1;
            sides.unwrap_or_else(fresh)
        }
        Some(log) => {
            let sides = fresh();
            log.sides.push(sides.clone());
            sides
        }
    })
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// For each element of `out`, the offset of the element of `inp` that
/// broadcasts onto it.
fn broadcast_offsets(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n = out.len();
    let in_strides = strides(inp);
    let mut st = vec![0usize; n];
    for i in 0..inp.len() {
        let o = n - inp.len() + i;
        st[o] = if inp[i] == 1 { 0 } else { in_strides[i] };
    }
    let total = numel(out);
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            off += st[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= st[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

fn expand(t: &Tensor, out_shape: &[usize]) -> Tensor {
    if t.shape() == out_shape {
        return t.clone();
    }
    let offs = broadcast_offsets(out_shape, t.shape());
    let src = t.data();
    Tensor::new(out_shape.to_vec(), offs.iter().map(|&o| src[o]).collect()).unwrap()
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn sum_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let offs = broadcast_offsets(g.shape(), shape);
    let mut acc = vec![0.0f64; numel(shape)];
    for (&o, &v) in offs.iter().zip(g.data()) {
        acc[o] += v as f64;
    }
    Tensor::new(shape.to_vec(), acc.into_iter().map(|v| v as f32).collect()).unwrap()
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Var {
    fn binary(&self, other: &Var, op: BinOp) -> Result<Var> {
        let (a, b) = (self.value(), other.value());
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        let (ea, eb) = (expand(&a, &out_shape), expand(&b, &out_shape));
        let f = match op {
            BinOp::Add => |x: f32, y: f32| x + y,
            BinOp::Sub => |x: f32, y: f32| x - y,
            BinOp::Mul => |x: f32, y: f32| x * y,
            BinOp::Div => |x: f32, y: f32| x / y,
        };
        let value = ea.zip_map(&eb, f)?;
        Ok(self.tape().record(value, &[self, other], move |g, inp, _| {
            let (sa, sb) = (inp[0].shape(), inp[1].shape());
            let (ga, gb) = match op {
                BinOp::Add => (g.clone(), g.clone()),
                BinOp::Sub => (g.clone(), g.map(|v| -v)),
                BinOp::Mul => {
                    let (ea, eb) = (expand(&inp[0], g.shape()), expand(&inp[1], g.shape()));
                    (g.zip_map(&eb, |u, v| u * v).unwrap(), g.zip_map(&ea, |u, v| u * v).unwrap())
                }
                BinOp::Div => {
                    let (ea, eb) = (expand(&inp[0], g.shape()), expand(&inp[1], g.shape()));
                    let ga = g.zip_map(&eb, |u, v| u / v).unwrap();
                    let q = ea.zip_map(&eb, |x, y| -x / (y * y)).unwrap();
                    (ga, g.zip_map(&q, |u, v| u * v).unwrap())
                }
            };
            vec![Some(sum_to(&ga, sa)), Some(sum_to(&gb, sb))]
        }))
    }

    /// Broadcasting `self + other`.
    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Sub)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub(crate) fn unary<F, D>(&self, f: F, df: D) -> Var
    where
        F: Fn(f32) -> f32,
        D: Fn(f32, f32) -> f32 + 'static,
    {
        let value = self.value().map(f);
        self.tape().record(value, &[self], move |g, inp, out| {
            let data = g
                .data()
                .iter()
                .zip(inp[0].data())
                .zip(out.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data).unwrap())]
        })
    }

    pub fn scale(&self, k: f32) -> Var {
        self.unary(move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Var {
        self.unary(f32::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary(f32::ln, |x, _| 1.0 / x)
    }

    pub fn abs(&self) -> Var {
        self.unary(f32::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Var {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// `ln(1 + e^x)`, strictly positive.
    pub fn softplus(&self) -> Var {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        self.piecewise_linear(1.0, slope)
    }

    /// `pos·x` on the non-negative side, `neg·x` on the other.
    fn piecewise_linear(&self, pos: f32, neg: f32) -> Var {
        let x = self.value();
        let sides = kink_sides(&x);
        let k = move |s: bool| if s { pos } else { neg };
        let data = x.data().iter().zip(sides.iter()).map(|(&v, &s)| k(s) * v).collect();
        let value = Tensor::new(x.shape().to_vec(), data).unwrap();
        self.tape().record(value, &[self], move |g, _, _| {
            let data = g.data().iter().zip(sides.iter()).map(|(&g, &s)| k(s) * g).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data).unwrap())]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self) -> Var {
        let value = Tensor::scalar(self.value().sum() as f32);
        self.tape()
            .record(value, &[self], |g, inp, _| vec![Some(Tensor::full(inp[0].shape().to_vec(), g.item()))])
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f32;
        self.sum_all().scale(1.0 / n)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Var> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut acc = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (a, &v) in acc[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let data = acc.into_iter().map(|v| (v / n as f64) as f32).collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(value, &[self], move |g, _, _| {
            let mut gx = vec![0.0f32; outer * n * inner];
            let scale = 1.0 / n as f32;
            for o in 0..outer {
                let gr = &g.data()[o * inner..(o + 1) * inner];
                for k in 0..n {
                    let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                    for (d, &v) in dst.iter_mut().zip(gr) {
                        *d = v * scale;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        }))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let x = self.value();
        let value = (*x).clone().reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self
            .tape()
            .record(value, &[self], move |g, _, _| vec![Some(g.clone().reshape(in_shape.clone()).unwrap())]))
    }

    /// Axis permutation; output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.tape().record(value, &[self], move |g, _, _| vec![Some(g.permute(&inverse).unwrap())]))
    }

    /// Row `i` of the result is row `index[i]` of `self` (rows = slices
    /// along axis 0). Indices may repeat; gradients scatter-add back.
    pub fn index_rows(&self, index: Rc<[usize]>) -> Result<Var> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::shape("cannot index rows of a scalar"));
        }
        let rows = shape[0];
        let row_len: usize = shape[1..].iter().product();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("row index {bad} out of range {rows}")));
        }
        let mut data = Vec::with_capacity(index.len() * row_len);
        for &i in index.iter() {
            data.extend_from_slice(&x.data()[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = index.len();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(value, &[self], move |g, _, _| {
            let mut gx = vec![0.0f32; rows * row_len];
            for (k, &i) in index.iter().enumerate() {
                let src = &g.data()[k * row_len..(k + 1) * row_len];
                for (d, &v) in gx[i * row_len..(i + 1) * row_len].iter_mut().zip(src) {
                    *d += v;
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        }))
    }

    /// Reorders rows by a bijective permutation.
    pub fn gather_permute(&self, perm: &[usize]) -> Result<Var> {
        let rows = self.shape().first().copied().unwrap_or(0);
        crate::sfc::check_permutation(perm, rows)?;
        self.index_rows(perm.into())
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!("slice {start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(value, &[self], move |g, _, _| {
            let mut gx = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        }))
    }

    /// Splits `axis` into `n` equal consecutive parts.
    pub fn chunk(&self, n: usize, axis: usize) -> Result<Vec<Var>> {
        let shape = self.shape();
        if axis >= shape.len() || n == 0 || !shape[axis].is_multiple_of(n) {
            return Err(Error::shape(format!("cannot chunk axis {axis} of {shape:?} into {n}")));
        }
        let len = shape[axis] / n;
        (0..n).map(|i| self.slice(axis, i * len, len)).collect()
    }

    /// Forward difference along `axis` with a replicated boundary: entry `i`
    /// is `x[i+1] - x[i]`, and the last entry is zero.
    pub fn forward_diff(&self, axis: usize) -> Result<Var> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0f32; x.len()];
        for o in 0..outer {
            for k in 0..n.saturating_sub(1) {
                for i in 0..inner {
                    let at = (o * n + k) * inner + i;
                    data[at] = x.data()[at + inner] - x.data()[at];
                }
            }
        }
        let value = Tensor::new(shape.clone(), data)?;
        Ok(self.tape().record(value, &[self], move |g, _, _| {
            let mut gx = vec![0.0f32; g.len()];
            for o in 0..outer {
                for k in 0..n.saturating_sub(1) {
                    for i in 0..inner {
                        let at = (o * n + k) * inner + i;
                        let v = g.data()[at];
                        gx[at + inner] += v;
                        gx[at] -= v;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {base:?}")));
    }
    for v in &values[1..] {
        let s = v.shape();
        if s.len() != base.len() || (0..s.len()).any(|i| i != axis && s[i] != base[i]) {
            return Err(Error::shape(format!("concat {base:?} with {s:?} on axis {axis}")));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &n) in values.iter().zip(&sizes) {
            data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let value = Tensor::new(out_shape, data)?;
    Ok(first.tape().record(value, parts, move |g, inp, _| {
        let mut grads: Vec<Vec<f32>> = sizes.iter().map(|&n| Vec::with_capacity(outer * n * inner)).collect();
        let mut at = 0;
        for _ in 0..outer {
            for (gv, &n) in grads.iter_mut().zip(&sizes) {
                gv.extend_from_slice(&g.data()[at..at + n * inner]);
                at += n * inner;
            }
        }
        grads.into_iter().zip(inp).map(|(d, t)| Some(Tensor::new(t.shape().to_vec(), d).unwrap())).collect()
    }))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::{grad_check, project};
    use super::super::Tape;
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn activations_closed_forms() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(z.silu().value().item(), 0.0);
        assert!((z.softplus().value().item() - std::f32::consts::LN_2).abs() < 1e-7);
        let m1 = tape.leaf(Tensor::scalar(-1.0));
        assert!((m1.leaky_relu(0.01).value().item() + 0.01).abs() < 1e-9);
        let big = tape.leaf(t(&[3], &[-80.0, 0.0, 80.0]));
        assert!(big.softplus().value().data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn broadcast_bias_add() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.leaf(t(&[3], &[10., 20., 30.]));
        let y = x.add(&b).unwrap();
        assert_eq!(y.value().data(), &[11., 22., 33., 14., 25., 36.]);
        let g = y.sum_all().backward().unwrap();
        assert_eq!(g.get(&b).unwrap().data(), &[2., 2., 2.]);
        assert!(x.add(&tape.leaf(Tensor::zeros(vec![2]))).is_err());
    }

    #[test]
    fn channel_broadcast_mul() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(vec![2, 3, 2]));
        let s = tape.leaf(t(&[3, 1], &[1., 2., 3.]));
        let y = x.mul(&s).unwrap();
        assert_eq!(y.value().data(), &[1., 1., 2., 2., 3., 3., 1., 1., 2., 2., 3., 3.]);
        let g = y.sum_all().backward().unwrap();
        assert_eq!(g.get(&s).unwrap().data(), &[4., 4., 4.]);
    }

    #[test]
    fn permutation_roundtrip_and_bijectivity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(vec![4, 2], |i| i as f32));
        let perm = [2, 0, 3, 1];
        let mut inv = [0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let y = x.gather_permute(&perm).unwrap().gather_permute(&inv).unwrap();
        assert_eq!(*y.value(), *x.value());
        assert!(x.gather_permute(&[0, 0, 1, 2]).is_err());
        let id = x.gather_permute(&[0, 1, 2, 3]).unwrap();
        assert_eq!(*id.value(), *x.value());
    }

    #[test]
    fn concat_chunk_identity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 6, 3], |i| i as f32));
        let parts = x.chunk(3, 1).unwrap();
        let refs: Vec<&Var> = parts.iter().collect();
        let y = concat(&refs, 1).unwrap();
        assert_eq!(*y.value(), *x.value());
        assert!(x.chunk(4, 1).is_err());
    }

    #[test]
    fn mean_axis_values() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1., 3., 5., 7.]));
        assert_eq!(x.mean_axis(0).unwrap().value().data(), &[3., 5.]);
        assert_eq!(x.mean_axis(1).unwrap().value().data(), &[2., 6.]);
    }

    #[test]
    fn forward_diff_replicate_boundary() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1., 4., 9., 0., 2., 2.]));
        assert_eq!(x.forward_diff(1).unwrap().value().data(), &[3., 5., 0., 2., 0., 0.]);
        assert_eq!(x.forward_diff(0).unwrap().value().data(), &[-1., -2., -7., 0., 0., 0.]);
    }

    fn check(f: impl Fn(&[Var]) -> Result<Var>, shapes: &[&[usize]], lo: f32, hi: f32) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Tensor> =
            shapes.iter().map(|s| Tensor::uniform(s.to_vec(), lo, hi, &mut rng)).collect();
        let rep = grad_check(f, &inputs).unwrap();
        assert!(rep.max_rel_err < 1e-3, "{rep:?}");
    }

    #[test]
    fn elementwise_gradients() {
        check(|v| project(&v[0].add(&v[1])?, 1), &[&[2, 3], &[3]], -1.0, 1.0);
        check(|v| project(&v[0].sub(&v[1])?, 1), &[&[2, 3], &[2, 1]], -1.0, 1.0);
        check(|v| project(&v[0].mul(&v[1])?, 1), &[&[2, 3], &[1, 3]], -1.0, 1.0);
        check(|v| project(&v[0].div(&v[1])?, 1), &[&[2, 3], &[3]], 0.5, 2.0);
        for (i, f) in
            [Var::exp as fn(&Var) -> Var, Var::square, Var::sigmoid, Var::silu, Var::softplus, Var::neg]
                .into_iter()
                .enumerate()
        {
            check(move |v| project(&f(&v[0]), i as u64), &[&[7]], -2.0, 2.0);
        }
        check(|v| project(&v[0].ln(), 2), &[&[5]], 0.5, 2.0);
        check(|v| project(&v[0].abs(), 2), &[&[5]], 0.1, 1.0);
        check(|v| project(&v[0].leaky_relu(0.01), 2), &[&[5]], -1.0, -0.1);
        check(|v| project(&v[0].leaky_relu(0.01).scale(2.0).add_scalar(1.0), 2), &[&[5]], 0.1, 1.0);
    }

    #[test]
    fn structural_gradients() {
        check(|v| Ok(v[0].mean_all()), &[&[2, 3]], -1.0, 1.0);
        check(|v| project(&v[0].mean_axis(1)?, 4), &[&[2, 3, 2]], -1.0, 1.0);
        check(|v| project(&v[0].reshape(vec![3, 2])?, 4), &[&[2, 3]], -1.0, 1.0);
        check(|v| project(&v[0].permute(&[2, 0, 1])?, 4), &[&[2, 3, 4]], -1.0, 1.0);
        check(|v| project(&v[0].gather_permute(&[2, 0, 3, 1])?, 4), &[&[4, 2]], -1.0, 1.0);
        check(|v| project(&v[0].index_rows(vec![1, 1, 0].into())?, 4), &[&[2, 2]], -1.0, 1.0);
        check(|v| project(&v[0].slice(1, 1, 2)?, 4), &[&[2, 4]], -1.0, 1.0);
        check(|v| project(&concat(&[&v[0], &v[1]], 1)?, 4), &[&[2, 1], &[2, 3]], -1.0, 1.0);
        check(|v| project(&v[0].forward_diff(0)?, 4), &[&[3, 2]], -1.0, 1.0);
    }
}
