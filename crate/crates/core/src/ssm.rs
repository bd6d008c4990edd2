//! Selective state-space scan and the Mamba branch built around it.
//!
//! Per channel `e` and state `n` the recurrence is
//!
//! ```text
//! h_t[e,n] = exp(Δ_t[e]·A[e,n]) · h_{t-1}[e,n] + Δ_t[e]·B_t[n]·x_t[e]
//! y_t[e]   = Σ_n C_t[n]·h_t[e,n] + D[e]·x_t[e]
//! ```
//!
//! with `h_0 = 0`, `A = -exp(a_log)` strictly negative, `Δ = softplus(..)`
//! and `B`, `C` projected from the input. The scan runs sequentially and
//! keeps every state for the backward pass.

use std::rc::Rc;

use rand::Rng;

use crate::nd::layers::{conv1d_causal, layernorm, linear};
use crate::nd::{Init, Scope, Tensor, Var};
use crate::sfc::{Direction, ScanOrder};
use crate::{Error, Result};

/// Softplus argument giving an initial step of about 0.1.
pub const DT_BIAS_INIT: f32 = -2.252_168;

/// Width of the causal depthwise convolution before the scan.
pub const CONV_KERNEL: usize = 3;

/// Fused scan given the already-projected selective quantities.
///
/// Shapes: `x`, `delta` `[L, E]`; `a` `[E, N]`; `b`, `c` `[L, N]`;
/// `d_skip` `[E]`. `delta` must be positive and `a` negative.
pub fn scan(x: &Var, delta: &Var, a: &Var, b: &Var, c: &Var, d_skip: &Var) -> Result<Var> {
    let (xv, dv, av, bv, cv, sv) =
        (x.value(), delta.value(), a.value(), b.value(), c.value(), d_skip.value());
    let (l, e) = match xv.shape() {
        &[l, e] => (l, e),
        s => return Err(Error::shape(format!("scan input must be [L, E], got {s:?}"))),
    };
    let n = av.shape().get(1).copied().unwrap_or(0);
    if dv.shape() != [l, e]
        || av.shape() != [e, n]
        || bv.shape() != [l, n]
        || cv.shape() != [l, n]
        || sv.shape() != [e]
    {
        return Err(Error::shape(format!(
            "scan operands x{:?} delta{:?} A{:?} B{:?} C{:?} D{:?}",
            xv.shape(),
            dv.shape(),
            av.shape(),
            bv.shape(),
            cv.shape(),
            sv.shape()
        )));
    }
    let (xd, dd, ad, bd, cd, sd) = (xv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data());
    // states[t] holds h_{t+1}; the zero initial state is implicit
    let mut states = vec![0.0f32; l * e * n];
    let mut y = vec![0.0f32; l * e];
    let mut h = vec![0.0f32; e * n];
    for t in 0..l {
        for ch in 0..e {
            let (dt, xt) = (dd[t * e + ch], xd[t * e + ch]);
            let mut acc = 0.0f32;
            for s in 0..n {
                let i = ch * n + s;
                h[i] = (dt * ad[i]).exp() * h[i] + dt * bd[t * n + s] * xt;
                acc += cd[t * n + s] * h[i];
            }
            y[t * e + ch] = acc + sd[ch] * xt;
        }
        if !h.iter().all(|v| v.is_finite()) || !y[t * e..(t + 1) * e].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "selective scan state".into(), step: t });
        }
        states[t * e * n..(t + 1) * e * n].copy_from_slice(&h);
    }
    let value = Tensor::new(vec![l, e], y)?;
    let states = Rc::new(states);
    Ok(x.tape().record(value, &[x, delta, a, b, c, d_skip], move |g, inp, _| {
        let (xd, dd, ad, bd, cd, sd) =
            (inp[0].data(), inp[1].data(), inp[2].data(), inp[3].data(), inp[4].data(), inp[5].data());
        let gd = g.data();
        let mut gx = vec![0.0f32; l * e];
        let mut gdelta = vec![0.0f32; l * e];
        let mut ga = vec![0.0f32; e * n];
        let mut gb = vec![0.0f32; l * n];
        let mut gc = vec![0.0f32; l * n];
        let mut gs = vec![0.0f32; e];
        let mut gh = vec![0.0f32; e * n];
        let zero = vec![0.0f32; e * n];
        for t in (0..l).rev() {
            let ht = &states[t * e * n..(t + 1) * e * n];
            let hp = if t == 0 { &zero[..] } else { &states[(t - 1) * e * n..t * e * n] };
            for ch in 0..e {
                let gy = gd[t * e + ch];
                let (dt, xt) = (dd[t * e + ch], xd[t * e + ch]);
                gs[ch] += gy * xt;
                let mut gxt = gy * sd[ch];
                let mut gdt = 0.0f32;
                for s in 0..n {
                    let i = ch * n + s;
                    gc[t * n + s] += gy * ht[i];
                    let ghi = gh[i] + gy * cd[t * n + s];
                    let abar = (dt * ad[i]).exp();
                    let bt = bd[t * n + s];
                    gdt += ghi * (ad[i] * abar * hp[i] + bt * xt);
                    ga[i] += ghi * dt * abar * hp[i];
                    gb[t * n + s] += ghi * dt * xt;
                    gxt += ghi * dt * bt;
                    gh[i] = ghi * abar;
                }
                gx[t * e + ch] = gxt;
                gdelta[t * e + ch] = gdt;
            }
        }
        vec![
            Some(Tensor::new(vec![l, e], gx).unwrap()),
            Some(Tensor::new(vec![l, e], gdelta).unwrap()),
            Some(Tensor::new(vec![e, n], ga).unwrap()),
            Some(Tensor::new(vec![l, n], gb).unwrap()),
            Some(Tensor::new(vec![l, n], gc).unwrap()),
            Some(Tensor::new(vec![e], gs).unwrap()),
        ]
    }))
}

/// Registers the parameters of one selective scan over `width` channels.
pub fn init_ssm(init: &mut Init, width: usize, state_size: usize, rng: &mut impl Rng) -> Result<()> {
    let bound = 1.0 / (width as f32).sqrt();
    init.add("dt_down", Tensor::uniform(vec![width, 1], -bound, bound, rng))?;
    init.add("dt_up", Tensor::uniform(vec![1, width], -1.0, 1.0, rng))?;
    init.add("dt_bias", Tensor::full(vec![width], DT_BIAS_INIT))?;
    init.add("a_log", Tensor::from_fn(vec![width, state_size], |i| ((i % state_size) as f32 + 1.0).ln()))?;
    init.add("w_b", Tensor::uniform(vec![width, state_size], -bound, bound, rng))?;
    init.add("w_c", Tensor::uniform(vec![width, state_size], -bound, bound, rng))?;
    init.add("d_skip", Tensor::ones(vec![width]))
}

fn reverse_rows(x: &Var) -> Result<Var> {
    let l = x.shape()[0];
    x.index_rows((0..l).rev().collect::<Vec<_>>().into())
}

/// Selective scan of `x[L, E]` with parameters under `p`. The backward
/// direction scans the reversed sequence and reverses the result.
pub fn selective_scan(x: &Var, p: &Scope, direction: Direction) -> Result<Var> {
    if direction == Direction::Backward {
        return reverse_rows(&selective_scan(&reverse_rows(x)?, p, Direction::Forward)?);
    }
    let delta =
        linear(&linear(x, &p.var("dt_down")?, None)?, &p.var("dt_up")?, Some(&p.var("dt_bias")?))?.softplus();
    let a = p.var("a_log")?.exp().neg();
    let b = linear(x, &p.var("w_b")?, None)?;
    let c = linear(x, &p.var("w_c")?, None)?;
    scan(x, &delta, &a, &b, &c, &p.var("d_skip")?)
}

/// Rows of a `(T, C, H, W)` volume as `[T·H·W, C]`, row `i` being the voxel
/// with linear index `i`.
pub fn volume_to_rows(v: &Var) -> Result<Var> {
    let [t, c, h, w] = v.shape()[..] else {
        return Err(Error::shape(format!("volume must be 4-d, got {:?}", v.shape())));
    };
    v.permute(&[0, 2, 3, 1])?.reshape(vec![t * h * w, c])
}

/// Inverse of [`volume_to_rows`].
pub fn rows_to_volume(rows: &Var, t: usize, h: usize, w: usize) -> Result<Var> {
    let c = rows.shape()[1];
    rows.reshape(vec![t, h, w, c])?.permute(&[0, 3, 1, 2])
}

fn check_route(order: &ScanOrder, rows: usize) -> Result<()> {
    if order.len() != rows {
        return Err(Error::shape(format!("route over {} voxels applied to {rows} rows", order.len())));
    }
    Ok(())
}

/// Scans `v[T, C, H, W]` once per route and returns one volume per route.
pub fn hilbert_ssm(v: &Var, orders: &[ScanOrder], p: &Scope) -> Result<Vec<Var>> {
    let [t, _, h, w] = v.shape()[..] else {
        return Err(Error::shape(format!("volume must be 4-d, got {:?}", v.shape())));
    };
    if orders.is_empty() {
        return Err(Error::invalid("at least one scan route is needed"));
    }
    let rows = volume_to_rows(v)?;
    orders
        .iter()
        .map(|order| {
            if order.dims().as_array() != [t, h, w] {
                return Err(Error::shape(format!(
                    "route dims {:?} do not match volume ({t},{h},{w})",
                    order.dims()
                )));
            }
            let seq = rows.index_rows(order.sequence().into())?;
            let out = selective_scan(&seq, p, Direction::Forward)?;
            rows_to_volume(&out.index_rows(order.positions().into())?, t, h, w)
        })
        .collect()
}

/// Registers the Mamba branch for model width `d` with inner width `2d`.
pub fn init_mamba(init: &mut Init, d: usize, state_size: usize, rng: &mut impl Rng) -> Result<()> {
    let e = 2 * d;
    let (bd, be) = (1.0 / (d as f32).sqrt(), 1.0 / (e as f32).sqrt());
    init.add("ln_gamma", Tensor::ones(vec![d]))?;
    init.add("ln_beta", Tensor::zeros(vec![d]))?;
    init.add("in_x_w", Tensor::uniform(vec![d, e], -bd, bd, rng))?;
    init.add("in_x_b", Tensor::zeros(vec![e]))?;
    init.add("in_z_w", Tensor::uniform(vec![d, e], -bd, bd, rng))?;
    init.add("in_z_b", Tensor::zeros(vec![e]))?;
    let bk = 1.0 / (CONV_KERNEL as f32).sqrt();
    init.add("conv_w", Tensor::uniform(vec![e, CONV_KERNEL], -bk, bk, rng))?;
    init.add("conv_b", Tensor::zeros(vec![e]))?;
    init.add("out_w", Tensor::uniform(vec![e, d], -be, be, rng))?;
    init.add("out_b", Tensor::zeros(vec![d]))?;
    init_ssm(&mut init.sub("ssm"), e, state_size, rng)
}

/// Mamba branch on canonical rows `x[L, D]`: one output per route, each
/// `Linear_out(scan_route(SiLU(conv(Linear_x(LN x)))) ⊙ SiLU(Linear_z(LN x)))`.
/// Scan parameters are shared by all routes.
pub fn mamba_block(x: &Var, orders: &[ScanOrder], p: &Scope) -> Result<Vec<Var>> {
    let rows = x.shape()[0];
    if orders.is_empty() {
        return Err(Error::invalid("at least one scan route is needed"));
    }
    let xn = layernorm(x, &p.var("ln_gamma")?, &p.var("ln_beta")?)?;
    let u = linear(&xn, &p.var("in_x_w")?, Some(&p.var("in_x_b")?))?;
    let gate = linear(&xn, &p.var("in_z_w")?, Some(&p.var("in_z_b")?))?.silu();
    let ssm = p.sub("ssm");
    orders
        .iter()
        .map(|order| {
            check_route(order, rows)?;
            let seq = u.index_rows(order.sequence().into())?;
            let conv = conv1d_causal(&seq, &p.var("conv_w")?, Some(&p.var("conv_b")?))?.silu();
            let scanned = selective_scan(&conv, &ssm, Direction::Forward)?;
            let back = scanned.index_rows(order.positions().into())?;
            linear(&back.mul(&gate)?, &p.var("out_w")?, Some(&p.var("out_b")?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nd::gradcheck::{grad_check, grad_check_with, project, CheckOptions};
    use crate::nd::{ParamStore, Tape};
    use crate::sfc::{raster, routes, Dims3, ScanKind};

    struct Case {
        x: Tensor,
        delta: Tensor,
        a: Tensor,
        b: Tensor,
        c: Tensor,
        d: Tensor,
    }

    fn case(rng: &mut ChaCha8Rng, l: usize, e: usize, n: usize) -> Case {
        Case {
            x: Tensor::uniform(vec![l, e], -1.0, 1.0, rng),
            delta: Tensor::uniform(vec![l, e], 0.01, 1.0, rng),
            a: Tensor::uniform(vec![e, n], -3.0, -0.1, rng),
            b: Tensor::uniform(vec![l, n], -1.0, 1.0, rng),
            c: Tensor::uniform(vec![l, n], -1.0, 1.0, rng),
            d: Tensor::uniform(vec![e], -1.0, 1.0, rng),
        }
    }

    fn run(k: &Case) -> Result<Tensor> {
        let tape = Tape::inference();
        let v = |t: &Tensor| tape.leaf(t.clone());
        Ok((*scan(&v(&k.x), &v(&k.delta), &v(&k.a), &v(&k.b), &v(&k.c), &v(&k.d))?.value()).clone())
    }

    /// Straightforward per-step recurrence in f64, one channel at a time.
    fn naive(k: &Case) -> Vec<f64> {
        let (l, e) = (k.x.shape()[0], k.x.shape()[1]);
        let n = k.a.shape()[1];
        let mut y = vec![0.0; l * e];
        for ch in 0..e {
            let mut h = vec![0.0f64; n];
            for t in 0..l {
                let dt = k.delta.at(&[t, ch]) as f64;
                let xt = k.x.at(&[t, ch]) as f64;
                let mut out = k.d.at(&[ch]) as f64 * xt;
                for (s, hs) in h.iter_mut().enumerate() {
                    let abar = (dt * k.a.at(&[ch, s]) as f64).exp();
                    *hs = abar * *hs + dt * k.b.at(&[t, s]) as f64 * xt;
                    out += k.c.at(&[t, s]) as f64 * *hs;
                }
                y[t * e + ch] = out;
            }
        }
        y
    }

    #[test]
    fn matches_naive_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (l, e, n) = (rng.gen_range(1..=64), rng.gen_range(1..=8), rng.gen_range(1..=8));
            let k = case(&mut rng, l, e, n);
            let got = run(&k).unwrap();
            let err = got.data().iter().zip(naive(&k)).fold(0.0f64, |m, (&a, b)| m.max((a as f64 - b).abs()));
            assert!(err < 1e-5, "L={l} E={e} N={n} err={err}");
        }
    }

    #[test]
    fn single_step_has_no_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = case(&mut rng, 1, 2, 3);
        let y = run(&k).unwrap();
        for ch in 0..2 {
            let (dt, x) = (k.delta.at(&[0, ch]), k.x.at(&[0, ch]));
            let expect: f32 =
                (0..3).map(|s| k.c.at(&[0, s]) * dt * k.b.at(&[0, s]) * x).sum::<f32>() + k.d.at(&[ch]) * x;
            assert!((y.at(&[0, ch]) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut k = case(&mut rng, 9, 3, 4);
        k.x = Tensor::zeros(vec![9, 3]);
        assert_eq!(run(&k).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn state_stays_bounded_over_long_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 10_000;
        let k = case(&mut rng, l, 2, 4);
        let y = run(&k).unwrap();
        assert!(y.all_finite());
        // |h| ≤ max|Δ·B·x| / (1 - max Ā) per state
        assert!(y.max_abs() < 1e3);
    }

    #[test]
    fn non_finite_input_names_first_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut k = case(&mut rng, 6, 2, 2);
        k.x.set(&[4, 1], f32::NAN);
        match run(&k) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 4),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn scan_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = case(&mut rng, 7, 3, 4);
        let rep = grad_check(
            |v| project(&scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5])?, 1),
            &[k.x, k.delta, k.a, k.b, k.c, k.d],
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "{rep:?}");
    }

    fn ssm_store(width: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_ssm(&mut store.init("ssm"), width, 8, &mut rng).unwrap();
        store
    }

    #[test]
    fn initial_parameters_are_stable() {
        let store = ssm_store(4, 7);
        let a_log = store.get("ssm/a_log").unwrap();
        assert!(a_log.data().iter().all(|&v| -v.exp() < 0.0));
        assert_eq!(a_log.at(&[0, 7]), 8f32.ln());
        assert!((crate::nd::softplus(DT_BIAS_INIT) - 0.1).abs() < 1e-5);
    }

    #[test]
    fn reversal_identity_is_exact() {
        let store = ssm_store(3, 8);
        let tape = Tape::inference();
        let bound = store.bind(&tape);
        let p = bound.scope("ssm");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = tape.leaf(Tensor::uniform(vec![12, 3], -1.0, 1.0, &mut rng));
        let rx = reverse_rows(&x).unwrap();
        let lhs = selective_scan(&rx, &p, Direction::Forward).unwrap();
        let rhs = reverse_rows(&selective_scan(&x, &p, Direction::Backward).unwrap()).unwrap();
        assert_eq!(*lhs.value(), *rhs.value());
    }

    #[test]
    fn raster_route_equals_plain_flatten() {
        let store = ssm_store(2, 10);
        let tape = Tape::inference();
        let bound = store.bind(&tape);
        let p = bound.scope("ssm");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = tape.leaf(Tensor::uniform(vec![2, 2, 3, 2], -1.0, 1.0, &mut rng));
        let order = raster(Dims3::new(2, 3, 2).unwrap()).unwrap();
        let out = hilbert_ssm(&v, &[order], &p).unwrap();
        let plain = selective_scan(&volume_to_rows(&v).unwrap(), &p, Direction::Forward).unwrap();
        let expect = rows_to_volume(&plain, 2, 3, 2).unwrap();
        assert_eq!(*out[0].value(), *expect.value());
    }

    #[test]
    fn routes_are_permutation_equivariant() {
        let store = ssm_store(2, 12);
        let tape = Tape::inference();
        let bound = store.bind(&tape);
        let p = bound.scope("ssm");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vt = Tensor::uniform(vec![2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let order = ScanKind::HilbertTemporalFirst.generate(Dims3::new(2, 3, 3).unwrap()).unwrap();
        let rs = routes(&order, 2).unwrap();
        let out = hilbert_ssm(&tape.leaf(vt.clone()), &rs, &p).unwrap();
        for (route, got) in rs.iter().zip(&out) {
            let seq = tape.leaf(route.apply(&vt).unwrap());
            let scanned = selective_scan(&seq, &p, Direction::Forward).unwrap();
            let expect = route.inverse_apply(&scanned.value()).unwrap();
            assert!(got.value().max_abs_diff(&expect) < 1e-6);
        }
        let zero = tape.leaf(Tensor::zeros(vec![2, 2, 3, 3]));
        for o in hilbert_ssm(&zero, &rs, &p).unwrap() {
            assert_eq!(o.value().max_abs(), 0.0);
        }
    }

    fn mamba_store(d: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_mamba(&mut store.init("m"), d, 4, &mut rng).unwrap();
        store
    }

    #[test]
    fn mamba_zero_input_zero_output() {
        let store = mamba_store(4, 14);
        let tape = Tape::inference();
        let bound = store.bind(&tape);
        let order = raster(Dims3::new(1, 2, 3).unwrap()).unwrap();
        let x = tape.leaf(Tensor::zeros(vec![6, 4]));
        let out = mamba_block(&x, &routes(&order, 2).unwrap(), &bound.scope("m")).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.value().max_abs() == 0.0));
    }

    #[test]
    fn saturated_gate_passes_inner_path() {
        let mut store = mamba_store(3, 15);
        store.set("m/in_z_w", Tensor::zeros(vec![3, 6])).unwrap();
        store.set("m/in_z_b", Tensor::full(vec![6], 40.0)).unwrap();
        let tape = Tape::inference();
        let bound = store.bind(&tape);
        let p = bound.scope("m");
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = tape.leaf(Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng));
        let order = raster(Dims3::new(1, 2, 2).unwrap()).unwrap();
        let got = &mamba_block(&x, std::slice::from_ref(&order), &p).unwrap()[0];
        // inner path rebuilt by hand without the gate; SiLU(40) = 40 so scale back
        let xn = layernorm(&x, &p.var("ln_gamma").unwrap(), &p.var("ln_beta").unwrap()).unwrap();
        let u = linear(&xn, &p.var("in_x_w").unwrap(), Some(&p.var("in_x_b").unwrap())).unwrap();
        let conv =
            conv1d_causal(&u, &p.var("conv_w").unwrap(), Some(&p.var("conv_b").unwrap())).unwrap().silu();
        let inner = selective_scan(&conv, &p.sub("ssm"), Direction::Forward).unwrap().scale(40.0);
        let expect = linear(&inner, &p.var("out_w").unwrap(), Some(&p.var("out_b").unwrap())).unwrap();
        assert!(got.value().max_abs_diff(&expect.value()) < 1e-4);
    }

    #[test]
    fn mamba_block_gradients() {
        let store = mamba_store(3, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let order = ScanKind::HilbertTemporalFirst.generate(Dims3::new(2, 2, 2).unwrap()).unwrap();
        let rs = routes(&order, 2).unwrap();
        let mut inputs = vec![Tensor::uniform(vec![8, 3], -1.0, 1.0, &mut rng)];
        inputs.extend(store.tensors().iter().cloned());
        let rep = grad_check_with(
            |v| {
                let bound = store.bind_vars(v[1..].to_vec())?;
                let outs = mamba_block(&v[0], &rs, &bound.scope("m"))?;
                project(&outs[0].add(&outs[1])?, 19)
            },
            &inputs,
            CheckOptions::default(),
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "{rep:?}");
    }
}
