//! Encoder, state-space stack, decoder, refinement and head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Head, ModelConfig};
use crate::hsa::{fuse, init_fusion};
use crate::nd::layers::{conv2d, conv_transpose2d, depthwise_conv2d, groupnorm, layernorm};
use crate::nd::{concat, Bound, Init, Padding, ParamStore, Scope, Tensor, Var};
use crate::sfc::{routes, Dims3, ScanOrder};
use crate::ssm::{init_mamba, mamba_block, rows_to_volume, volume_to_rows};
use crate::wavelet::freq_branch;
use crate::{Error, Result};

/// Total spatial downsampling of the encoder.
pub const DOWNSAMPLE: usize = 4;
/// Lower bound added to every predicted standard deviation.
pub const SIGMA_FLOOR: f32 = 1e-3;

const SLOPE: f32 = 0.01;
// softplus of this is 0.1
const SIGMA_BIAS_INIT: f32 = -2.252_168;

/// Raw network outputs on the tape, each `[L_o, C, H, W]`.
pub struct ModelOutput {
    pub mean: Var,
    pub sigma: Option<Var>,
}

fn uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let b = 1.0 / (fan_in as f32).sqrt();
    Tensor::uniform(shape, -b, b, rng)
}

fn norm_groups(channels: usize) -> usize {
    [4, 2, 1].into_iter().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

fn init_conv(
    init: &mut Init,
    name: &str,
    shape: [usize; 4],
    fan_in: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init.add(&format!("{name}_w"), uniform(shape.to_vec(), fan_in, rng))?;
    init.add(&format!("{name}_b"), Tensor::zeros(vec![shape[0]]))
}

fn init_affine(init: &mut Init, name: &str, c: usize) -> Result<()> {
    init.add(&format!("{name}_gamma"), Tensor::ones(vec![c]))?;
    init.add(&format!("{name}_beta"), Tensor::zeros(vec![c]))
}

/// Registers one frequency-enhanced state-space module of width `hidden`.
pub fn init_fssm(init: &mut Init, config: &ModelConfig, rng: &mut impl Rng) -> Result<()> {
    let d = config.hidden;
    init_mamba(&mut init.sub("mamba"), d, config.state_size, rng)?;
    init.add("gains", Tensor::ones(vec![d, 3]))?;
    init_fusion(&mut init.sub("fuse"), config.fusion, d, rng)?;
    init.add("dw_w", uniform(vec![d, 1, 3, 3], 9, rng))?;
    init.add("dw_b", Tensor::zeros(vec![d]))
}

/// Fresh parameters for `config`, deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d) = (config.channels, config.hidden);
    let half = d / 2;
    let mut store = ParamStore::new();

    let mut enc = store.init("enc");
    init_conv(&mut enc, "conv1", [half, c, 3, 3], c * 9, &mut rng)?;
    init_affine(&mut enc, "ln1", half)?;
    init_conv(&mut enc, "conv2", [d, half, 3, 3], half * 9, &mut rng)?;
    init_affine(&mut enc, "ln2", d)?;

    for i in 0..config.n_fssm {
        init_fssm(&mut store.init(&format!("fssm{i}")), config, &mut rng)?;
    }

    // transposed kernels are [Cin, Cout, k, k]; bias is per output channel
    let mut dec = store.init("dec");
    dec.add("up1_w", uniform(vec![d, half, 4, 4], d * 4, &mut rng))?;
    dec.add("up1_b", Tensor::zeros(vec![half]))?;
    init_affine(&mut dec, "gn1", half)?;
    dec.add("up2_w", uniform(vec![half, half, 4, 4], half * 4, &mut rng))?;
    dec.add("up2_b", Tensor::zeros(vec![half]))?;
    init_affine(&mut dec, "gn2", half)?;

    let mut refine = store.init("refine");
    for k in 1..=2 {
        refine.add(&format!("dw{k}_w"), uniform(vec![half, 1, 3, 3], 9, &mut rng))?;
        refine.add(&format!("dw{k}_b"), Tensor::zeros(vec![half]))?;
    }

    // The head sees every decoded frame and the raw input frames. It starts
    // as persistence of the last observed frame plus a small learned term.
    let features = config.in_len * half;
    let raw = config.in_len * c;
    let outs = config.head_outputs();
    let n_mean = config.out_len * c;
    let mut w = uniform(vec![outs, features + raw, 1, 1], features + raw, &mut rng).map(|v| 0.1 * v);
    for o in 0..outs {
        for r in 0..raw {
            w.set(&[o, features + r, 0, 0], 0.0);
        }
        if o < n_mean {
            let last = features + (config.in_len - 1) * c + o % c;
            w.set(&[o, last, 0, 0], 1.0);
        }
    }
    let b = Tensor::from_fn(vec![outs], |o| if o < n_mean { 0.0 } else { SIGMA_BIAS_INIT });
    let mut head = store.init("head");
    head.add("w", w)?;
    head.add("b", b)?;
    Ok(store)
}

/// Errors unless `params` has exactly the names and shapes `config` needs.
pub fn check_params(config: &ModelConfig, params: &ParamStore) -> Result<()> {
    let want = init_params(config, 0)?;
    if want.len() != params.len() {
        return Err(Error::invalid(format!(
            "checkpoint has {} tensors, configuration needs {}",
            params.len(),
            want.len()
        )));
    }
    for (name, t) in want.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::shape(format!(
                    "parameter {name} is {:?}, configuration needs {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::invalid(format!("checkpoint lacks parameter {name}"))),
        }
    }
    Ok(())
}

/// Layer norm over the channel axis of `x[N, C, H, W]`.
fn channel_layernorm(x: &Var, p: &Scope, name: &str) -> Result<Var> {
    let y = x.permute(&[0, 2, 3, 1])?;
    let y = layernorm(&y, &p.var(&format!("{name}_gamma"))?, &p.var(&format!("{name}_beta"))?)?;
    y.permute(&[0, 3, 1, 2])
}

fn encoder(x: &Var, p: &Scope) -> Result<Var> {
    let mut h = x.clone();
    for k in 1..=2 {
        h = conv2d(
            &h,
            &p.var(&format!("conv{k}_w"))?,
            Some(&p.var(&format!("conv{k}_b"))?),
            2,
            1,
            Padding::Zero,
        )?;
        h = channel_layernorm(&h, p, &format!("ln{k}"))?.leaky_relu(SLOPE);
    }
    Ok(h)
}

fn mean2(a: &Var, b: &Var) -> Result<Var> {
    Ok(a.add(b)?.scale(0.5))
}

/// One module on `v[T, D, h, w]`: route features from the Mamba branch,
/// the wavelet branch on the same input, fusion, a depthwise mix and a
/// residual connection. With four routes the two forward and the two
/// backward traversals are averaged into the two route features.
pub fn fssm_block(config: &ModelConfig, v: &Var, orders: &[ScanOrder], p: &Scope) -> Result<Var> {
    let [t, _, h, w] = v.shape()[..] else {
        return Err(Error::shape("module input must be 4-d"));
    };
    let outs: Vec<Var> = mamba_block(&volume_to_rows(v)?, orders, &p.sub("mamba"))?
        .iter()
        .map(|r| rows_to_volume(r, t, h, w))
        .collect::<Result<_>>()?;
    let (x1, x2) = match outs.len() {
        1 => (outs[0].clone(), outs[0].clone()),
        2 => (outs[0].clone(), outs[1].clone()),
        _ => (mean2(&outs[0], &outs[2])?, mean2(&outs[1], &outs[3])?),
    };
    let xf = freq_branch(v, &p.var("gains")?, config.basis)?;
    let fused = fuse(config.fusion, &x1, &x2, &xf, &p.sub("fuse"))?;
    let mixed = depthwise_conv2d(&fused, &p.var("dw_w")?, Some(&p.var("dw_b")?), Padding::Zero)?;
    v.add(&mixed.leaky_relu(SLOPE))
}

fn decoder(x: &Var, p: &Scope) -> Result<Var> {
    let mut h = x.clone();
    for k in 1..=2 {
        h = conv_transpose2d(&h, &p.var(&format!("up{k}_w"))?, Some(&p.var(&format!("up{k}_b"))?), 2, 1)?;
        let c = h.shape()[1];
        h = groupnorm(&h, norm_groups(c), &p.var(&format!("gn{k}_gamma"))?, &p.var(&format!("gn{k}_beta"))?)?
            .leaky_relu(SLOPE);
    }
    Ok(h)
}

fn refinement(x: &Var, p: &Scope) -> Result<Var> {
    let r =
        depthwise_conv2d(x, &p.var("dw1_w")?, Some(&p.var("dw1_b")?), Padding::Replicate)?.leaky_relu(SLOPE);
    let r = depthwise_conv2d(&r, &p.var("dw2_w")?, Some(&p.var("dw2_b")?), Padding::Replicate)?;
    x.add(&r)
}

/// Scan routes used for a `(T, h, w)` latent volume.
pub fn latent_routes(config: &ModelConfig, t: usize, h: usize, w: usize) -> Result<Vec<ScanOrder>> {
    let base = config.scan.generate(Dims3::new(t, h, w)?)?;
    routes(&base, config.n_routes)
}

/// Runs the network on `x[L_i, C, H, W]`. Outputs are unclamped.
pub fn forward(config: &ModelConfig, p: &Bound, x: &Var) -> Result<ModelOutput> {
    let shape = x.shape();
    let [t, c, h, w] = shape[..] else {
        return Err(Error::shape(format!("input must be [L_i, C, H, W], got {shape:?}")));
    };
    if t != config.in_len || c != config.channels {
        return Err(Error::shape(format!(
            "input {shape:?} does not match {} frames of {} channels",
            config.in_len, config.channels
        )));
    }
    if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::shape(format!(
            "spatial size {h}x{w} must be a positive multiple of {DOWNSAMPLE}"
        )));
    }
    let orders = latent_routes(config, t, h / DOWNSAMPLE, w / DOWNSAMPLE)?;

    let mut z = encoder(x, &p.scope("enc"))?;
    for i in 0..config.n_fssm {
        z = fssm_block(config, &z, &orders, &p.scope(&format!("fssm{i}")))?;
    }
    let y = refinement(&decoder(&z, &p.scope("dec"))?, &p.scope("refine"))?;

    let half = config.hidden / 2;
    let feats = y.reshape(vec![1, t * half, h, w])?;
    let raw = x.reshape(vec![1, t * c, h, w])?;
    let both = concat(&[&feats, &raw], 1)?;
    let hp = p.scope("head");
    let out = conv2d(&both, &hp.var("w")?, Some(&hp.var("b")?), 1, 0, Padding::Zero)?;
    let n = config.out_len * c;
    let frames = |v: Var| v.reshape(vec![config.out_len, c, h, w]);
    match config.head {
        Head::Det => Ok(ModelOutput { mean: frames(out)?, sigma: None }),
        Head::Gaussian => Ok(ModelOutput {
            mean: frames(out.slice(1, 0, n)?)?,
            sigma: Some(frames(out.slice(1, n, n)?.softplus().add_scalar(SIGMA_FLOOR))?),
        }),
    }
}
