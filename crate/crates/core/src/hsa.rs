//! Hybrid Shuffle Attention and the two simpler fusers it is compared with.
//!
//! HSA pools each of the three features (two scan routes and the frequency
//! branch) to one value per channel, interleaves the pooled vectors into
//! per-channel triples, mixes each triple with its own 3×3 map, squashes
//! with a sigmoid and undoes the interleave. The three resulting weight
//! vectors scale their features, which are then summed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::nd::layers::{group_conv1d, linear};
use crate::nd::{concat, Init, Scope, Tensor, Var};
use crate::{Error, Result};

/// How the route and frequency features are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    #[default]
    Hsa,
    Sum,
    CaGate,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Hsa => "hsa",
            Fusion::Sum => "sum",
            Fusion::CaGate => "ca-gate",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsa" => Ok(Fusion::Hsa),
            "sum" => Ok(Fusion::Sum),
            "ca-gate" | "cagate" => Ok(Fusion::CaGate),
            _ => Err(Error::invalid(format!("unknown fusion {s}"))),
        }
    }
}

/// `shuffle_perm(d)[i]` is the source of entry `i` when
/// `[a_1..a_d, b_1..b_d, f_1..f_d]` becomes `[a_1, b_1, f_1, a_2, ...]`.
pub fn shuffle_perm(d: usize) -> Vec<usize> {
    (0..3 * d).map(|i| (i % 3) * d + i / 3).collect()
}

/// Inverse of [`shuffle_perm`].
pub fn unshuffle_perm(d: usize) -> Vec<usize> {
    (0..3 * d).map(|i| 3 * (i % d) + i / d).collect()
}

fn check_inputs(x1: &Var, x2: &Var, xf: &Var) -> Result<usize> {
    let shape = x1.shape();
    if x2.shape() != shape || xf.shape() != shape {
        return Err(Error::shape(format!(
            "fusion inputs differ: {shape:?}, {:?}, {:?}",
            x2.shape(),
            xf.shape()
        )));
    }
    match shape[..] {
        [_, d, _, _] if d > 0 => Ok(d),
        _ => Err(Error::shape(format!("fusion input must be [T, D, H, W], got {shape:?}"))),
    }
}

/// Mean of `x[T, D, H, W]` over everything but the channel axis.
fn pool_channels(x: &Var) -> Result<Var> {
    let [t, d, h, w] = x.shape()[..] else {
        return Err(Error::shape("pooling needs a 4-d input"));
    };
    x.permute(&[1, 0, 2, 3])?.reshape(vec![d, t * h * w])?.mean_axis(1)
}

fn channel_scale(weights: &Var, x: &Var) -> Result<Var> {
    let d = weights.shape()[0];
    x.mul(&weights.reshape(vec![d, 1, 1])?)
}

pub fn init_hsa(init: &mut Init, d: usize, rng: &mut impl Rng) -> Result<()> {
    let bound = 1.0 / 3f32.sqrt();
    init.add("group_w", Tensor::uniform(vec![d, 3, 3], -bound, bound, rng))?;
    init.add("group_b", Tensor::zeros(vec![3 * d]))
}

/// The fusion weights `[A¹ | A² | Aᶠ]`, each block of length `D`, in
/// channel order.
pub fn hsa_weights(x1: &Var, x2: &Var, xf: &Var, p: &Scope) -> Result<Var> {
    let d = check_inputs(x1, x2, xf)?;
    let pooled = concat(&[&pool_channels(x1)?, &pool_channels(x2)?, &pool_channels(xf)?], 0)?;
    let shuffled = pooled.gather_permute(&shuffle_perm(d))?;
    let mixed = group_conv1d(&shuffled, &p.var("group_w")?, Some(&p.var("group_b")?))?;
    mixed.sigmoid().gather_permute(&unshuffle_perm(d))
}

/// `Y = A¹⊙x1 + A²⊙x2 + Aᶠ⊙xf` with weights from [`hsa_weights`] broadcast
/// over time and space.
pub fn hsa_fuse(x1: &Var, x2: &Var, xf: &Var, p: &Scope) -> Result<Var> {
    let weights = hsa_weights(x1, x2, xf, p)?.chunk(3, 0)?;
    channel_scale(&weights[0], x1)?
        .add(&channel_scale(&weights[1], x2)?)?
        .add(&channel_scale(&weights[2], xf)?)
}

pub fn sum_fuse(x1: &Var, x2: &Var, xf: &Var) -> Result<Var> {
    check_inputs(x1, x2, xf)?;
    x1.add(x2)?.add(xf)
}

pub fn init_ca_gate(init: &mut Init, d: usize, rng: &mut impl Rng) -> Result<()> {
    let bound = 1.0 / (d as f32).sqrt();
    for i in 0..3 {
        init.add(&format!("gate{i}_w"), Tensor::uniform(vec![d, d], -bound, bound, rng))?;
        init.add(&format!("gate{i}_b"), Tensor::zeros(vec![d]))?;
    }
    Ok(())
}

/// Independent channel-attention gate per input, then a sum.
pub fn ca_gate_fuse(x1: &Var, x2: &Var, xf: &Var, p: &Scope) -> Result<Var> {
    check_inputs(x1, x2, xf)?;
    let mut out: Option<Var> = None;
    for (i, x) in [x1, x2, xf].into_iter().enumerate() {
        let gate =
            linear(&pool_channels(x)?, &p.var(&format!("gate{i}_w"))?, Some(&p.var(&format!("gate{i}_b"))?))?
                .sigmoid();
        let scaled = channel_scale(&gate, x)?;
        out = Some(match out {
            Some(acc) => acc.add(&scaled)?,
            None => scaled,
        });
    }
    Ok(out.expect("three inputs"))
}

pub fn init_fusion(init: &mut Init, fusion: Fusion, d: usize, rng: &mut impl Rng) -> Result<()> {
    match fusion {
        Fusion::Hsa => init_hsa(init, d, rng),
        Fusion::Sum => Ok(()),
        Fusion::CaGate => init_ca_gate(init, d, rng),
    }
}

pub fn fuse(fusion: Fusion, x1: &Var, x2: &Var, xf: &Var, p: &Scope) -> Result<Var> {
    match fusion {
        Fusion::Hsa => hsa_fuse(x1, x2, xf, p),
        Fusion::Sum => sum_fuse(x1, x2, xf),
        Fusion::CaGate => ca_gate_fuse(x1, x2, xf, p),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nd::gradcheck::{grad_check, project};
    use crate::nd::{ParamStore, Tape};

    fn store(fusion: Fusion, d: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_fusion(&mut s.init("f"), fusion, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    fn inputs(tape: &Tape, d: usize, seed: u64) -> [Var; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [(); 3].map(|_| tape.leaf(Tensor::uniform(vec![2, d, 3, 2], -1.0, 1.0, &mut rng)))
    }

    #[test]
    fn shuffle_layout_for_two_channels() {
        let labels = ["a1", "a2", "b1", "b2", "f1", "f2"];
        let shuffled: Vec<&str> = shuffle_perm(2).iter().map(|&i| labels[i]).collect();
        assert_eq!(shuffled, ["a1", "b1", "f1", "a2", "b2", "f2"]);
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..9 {
            let v: Vec<f32> = (0..3 * d).map(|_| rng.gen()).collect();
            let s: Vec<f32> = shuffle_perm(d).iter().map(|&i| v[i]).collect();
            let back: Vec<f32> = unshuffle_perm(d).iter().map(|&i| s[i]).collect();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn zero_mixing_gives_half_weights() {
        let mut s = store(Fusion::Hsa, 3, 2);
        s.set("f/group_w", Tensor::zeros(vec![3, 3, 3])).unwrap();
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let [x1, x2, xf] = inputs(&tape, 3, 3);
        let y = hsa_fuse(&x1, &x2, &xf, &bound.scope("f")).unwrap();
        let expect = sum_fuse(&x1, &x2, &xf).unwrap().scale(0.5);
        assert!(y.value().max_abs_diff(&expect.value()) < 1e-6);
    }

    #[test]
    fn weights_are_open_unit_interval() {
        let s = store(Fusion::Hsa, 4, 4);
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let [x1, x2, xf] = inputs(&tape, 4, 5);
        let w = hsa_weights(&x1, &x2, &xf, &bound.scope("f")).unwrap();
        assert_eq!(w.shape(), vec![12]);
        assert!(w.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn constant_inputs_follow_closed_form() {
        let s = store(Fusion::Hsa, 2, 6);
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let consts = [[0.2f32, -0.4], [0.7, 0.1], [-0.3, 0.5]];
        let vars: Vec<Var> =
            consts.iter().map(|c| tape.leaf(Tensor::from_fn(vec![2, 2, 3, 3], |i| c[(i / 9) % 2]))).collect();
        let y = hsa_fuse(&vars[0], &vars[1], &vars[2], &bound.scope("f")).unwrap();
        let (w, b) = (s.get("f/group_w").unwrap(), s.get("f/group_b").unwrap());
        for d in 0..2 {
            let triple = [consts[0][d], consts[1][d], consts[2][d]];
            let mut expect = 0.0f32;
            for a in 0..3 {
                let pre: f32 =
                    (0..3).map(|k| w.at(&[d, a, k]) * triple[k]).sum::<f32>() + b.data()[3 * d + a];
                expect += triple[a] / (1.0 + (-pre).exp());
            }
            assert!((y.value().at(&[1, d, 2, 1]) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn sum_fuse_identities() {
        let tape = Tape::new();
        let [x, _, _] = inputs(&tape, 2, 7);
        let z = tape.constant(Tensor::zeros(x.shape()));
        assert_eq!(*sum_fuse(&x, &z, &z).unwrap().value(), *x.value());
        assert_eq!(sum_fuse(&z, &z, &z).unwrap().value().max_abs(), 0.0);
        let bad = tape.leaf(Tensor::zeros(vec![2, 3, 3, 2]));
        assert!(sum_fuse(&x, &bad, &z).is_err());
    }

    #[test]
    fn saturated_ca_gates_reduce_to_sum() {
        let mut s = store(Fusion::CaGate, 3, 8);
        for i in 0..3 {
            s.set(&format!("f/gate{i}_w"), Tensor::zeros(vec![3, 3])).unwrap();
            s.set(&format!("f/gate{i}_b"), Tensor::full(vec![3], 40.0)).unwrap();
        }
        let tape = Tape::new();
        let bound = s.bind(&tape);
        let [x1, x2, xf] = inputs(&tape, 3, 9);
        let y = ca_gate_fuse(&x1, &x2, &xf, &bound.scope("f")).unwrap();
        let expect = sum_fuse(&x1, &x2, &xf).unwrap();
        assert!(y.value().max_abs_diff(&expect.value()) < 1e-6);
    }

    #[test]
    fn fusion_gradients() {
        for fusion in [Fusion::Hsa, Fusion::CaGate] {
            let s = store(fusion, 2, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut ins: Vec<Tensor> =
                (0..3).map(|_| Tensor::uniform(vec![2, 2, 2, 3], -1.0, 1.0, &mut rng)).collect();
            ins.extend(s.tensors().iter().cloned());
            let rep = grad_check(
                |v| {
                    let bound = s.bind_vars(v[3..].to_vec())?;
                    project(&fuse(fusion, &v[0], &v[1], &v[2], &bound.scope("f"))?, 12)
                },
                &ins,
            )
            .unwrap();
            assert!(rep.max_rel_err < 1e-3, "{fusion} {rep:?}");
        }
    }
}
