//! Scan orders over `(T, H, W)` spatiotemporal cuboids.
//!
//! A [`ScanOrder`] is a bijective permutation of voxel linear indices, where
//! the linear index of voxel `(t, h, w)` is always `t·H·W + h·W + w`. The
//! channel axis of a `(T, C, H, W)` volume is never scanned; it rides along
//! with each voxel (see [`ScanOrder::apply`]).

mod curves;
mod gilbert;
mod golden;
mod locality;

use std::fmt;
use std::str::FromStr;

use crate::nd::Tensor;
use crate::{Error, Result};

pub use curves::{peano, raster, zorder};
pub use gilbert::gilbert3d;
pub use golden::{read_golden, write_golden};
pub use locality::{locality_score, LocalityScore};

/// Extent of a spatiotemporal cuboid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims3 {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims3 {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("zero dimension in ({t},{h},{w})")));
        }
        Ok(Dims3 { t, h, w })
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn linear(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.h + h) * self.w + w
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let w = idx % self.w;
        let h = (idx / self.w) % self.h;
        let t = idx / (self.w * self.h);
        [t, h, w]
    }
}

impl fmt::Display for Dims3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.t, self.h, self.w)
    }
}

impl FromStr for Dims3 {
    type Err = Error;

    /// Parses `T,H,W`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("expected T,H,W, got {s:?}")));
        }
        let mut v = [0usize; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| Error::invalid(format!("bad dimension {p:?} in {s:?}")))?;
        }
        Dims3::new(v[0], v[1], v[2])
    }
}

/// One of the three cuboid axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    T,
    H,
    W,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::T => 0,
            Axis::H => 1,
            Axis::W => 2,
        }
    }
}

/// Axis priority handed to the generalized Hilbert generator for the
/// temporal-first variant.
pub const TEMPORAL_FIRST: [Axis; 3] = [Axis::T, Axis::H, Axis::W];
/// Axis priority for the spatial-first variant.
pub const SPATIAL_FIRST: [Axis; 3] = [Axis::H, Axis::W, Axis::T];

/// Generation strategy of a scan order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Raster,
    Zorder,
    Peano,
    #[serde(rename = "hilbert-s")]
    HilbertSpatialFirst,
    #[serde(rename = "hilbert-t")]
    HilbertTemporalFirst,
}

impl ScanKind {
    pub const ALL: [ScanKind; 5] = [
        ScanKind::Raster,
        ScanKind::Zorder,
        ScanKind::Peano,
        ScanKind::HilbertSpatialFirst,
        ScanKind::HilbertTemporalFirst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Raster => "raster",
            ScanKind::Zorder => "zorder",
            ScanKind::Peano => "peano",
            ScanKind::HilbertSpatialFirst => "hilbert-s",
            ScanKind::HilbertTemporalFirst => "hilbert-t",
        }
    }

    pub fn is_hilbert(self) -> bool {
        matches!(self, ScanKind::HilbertSpatialFirst | ScanKind::HilbertTemporalFirst)
    }

    /// Builds the forward order of this kind.
    pub fn generate(self, dims: Dims3) -> Result<ScanOrder> {
        match self {
            ScanKind::Raster => raster(dims),
            ScanKind::Zorder => zorder(dims),
            ScanKind::Peano => peano(dims),
            ScanKind::HilbertSpatialFirst => gilbert3d(dims, SPATIAL_FIRST),
            ScanKind::HilbertTemporalFirst => gilbert3d(dims, TEMPORAL_FIRST),
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "raster" => ScanKind::Raster,
            "zorder" | "z-order" => ScanKind::Zorder,
            "peano" => ScanKind::Peano,
            "hilbert-s" | "hilbert_spatial_first" => ScanKind::HilbertSpatialFirst,
            "hilbert-t" | "hilbert_temporal_first" => ScanKind::HilbertTemporalFirst,
            _ => return Err(Error::invalid(format!("unknown scan kind {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::invalid(format!("unknown direction {s:?}"))),
        }
    }
}

/// A bijective traversal of the voxels of a cuboid.
///
/// `forward` holds the generator's output. The traversal actually used
/// ([`ScanOrder::sequence`]) is `forward` itself or its exact reversal,
/// depending on `direction`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    dims: Dims3,
    kind: ScanKind,
    direction: Direction,
    forward: Vec<usize>,
}

impl ScanOrder {
    /// Wraps an explicit forward list, checking that it is a permutation.
    pub fn from_forward(dims: Dims3, kind: ScanKind, forward: Vec<usize>) -> Result<Self> {
        check_permutation(&forward, dims.len())?;
        Ok(ScanOrder { dims, kind, direction: Direction::Forward, forward })
    }

    pub(crate) fn new_unchecked(dims: Dims3, kind: ScanKind, forward: Vec<usize>) -> Self {
        debug_assert!(check_permutation(&forward, dims.len()).is_ok());
        ScanOrder { dims, kind, direction: Direction::Forward, forward }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// The generator's forward list, regardless of direction.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// Linear voxel indices in traversal order.
    pub fn sequence(&self) -> Vec<usize> {
        match self.direction {
            Direction::Forward => self.forward.clone(),
            Direction::Backward => self.forward.iter().rev().copied().collect(),
        }
    }

    /// `positions()[voxel]` is the rank of `voxel` in the traversal.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.len()];
        for (rank, &v) in self.sequence().iter().enumerate() {
            pos[v] = rank;
        }
        pos
    }

    /// The same order traversed the other way.
    pub fn reversed(&self) -> ScanOrder {
        let direction = match self.direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        ScanOrder { direction, ..self.clone() }
    }

    /// Flattens a `(T, C, H, W)` volume into an `(N, C)` sequence following
    /// this order.
    pub fn apply(&self, volume: &Tensor) -> Result<Tensor> {
        let c = self.check_volume(volume.shape())?;
        let (hw, n) = (self.dims.h * self.dims.w, self.len());
        let src = volume.data();
        let mut out = vec![0.0f32; n * c];
        for (rank, v) in self.sequence().into_iter().enumerate() {
            let (t, p) = (v / hw, v % hw);
            for ch in 0..c {
                out[rank * c + ch] = src[(t * c + ch) * hw + p];
            }
        }
        Tensor::new(vec![n, c], out)
    }

    /// Inverse of [`ScanOrder::apply`].
    pub fn inverse_apply(&self, seq: &Tensor) -> Result<Tensor> {
        let n = self.len();
        if seq.shape().len() != 2 || seq.shape()[0] != n {
            return Err(Error::shape(format!(
                "sequence shape {:?} does not match order of length {n}",
                seq.shape()
            )));
        }
        let c = seq.shape()[1];
        let Dims3 { t, h, w } = self.dims;
        let hw = h * w;
        let src = seq.data();
        let mut out = vec![0.0f32; n * c];
        for (rank, v) in self.sequence().into_iter().enumerate() {
            let (tt, p) = (v / hw, v % hw);
            for ch in 0..c {
                out[(tt * c + ch) * hw + p] = src[rank * c + ch];
            }
        }
        Tensor::new(vec![t, c, h, w], out)
    }

    fn check_volume(&self, shape: &[usize]) -> Result<usize> {
        let Dims3 { t, h, w } = self.dims;
        match shape {
            [vt, c, vh, vw] if (*vt, *vh, *vw) == (t, h, w) => Ok(*c),
            _ => Err(Error::shape(format!("volume shape {shape:?} does not match order dims ({t},{h},{w})"))),
        }
    }
}

/// Expands an order into `n_routes` traversals.
///
/// Route 1 is the order itself, route 2 its reversal. Routes 3 and 4 are the
/// forward and backward traversals of the same kind generated on the
/// spatially rotated grid `(T, W, H)` and mapped back to original voxels.
pub fn routes(order: &ScanOrder, n_routes: usize) -> Result<Vec<ScanOrder>> {
    match n_routes {
        1 => Ok(vec![order.clone()]),
        2 => Ok(vec![order.clone(), order.reversed()]),
        4 => {
            let rotated = rotated_order(order)?;
            let rotated = if order.direction == Direction::Backward { rotated.reversed() } else { rotated };
            Ok(vec![order.clone(), order.reversed(), rotated.clone(), rotated.reversed()])
        }
        n => Err(Error::invalid(format!("unsupported route count {n}, expected 1, 2 or 4"))),
    }
}

fn rotated_order(order: &ScanOrder) -> Result<ScanOrder> {
    let Dims3 { t, h, w } = order.dims;
    // rotated grid is (T, W, H): (h', w') = (w, H-1-h)
    let rot_dims = Dims3::new(t, w, h)?;
    let rot = order.kind.generate(rot_dims)?;
    let forward = rot
        .forward
        .iter()
        .map(|&v| {
            let [tt, hr, wr] = rot_dims.coords(v);
            order.dims.linear(tt, h - 1 - wr, hr)
        })
        .collect();
    Ok(ScanOrder::new_unchecked(order.dims, order.kind, forward))
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!("permutation has {} entries, expected {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("index {p} breaks bijectivity")));
        }
    }
    Ok(())
}
