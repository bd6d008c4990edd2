//! Generalized Hilbert curve on arbitrary cuboids.
//!
//! The recursion follows the usual three-region template: the box is split
//! along its longest axes and each piece is traversed by a recursive call
//! whose start and end corners chain together. Every call obeys one
//! contract: start at the corner `origin` and finish at
//! `origin + (|a| - 1)·unit(a)`, visiting every voxel of the box with unit
//! steps.
//!
//! On a bipartite grid that contract is only satisfiable when the major
//! length `|a|` has the right parity (see [`feasible`]). The classic
//! recursion can produce pieces that violate it and then falls back to a
//! diagonal step; here such a split is rejected and the box is covered by a
//! serpentine that honours the same contract, so every step of the result
//! has Manhattan length one.

use super::{Axis, Dims3, ScanKind, ScanOrder};
use crate::Result;

type V3 = [i64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(k: i64, a: V3) -> V3 {
    [k * a[0], k * a[1], k * a[2]]
}

fn neg(a: V3) -> V3 {
    scale(-1, a)
}

// Axis vectors have a single non-zero component, so the sum is the signed length.
fn len(a: V3) -> i64 {
    (a[0] + a[1] + a[2]).abs()
}

fn unit(a: V3) -> V3 {
    [a[0].signum(), a[1].signum(), a[2].signum()]
}

fn half(a: V3) -> V3 {
    // truncating division, matching the reference recursion
    [a[0] / 2, a[1] / 2, a[2] / 2]
}

/// Whether a box with axis vectors `a, b, c` admits a unit-step Hamiltonian
/// path between the two corners at either end of `a`.
///
/// Colour the voxels like a 3D checkerboard. The two corners differ by
/// `|a| - 1` steps, so they share a colour iff `|a|` is odd. A path over an
/// even number of voxels must join opposite colours, and one over an odd
/// number (all sides odd) must start and end on the majority colour, which
/// both corners are.
fn feasible(a: V3, b: V3, c: V3) -> bool {
    let (w, h, d) = (len(a), len(b), len(c));
    let n = w * h * d;
    if n == 0 {
        return false;
    }
    if n == 1 {
        return true;
    }
    if w == 1 {
        return false;
    }
    n % 2 == 1 || w % 2 == 0
}

struct Emitter {
    dims: Dims3,
    out: Vec<usize>,
}

impl Emitter {
    fn push(&mut self, p: V3) {
        debug_assert!(p.iter().all(|&x| x >= 0));
        self.out.push(self.dims.linear(p[0] as usize, p[1] as usize, p[2] as usize));
    }

    fn line(&mut self, p: V3, a: V3) {
        let da = unit(a);
        for i in 0..len(a) {
            self.push(add(p, scale(i, da)));
        }
    }

    fn generate(&mut self, p: V3, a: V3, b: V3, c: V3) {
        let (w, h, d) = (len(a), len(b), len(c));
        if h == 1 && d == 1 {
            return self.line(p, a);
        }
        let (da, db, dc) = (unit(a), unit(b), unit(c));

        let (mut a2, mut b2, mut c2) = (half(a), half(b), half(c));
        // prefer even steps
        if len(a2) % 2 == 1 && w > 2 {
            a2 = add(a2, da);
        }
        if len(b2) % 2 == 1 && h > 2 {
            b2 = add(b2, db);
        }
        if len(c2) % 2 == 1 && d > 2 {
            c2 = add(c2, dc);
        }

        let pieces: Vec<[V3; 4]> = if 2 * w > 3 * h && 2 * w > 3 * d {
            // wide: split along a only
            vec![[p, a2, b, c], [add(p, a2), sub(a, a2), b, c]]
        } else if 3 * h > 4 * d {
            // do not split along c
            vec![
                [p, b2, c, a2],
                [add(p, b2), a, sub(b, b2), c],
                [add(add(p, sub(a, da)), sub(b2, db)), neg(b2), c, neg(sub(a, a2))],
            ]
        } else if 3 * d > 4 * h {
            // do not split along b
            vec![
                [p, c2, a2, b],
                [add(p, c2), a, b, sub(c, c2)],
                [add(add(p, sub(a, da)), sub(c2, dc)), neg(c2), neg(sub(a, a2)), b],
            ]
        } else {
            vec![
                [p, b2, c2, a2],
                [add(p, b2), c, a2, sub(b, b2)],
                [add(add(p, sub(b2, db)), sub(c, dc)), a, neg(b2), neg(sub(c, c2))],
                [add(add(add(p, sub(a, da)), b2), sub(c, dc)), neg(c), neg(sub(a, a2)), sub(b, b2)],
                [add(add(p, sub(a, da)), sub(b2, db)), neg(b2), c2, neg(sub(a, a2))],
            ]
        };

        if pieces.iter().all(|q| feasible(q[1], q[2], q[3])) {
            for [q, qa, qb, qc] in pieces {
                self.generate(q, qa, qb, qc);
            }
        } else {
            self.serpentine3(p, a, b, c);
        }
    }

    /// Covers a feasible box from `p` to `p + (|a|-1)·unit(a)`.
    fn serpentine3(&mut self, p: V3, a: V3, b: V3, c: V3) {
        let (w, h, d) = (len(a), len(b), len(c));
        if d == 1 {
            return self.serpentine2(p, a, b);
        }
        if h == 1 {
            return self.serpentine2(p, a, c);
        }
        let da = unit(a);
        if w % 2 == 0 {
            // slabs across a, alternating direction; slab 2k ends where 2k+1 starts
            let mut slab = Vec::with_capacity((h * d) as usize);
            boustrophedon(&mut slab, [0, 0, 0], b, c);
            for i in 0..w {
                let q = add(p, scale(i, da));
                if i % 2 == 0 {
                    slab.iter().for_each(|&s| self.push(add(q, s)));
                } else {
                    slab.iter().rev().for_each(|&s| self.push(add(q, s)));
                }
            }
            return;
        }
        // all sides odd and h, d >= 3: the slab endpoints walk the corners
        // (0,0) -> (1,0) -> (1,1) -> (0,0), then bounce between the diagonal
        for i in 0..w {
            let (from, to) = match i {
                0 => ((0, 0), (1, 0)),
                1 => ((1, 0), (1, 1)),
                2 => ((1, 1), (0, 0)),
                _ if i % 2 == 1 => ((0, 0), (1, 1)),
                _ => ((1, 1), (0, 0)),
            };
            self.slab(add(p, scale(i, da)), b, c, from, to);
        }
    }

    /// 2D box from `p` to `p + (|a|-1)·unit(a)`.
    fn serpentine2(&mut self, p: V3, a: V3, b: V3) {
        let (w, h) = (len(a), len(b));
        let (da, db) = (unit(a), unit(b));
        if h == 1 {
            return self.line(p, a);
        }
        if w % 2 == 0 {
            for i in 0..w {
                for j in 0..h {
                    let jj = if i % 2 == 0 { j } else { h - 1 - j };
                    self.push(add(add(p, scale(i, da)), scale(jj, db)));
                }
            }
            return;
        }
        // odd x odd: up the first column, then rows back down over the rest
        for j in 0..h {
            self.push(add(p, scale(j, db)));
        }
        for r in 0..h {
            let j = h - 1 - r;
            for k in 1..w {
                let i = if r % 2 == 0 { k } else { w - k };
                self.push(add(add(p, scale(i, da)), scale(j, db)));
            }
        }
    }

    /// Odd x odd plane at `q`, between two of its corners (given as
    /// `(far along b, far along c)` flags).
    fn slab(&mut self, q: V3, b: V3, c: V3, from: (u8, u8), to: (u8, u8)) {
        let (h, d) = (len(b), len(c));
        let origin =
            add(add(q, scale(from.0 as i64 * (h - 1), unit(b))), scale(from.1 as i64 * (d - 1), unit(c)));
        let bb = if from.0 == 1 { neg(b) } else { b };
        let cc = if from.1 == 1 { neg(c) } else { c };
        if from.0 != to.0 && from.1 != to.1 {
            let mut path = Vec::with_capacity((h * d) as usize);
            boustrophedon(&mut path, origin, bb, cc);
            path.into_iter().for_each(|s| self.push(s));
        } else if from.0 != to.0 {
            self.serpentine2(origin, bb, cc);
        } else {
            self.serpentine2(origin, cc, bb);
        }
    }
}

/// Rows along `b`, stacked along `c`, alternating direction.
fn boustrophedon(out: &mut Vec<V3>, p: V3, b: V3, c: V3) {
    let (h, d) = (len(b), len(c));
    let (db, dc) = (unit(b), unit(c));
    for k in 0..d {
        for j in 0..h {
            let jj = if k % 2 == 0 { j } else { h - 1 - j };
            out.push(add(add(p, scale(jj, db)), scale(k, dc)));
        }
    }
}

/// Generalized Hilbert path over a `(T, H, W)` cuboid.
///
/// `axis_priority[0]` becomes the major axis of the recursion, the axis
/// along which the path travels from its start corner to its end corner.
/// When that axis cannot host such a path (its length has the wrong parity
/// for the voxel count) the next axis in priority order is used instead.
/// The result is tagged [`ScanKind::HilbertTemporalFirst`] when time leads
/// the priority list and [`ScanKind::HilbertSpatialFirst`] otherwise.
pub fn gilbert3d(dims: Dims3, axis_priority: [Axis; 3]) -> Result<ScanOrder> {
    let dims = Dims3::new(dims.t, dims.h, dims.w)?;
    let mut seen = [false; 3];
    for a in axis_priority {
        seen[a.index()] = true;
    }
    if seen.contains(&false) {
        return Err(crate::Error::invalid(format!("axis priority {axis_priority:?} is not a permutation")));
    }
    let kind = if axis_priority[0] == Axis::T {
        ScanKind::HilbertTemporalFirst
    } else {
        ScanKind::HilbertSpatialFirst
    };

    let extent = dims.as_array();
    let vector = |axis: Axis| {
        let mut v = [0i64; 3];
        v[axis.index()] = extent[axis.index()] as i64;
        v
    };
    let n = dims.len();
    let major = axis_priority
        .iter()
        .copied()
        .find(|&ax| {
            let l = extent[ax.index()];
            n == 1 || (l > 1 && (n % 2 == 1 || l % 2 == 0))
        })
        .expect("some axis always admits a corner-to-corner path");
    let rest: Vec<Axis> = axis_priority.iter().copied().filter(|&ax| ax != major).collect();

    let mut em = Emitter { dims, out: Vec::with_capacity(n) };
    em.generate([0, 0, 0], vector(major), vector(rest[0]), vector(rest[1]));
    Ok(ScanOrder::new_unchecked(dims, kind, em.out))
}

#[cfg(test)]
mod tests {
    use super::super::{SPATIAL_FIRST, TEMPORAL_FIRST};
    use super::*;

    // Independent adjacency oracle over decoded coordinates.
    fn max_step(order: &ScanOrder) -> usize {
        let dims = order.dims();
        order
            .forward()
            .windows(2)
            .map(|p| {
                let (a, b) = (dims.coords(p[0]), dims.coords(p[1]));
                (0..3).map(|i| a[i].abs_diff(b[i])).sum::<usize>()
            })
            .max()
            .unwrap_or(1)
    }

    fn is_bijection(order: &ScanOrder) -> bool {
        let mut s = order.forward().to_vec();
        s.sort_unstable();
        s == (0..order.dims().len()).collect::<Vec<_>>()
    }

    #[test]
    fn line_degenerates_to_raster() {
        let o = gilbert3d(Dims3::new(1, 1, 4).unwrap(), TEMPORAL_FIRST).unwrap();
        assert_eq!(o.forward(), &[0, 1, 2, 3]);
    }

    #[test]
    fn cube_2x2x2_is_adjacent_path() {
        let o = gilbert3d(Dims3::new(2, 2, 2).unwrap(), TEMPORAL_FIRST).unwrap();
        assert_eq!(o.len(), 8);
        assert!(is_bijection(&o));
        assert_eq!(max_step(&o), 1);
    }

    #[test]
    fn odd_cuboid_3x5x2() {
        for pri in [TEMPORAL_FIRST, SPATIAL_FIRST] {
            let o = gilbert3d(Dims3::new(3, 5, 2).unwrap(), pri).unwrap();
            assert_eq!(o.len(), 30);
            assert!(is_bijection(&o));
            assert_eq!(max_step(&o), 1);
        }
    }

    #[test]
    fn exhaustive_adjacency_up_to_12() {
        for t in 1..=12 {
            for h in 1..=12 {
                for w in 1..=12 {
                    let dims = Dims3::new(t, h, w).unwrap();
                    for pri in [TEMPORAL_FIRST, SPATIAL_FIRST] {
                        let o = gilbert3d(dims, pri).unwrap();
                        assert!(is_bijection(&o), "{dims}");
                        assert_eq!(max_step(&o), 1, "{dims} {pri:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn kind_follows_priority() {
        let dims = Dims3::new(4, 4, 4).unwrap();
        assert_eq!(gilbert3d(dims, TEMPORAL_FIRST).unwrap().kind(), ScanKind::HilbertTemporalFirst);
        assert_eq!(gilbert3d(dims, SPATIAL_FIRST).unwrap().kind(), ScanKind::HilbertSpatialFirst);
        assert!(gilbert3d(dims, [Axis::T, Axis::T, Axis::W]).is_err());
    }

    #[test]
    fn ends_at_far_corner_of_major_axis() {
        let o = gilbert3d(Dims3::new(8, 8, 8).unwrap(), TEMPORAL_FIRST).unwrap();
        assert_eq!(o.forward()[0], 0);
        assert_eq!(*o.forward().last().unwrap(), 7 * 64);
    }

    #[test]
    fn deterministic() {
        let dims = Dims3::new(7, 9, 5).unwrap();
        assert_eq!(gilbert3d(dims, TEMPORAL_FIRST).unwrap(), gilbert3d(dims, TEMPORAL_FIRST).unwrap());
    }
}
