//! Raster, Morton and Peano baselines.

use super::{Dims3, ScanKind, ScanOrder};
use crate::Result;

/// Identity order: `(t, h, w)` lexicographic.
pub fn raster(dims: Dims3) -> Result<ScanOrder> {
    let dims = Dims3::new(dims.t, dims.h, dims.w)?;
    Ok(ScanOrder::new_unchecked(dims, ScanKind::Raster, (0..dims.len()).collect()))
}

fn bits_for(n: usize) -> u32 {
    // ceil(log2 n)
    usize::BITS - (n - 1).leading_zeros()
}

/// Morton order with per-axis bit budgets of `ceil(log2 dim)`.
///
/// Bits are interleaved round-robin starting from the least significant bit
/// of `w`, then `h`, then `t`; an axis drops out of the rotation once its
/// budget is spent. Codes that decode outside the cuboid are skipped.
pub fn zorder(dims: Dims3) -> Result<ScanOrder> {
    let dims = Dims3::new(dims.t, dims.h, dims.w)?;
    let budget = [bits_for(dims.t), bits_for(dims.h), bits_for(dims.w)];
    let total: u32 = budget.iter().sum();
    // bit position in the code -> (axis, bit within axis)
    let mut layout = Vec::with_capacity(total as usize);
    let mut used = [0u32; 3];
    while layout.len() < total as usize {
        for axis in [2usize, 1, 0] {
            if used[axis] < budget[axis] {
                layout.push((axis, used[axis]));
                used[axis] += 1;
            }
        }
    }
    let extent = dims.as_array();
    let mut out = Vec::with_capacity(dims.len());
    for code in 0u64..(1u64 << total) {
        let mut c = [0usize; 3];
        for (pos, &(axis, bit)) in layout.iter().enumerate() {
            c[axis] |= (((code >> pos) & 1) as usize) << bit;
        }
        if (0..3).all(|i| c[i] < extent[i]) {
            out.push(dims.linear(c[0], c[1], c[2]));
        }
    }
    Ok(ScanOrder::new_unchecked(dims, ScanKind::Zorder, out))
}

/// Peano curve on the smallest enclosing `3^k` cube, compacted to the
/// cuboid.
///
/// The curve index is written in base 3 with digits cycling through the
/// axes `t, h, w` from the most significant end. Each digit is reflected
/// (`d -> 2 - d`) when the digits already consumed by the *other* axes sum
/// to an odd number, which turns the raw base-3 interleaving into a
/// continuous serpentine at every level.
pub fn peano(dims: Dims3) -> Result<ScanOrder> {
    let dims = Dims3::new(dims.t, dims.h, dims.w)?;
    let longest = dims.t.max(dims.h).max(dims.w);
    let mut k = 0u32;
    while 3usize.pow(k) < longest {
        k += 1;
    }
    let side = 3usize.pow(k);
    let digits = 3 * k as usize;
    let extent = dims.as_array();
    let mut out = Vec::with_capacity(dims.len());
    let mut buf = vec![0usize; digits];
    for idx in 0..side * side * side {
        let mut rem = idx;
        for d in buf.iter_mut().rev() {
            *d = rem % 3;
            rem /= 3;
        }
        let mut coord = [0usize; 3];
        let mut sums = [0usize; 3];
        for (pos, &dig) in buf.iter().enumerate() {
            let axis = pos % 3;
            let others = sums.iter().sum::<usize>() - sums[axis];
            let v = if others % 2 == 0 { dig } else { 2 - dig };
            coord[axis] = coord[axis] * 3 + v;
            sums[axis] += dig;
        }
        if (0..3).all(|i| coord[i] < extent[i]) {
            out.push(dims.linear(coord[0], coord[1], coord[2]));
        }
    }
    Ok(ScanOrder::new_unchecked(dims, ScanKind::Peano, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(t: usize, h: usize, w: usize) -> Dims3 {
        Dims3::new(t, h, w).unwrap()
    }

    #[test]
    fn raster_is_identity() {
        assert_eq!(raster(d(1, 2, 2)).unwrap().forward(), &[0, 1, 2, 3]);
        assert_eq!(raster(d(2, 1, 2)).unwrap().forward(), &[0, 1, 2, 3]);
    }

    // Independent oracle: decode every Morton code by explicit per-bit loops.
    fn morton_oracle(bits: [u32; 3], dims: Dims3) -> Vec<usize> {
        let total: u32 = bits.iter().sum();
        let mut out = vec![];
        for code in 0..(1usize << total) {
            let (mut c, mut left, mut pos) = ([0usize; 3], bits, 0);
            while left.iter().any(|&b| b > 0) {
                for axis in [2, 1, 0] {
                    if left[axis] > 0 {
                        let bit = bits[axis] - left[axis];
                        c[axis] |= ((code >> pos) & 1) << bit;
                        pos += 1;
                        left[axis] -= 1;
                    }
                }
            }
            if c[0] < dims.t && c[1] < dims.h && c[2] < dims.w {
                out.push(dims.linear(c[0], c[1], c[2]));
            }
        }
        out
    }

    #[test]
    fn zorder_small_cases() {
        // (h,w): (0,0),(0,1),(1,0),(1,1)
        assert_eq!(zorder(d(1, 2, 2)).unwrap().forward(), &[0, 1, 2, 3]);
        assert_eq!(zorder(d(2, 2, 2)).unwrap().forward(), morton_oracle([1, 1, 1], d(2, 2, 2)).as_slice());
        assert_eq!(zorder(d(2, 2, 2)).unwrap().forward(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        let o = zorder(d(1, 3, 3)).unwrap();
        let mut s = o.forward().to_vec();
        s.sort_unstable();
        assert_eq!(s, (0..9).collect::<Vec<_>>());
        assert_eq!(o.forward(), morton_oracle([0, 2, 2], d(1, 3, 3)).as_slice());
    }

    #[test]
    fn peano_small_cases() {
        assert_eq!(peano(d(1, 1, 3)).unwrap().forward(), &[0, 1, 2]);
        // boustrophedon over the 3x3 plane
        assert_eq!(peano(d(1, 3, 3)).unwrap().forward(), &[0, 1, 2, 5, 4, 3, 6, 7, 8]);
        let o = peano(d(2, 2, 2)).unwrap();
        let mut s = o.forward().to_vec();
        s.sort_unstable();
        assert_eq!(s, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn peano_full_cube_is_adjacent() {
        for side in [3, 9] {
            let o = peano(d(side, side, side)).unwrap();
            let dims = o.dims();
            for p in o.forward().windows(2) {
                let (a, b) = (dims.coords(p[0]), dims.coords(p[1]));
                let step: usize = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
                assert_eq!(step, 1);
            }
        }
    }
}
