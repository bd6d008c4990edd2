use super::ScanOrder;

/// Index-gap statistics over all 6-neighbour voxel pairs.
///
/// For every pair of voxels that differ by one along a single axis, the gap
/// is the absolute difference of their ranks in the traversal.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LocalityScore {
    /// Arithmetic mean gap over all neighbour pairs.
    pub mean_gap: f64,
    pub max_gap: usize,
    /// Mean gap of neighbours along `t`, `h`, `w` (0 when the axis has
    /// length one).
    pub axis_mean_gap: [f64; 3],
    /// Geometric mean gap, `2^(mean log2 gap)`.
    pub geo_mean_gap: f64,
    pub pairs: usize,
}

pub fn locality_score(order: &ScanOrder) -> LocalityScore {
    let dims = order.dims();
    let pos = order.positions();
    let extent = dims.as_array();
    let stride = [dims.h * dims.w, dims.w, 1];
    let mut sum = [0u64; 3];
    let mut count = [0usize; 3];
    let mut log_sum = 0.0f64;
    let mut max_gap = 0usize;
    for v in 0..dims.len() {
        let c = dims.coords(v);
        for axis in 0..3 {
            if c[axis] + 1 < extent[axis] {
                let gap = pos[v].abs_diff(pos[v + stride[axis]]);
                sum[axis] += gap as u64;
                count[axis] += 1;
                log_sum += (gap as f64).log2();
                max_gap = max_gap.max(gap);
            }
        }
    }
    let pairs: usize = count.iter().sum();
    let total: u64 = sum.iter().sum();
    let axis_mean_gap = [0, 1, 2].map(|a| if count[a] == 0 { 0.0 } else { sum[a] as f64 / count[a] as f64 });
    let (mean_gap, geo_mean_gap) =
        if pairs == 0 { (0.0, 0.0) } else { (total as f64 / pairs as f64, (log_sum / pairs as f64).exp2()) };
    LocalityScore { mean_gap, max_gap, axis_mean_gap, geo_mean_gap, pairs }
}
