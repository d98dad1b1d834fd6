//! Analytic multiply-add counts for the correlation modules.

use super::partition::PartitionSpec;

/// Multiply-adds of one spatial correlation over `n` pixels and `c` channels:
/// three `c→c/2` projections, the `n×n` affinity, the weighted sum, and the
/// `c/2→c` output projection.
pub fn spatial_correlation_macs(n: u64, c: u64) -> u64 {
    let cp = c / 2;
    3 * n * c * cp + n * n * cp + n * n * cp + n * cp * c
}

/// Full-map global correlation: one spatial correlation over all `H·W`
/// pixels of `[f_s; f_q]` followed by the `α` squeeze.
pub fn naive_gc_macs(h: usize, w: usize, c_q: usize, c_s: usize) -> u64 {
    let n = (h * w) as u64;
    let c = (c_q + c_s) as u64;
    spatial_correlation_macs(n, c) + n * c * c_q as u64
}

/// Long-range stage over every strided group, the `α` squeeze, and the
/// short-range stage over every block, all on the padded map.
pub fn efficient_gc_macs(h: usize, w: usize, c_q: usize, c_s: usize, p_h: usize, p_w: usize) -> u64 {
    let spec = PartitionSpec::new(h, w, p_h, p_w).expect("positive partition");
    let c = (c_q + c_s) as u64;
    let n_pad = spec.padded_len() as u64;
    let group_n = (spec.p_h * spec.p_w) as u64;
    let block_n = (spec.q_h * spec.q_w) as u64;
    let long = spec.n_long_groups() as u64 * spatial_correlation_macs(group_n, c);
    let squeeze = n_pad * c * c_q as u64;
    let short = spec.n_short_blocks() as u64 * spatial_correlation_macs(block_n, c_q as u64);
    long + squeeze + short
}

/// Partition factor `⌈√H⌉` that balances group and block sizes.
pub fn balanced_factor(h: usize) -> usize {
    let mut p = (h as f64).sqrt().floor() as usize;
    while p * p < h {
        p += 1;
    }
    p.max(1)
}
