//! Shared fixtures for the benchmarks.

use fewseg::correlation::flops::balanced_factor;
use fewseg::correlation::{GcParams, PartitionSpec};
use fewseg::network::{Network, NetworkSpec};
use fewseg::{BinaryMask, ModelParams};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GcFixture {
    pub f_q: Array3<f32>,
    pub f_s: Array3<f32>,
    pub params: GcParams<f32>,
    pub spec: PartitionSpec,
}

/// Random `h×h×c` query/support maps with `P = ⌈√h⌉`.
pub fn gc_fixture(h: usize, c: usize) -> GcFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(h as u64);
    let p = balanced_factor(h);
    let mut map = || Array3::from_shape_fn((h, h, c), |_| rng.random_range(-1.0f32..1.0));
    let (f_q, f_s) = (map(), map());
    let params = GcParams::random(c, c, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).expect("even channels");
    GcFixture {
        f_q,
        f_s,
        params,
        spec: PartitionSpec::new(h, h, p, p).expect("positive factors"),
    }
}

pub struct NetFixture {
    pub network: Network,
    pub params: ModelParams<f32>,
    pub support: Array2<f32>,
    pub mask: BinaryMask,
    pub query: Array2<f32>,
}

/// Default-width network on `size×size` inputs.
pub fn net_fixture(size: usize, gc_scales: &[usize]) -> NetFixture {
    let network = Network::new(NetworkSpec {
        channel_widths: vec![16, 32, 64, 128],
        gc_scales: gc_scales.iter().copied().collect(),
        partition_factors: (4, 4),
    })
    .expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = network.init_params(&mut rng);
    let support = Array2::from_shape_fn((size, size), |_| rng.random_range(0.0f32..1.0));
    let query = Array2::from_shape_fn((size, size), |_| rng.random_range(0.0f32..1.0));
    let mask = BinaryMask::new(
        Array2::from_shape_fn((size, size), |(y, x)| u8::from(y > size / 3 && x < size / 2)),
        1,
    )
    .expect("0/1 mask");
    NetFixture {
        network,
        params,
        support,
        mask,
        query,
    }
}
