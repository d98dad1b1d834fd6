use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fewseg::correlation::gc::gc_forward;
use fewseg::correlation::spatial::sc_forward;
use fewseg::correlation::GcStages;
use fewseg::layers::concat_channels;
use fewseg::tensor::as_matrix;
use fewseg_bench::gc_fixture;
use std::hint::black_box;

fn gc(c: &mut Criterion) {
    let mut group = c.benchmark_group("gc");
    group.sample_size(10);
    for h in [16, 32, 64] {
        let fx = gc_fixture(h, 16);
        group.bench_with_input(BenchmarkId::new("naive", h), &fx, |b, fx| {
            b.iter(|| {
                let fc = concat_channels(&fx.f_s, &fx.f_q);
                let (out, _) = sc_forward(as_matrix(&fc), &fx.params.long);
                black_box(out.dot(&fx.params.alpha))
            })
        });
        group.bench_with_input(BenchmarkId::new("decomposed", h), &fx, |b, fx| {
            b.iter(|| black_box(gc_forward(&fx.f_q, &fx.f_s, &fx.spec, &fx.params, GcStages::Full).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, gc);
criterion_main!(benches);
