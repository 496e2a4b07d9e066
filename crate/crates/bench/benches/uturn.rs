use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::seq::index;
use std::hint::black_box;
use uturn_bench::bench_grammar;
use uturn_core::chain::{exact_kernel, uturn_step};
use uturn_core::inference::{upward_pass, MaskedLeaves};
use uturn_core::rng::{stream_rng, Stream};
use uturn_core::{Grammar, GrammarParams};

fn upward(c: &mut Criterion) {
    let mut group = c.benchmark_group("upward_pass");
    for depth in [4, 6, 8] {
        let g = bench_grammar(depth, 4);
        let mut rng = stream_rng(0, Stream::Data, &[]);
        let x = g.generate(&mut rng);
        let d = g.leaf_count();
        let masked = MaskedLeaves::from_sentence(x.leaves(), &index::sample(&mut rng, d, d / 4).into_vec());
        group.bench_with_input(BenchmarkId::from_parameter(d), &masked, |b, masked| {
            b.iter(|| upward_pass(&g, black_box(masked)).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("uturn_step");
    let g = bench_grammar(6, 4);
    for k in [1, 8, 64] {
        let mut rng = stream_rng(1, Stream::Chain, &[]);
        let mut x = g.generate(&mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| {
                x = uturn_step(&g, &x, k, &mut rng);
            })
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    let g = Grammar::sample(&GrammarParams::new(4, 2, 2, 2, 0)).unwrap();
    c.bench_function("exact_kernel_32x32_k2", |b| b.iter(|| exact_kernel(&g, black_box(2), 64).unwrap()));
}

criterion_group!(benches, upward, step, kernel);
criterion_main!(benches);
