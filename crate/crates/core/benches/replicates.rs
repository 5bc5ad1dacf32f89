use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppthin::par;
use ppthin::simulate::sample_poisson;
use ppthin::thinning::{realize_retention, thin, RetentionField};
use ppthin::{Norm, RngStream, Window};
use rand_chacha::ChaCha8Rng;

/// One Matérn I thinning of a Poisson pattern; returns the retained count.
fn matern_replicate<'a>(window: &'a Window, field: &'a RetentionField) -> impl Fn(usize, &mut ChaCha8Rng) -> usize + Sync + Send + 'a {
    move |_, rng| {
        let xi = sample_poisson(window, 200.0, rng).unwrap();
        let probs = realize_retention(field, &xi, window, rng).unwrap();
        thin(&xi, &probs, rng).unwrap().retained.len()
    }
}

fn bench(c: &mut Criterion) {
    let window = Window::unit(2).haloed(0.05).unwrap();
    let field = RetentionField::MaternI { r: 0.05, q: 1.0, norm: Norm::Euclidean };
    let stream = RngStream::new(1, 0);
    let mut group = c.benchmark_group("matern_replicates");
    group.sample_size(10);
    for n in [1_000usize, 10_000] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| par::replicates_sequential(n, stream, matern_replicate(&window, &field)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| par::replicates_parallel(n, stream, matern_replicate(&window, &field)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
