use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dnn_bench::simulation_one;
use dnn_core::weights::{bridge_k_majority, bridge_k_weighted, uniform_k_weights};
use dnn_core::{Aggregation, DnnModel, SeededRng};

fn predict(c: &mut Criterion) {
    let n = 27_000;
    let d = 4;
    let k = (n as f64).powf(0.7).ceil() as usize;
    let (train, test) = simulation_one(n, 200, d);
    let mut group = c.benchmark_group("predict_batch");
    group.sample_size(10);
    for s in [1usize, 11, 52, 280] {
        for mode in [Aggregation::Majority, Aggregation::Weighted] {
            let local = match mode {
                Aggregation::Majority => bridge_k_majority(k, s, d),
                Aggregation::Weighted => bridge_k_weighted(k, s),
            };
            let w = uniform_k_weights(n / s, local.min(n / s)).unwrap();
            let (model, _) =
                DnnModel::fit_random(&train, s, w, mode, &mut SeededRng::new(3, 0)).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), s), &test, |b, test| {
                b.iter(|| std::hint::black_box(model.predict_dataset(test).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, predict);
criterion_main!(benches);
