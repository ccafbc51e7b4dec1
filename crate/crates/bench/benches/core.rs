use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use enhope::knn::knn_classify;
use enhope::objective::{exemplar_loss, pairwise_loss, ExemplarLossState, Kernel, PairwiseLossConfig};
use enhope_bench::{digits_like, high_order, kmeans_exemplars};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let ds = digits_like(1000, 1);
    let mut group = c.benchmark_group("forward_1000x784");
    for (f, m) in [(200, 100), (800, 400)] {
        let model = high_order(784, f, m);
        group.bench_with_input(BenchmarkId::from_parameter(format!("F{f}_m{m}")), &model, |b, model| {
            b.iter(|| model.forward(black_box(ds.features())).unwrap())
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let ds = digits_like(1000, 2);
    let model = high_order(784, 200, 100);
    let state = ExemplarLossState::learned(kmeans_exemplars(&ds, 20));
    c.bench_function("exemplar_loss_grad_n1000_z20", |b| {
        b.iter(|| exemplar_loss(&model, black_box(ds.features()), ds.labels(), &state).unwrap())
    });
    let cfg = PairwiseLossConfig { kernel: Kernel::StudentT };
    c.bench_function("pairwise_loss_grad_n1000", |b| {
        b.iter(|| pairwise_loss(&model, black_box(ds.features()), ds.labels(), cfg).unwrap())
    });
}

fn knn(c: &mut Criterion) {
    let train = digits_like(5000, 3);
    let test = digits_like(200, 4);
    let model = high_order(784, 200, 100);
    let ex = kmeans_exemplars(&train, 20);
    let mut group = c.benchmark_group("knn_200_queries");
    group.sample_size(10);
    group.bench_function("full_5000x784", |b| {
        b.iter(|| knn_classify(train.features(), train.labels(), black_box(test.features()), 1).unwrap())
    });
    group.bench_function("exemplar_z20_with_embedding", |b| {
        b.iter(|| {
            let y = model.forward(black_box(test.features())).unwrap();
            let ye = model.forward(ex.vectors.view()).unwrap();
            knn_classify(ye.view(), &ex.labels, y.view(), 5).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, forward, losses, knn);
criterion_main!(benches);
