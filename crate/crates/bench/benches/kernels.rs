use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metrovuln_bench::{distribution, random_graph, regression_rows};
use metrovuln_core::effects::{dist_euclidean, dist_hellinger, dist_kl};
use metrovuln_core::imputation::fit_forest;
use metrovuln_core::{ForestParams, NetworkGraph};

fn distances(c: &mut Criterion) {
    let mut g = c.benchmark_group("distance");
    for k in [20, 270] {
        let (p, q) = (distribution(k, 1), distribution(k, 2));
        g.bench_with_input(BenchmarkId::new("euclidean", k), &k, |b, _| b.iter(|| dist_euclidean(&p, &q).unwrap()));
        g.bench_with_input(BenchmarkId::new("hellinger", k), &k, |b, _| b.iter(|| dist_hellinger(&p, &q).unwrap()));
        g.bench_with_input(BenchmarkId::new("kl", k), &k, |b, _| b.iter(|| dist_kl(&p, &q).unwrap()));
    }
    g.finish();
}

fn shortest_paths(c: &mut Criterion) {
    let mut g = c.benchmark_group("all_pairs_shortest_path");
    for n in [20, 270] {
        let (ids, edges) = random_graph(n, n / 3, 7);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| NetworkGraph::new(black_box(&ids), black_box(&edges)).unwrap())
        });
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let (x, y) = regression_rows(270, 30, 3);
    let mut g = c.benchmark_group("forest_fit_270x30");
    g.sample_size(10);
    for trees in [100, 500] {
        let params = ForestParams { trees, mtry: 7, min_node: 2, seed: 1, bootstrap: true };
        g.bench_with_input(BenchmarkId::from_parameter(trees), &trees, |b, _| {
            b.iter(|| fit_forest(&x, &y, &params).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, distances, shortest_paths, forest);
criterion_main!(benches);
