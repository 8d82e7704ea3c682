use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bbmlab::analytic::{ballot_density, stay_below_prob};
use bbmlab::estimators::{lambda_expectation, tail_curve, LambdaOptions};
use bbmlab::rng::{replica_rng, Stream};
use bbmlab::sim::{sample_max, Workspace};
use bbmlab::{BallotParams, DeviationQuery, GridSpec, Replicas, SimConfig, SkeletonTree};

fn sampler(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let mut group = c.benchmark_group("sample_max");
    group.sample_size(20);
    for t in [4.0, 6.0, 8.0] {
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            let mut ws = Workspace::default();
            let mut i = 0u64;
            b.iter(|| {
                i += 1;
                sample_max(t, &cfg, &mut replica_rng(1, Stream::Tree, i), &mut ws).unwrap()
            })
        });
    }
    group.finish();

    c.bench_function("skeleton_tree_t4", |b| {
        let mut i = 0u64;
        b.iter(|| {
            i += 1;
            SkeletonTree::simulate(4.0, &cfg, &mut replica_rng(1, Stream::Tree, i)).unwrap()
        })
    });
}

fn closed_forms(c: &mut Criterion) {
    let p = BallotParams::new(3.0, 2.0, 10.0).unwrap();
    c.bench_function("ballot_density", |b| b.iter(|| ballot_density(black_box(&p), black_box(-1.5))));
    c.bench_function("stay_below_prob", |b| b.iter(|| stay_below_prob(black_box(&p))));
}

fn hybrid(c: &mut Criterion) {
    let ell = 4.0;
    let curve = tail_curve(ell, &Replicas::new(7, 5_000), &GridSpec::for_ell(ell), &SimConfig::default()).unwrap();
    let q = DeviationQuery::new(10.0, 3.0, ell).unwrap();
    let opts = LambdaOptions::default();
    c.bench_function("lambda_expectation", |b| b.iter(|| lambda_expectation(black_box(&q), &curve, &opts).unwrap()));
}

criterion_group!(benches, sampler, closed_forms, hybrid);
criterion_main!(benches);
