use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use recourse_bench::credit;
use recourse_core::recourse::{
    generate_continuous, BinaryTarget, CandidateIndex, ContinuousConfig, RecourseConstraints, SearchDistance,
};
use recourse_core::LofModel;

fn closed_form(c: &mut Criterion) {
    let f = credit(1000, &[], 0.05);
    let lifted: Vec<_> = f.queries.iter().map(|x| f.model.lift(x).unwrap()).collect();
    c.bench_function("worst_case/linear", |b| {
        b.iter(|| {
            for x in &lifted {
                black_box(f.ell.worst_case(x).unwrap());
            }
        })
    });
    c.bench_function("ellipsoid_build/linear", |b| {
        b.iter(|| black_box(recourse_core::RashomonEllipsoid::build(&f.model, &f.ds, 0.01).unwrap()))
    });
}

fn data_supported(c: &mut Criterion) {
    let f = credit(1000, &[], 0.05);
    let target = BinaryTarget::new(&f.model, &f.ell, f.model.threshold()).unwrap();
    let cons = RecourseConstraints::free(&f.ds.specs);
    c.bench_function("data_supported/index", |b| {
        b.iter(|| black_box(CandidateIndex::build(&target, &f.ds.x).unwrap()))
    });
    let index = CandidateIndex::build(&target, &f.ds.x).unwrap();
    c.bench_function("data_supported/query", |b| {
        b.iter(|| {
            for x in &f.queries {
                let _ = black_box(index.counterfactual(&target, x, &cons, SearchDistance::L2));
            }
        })
    });
}

fn continuous(c: &mut Criterion) {
    let cfg = ContinuousConfig::default();
    for (name, hidden) in [("continuous/linear", vec![]), ("continuous/mlp", vec![16])] {
        let f = credit(600, &hidden, 0.02);
        let target = BinaryTarget::new(&f.model, &f.ell, f.model.threshold()).unwrap();
        let cons = RecourseConstraints::free(&f.ds.specs);
        let x0 = f.queries[0].clone();
        c.bench_function(name, |b| {
            b.iter_batched(
                || x0.clone(),
                |x| black_box(generate_continuous(&target, &x, &cfg, &cons).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
}

fn lof(c: &mut Criterion) {
    let f = credit(1000, &[], 0.05);
    c.bench_function("lof/fit", |b| {
        b.iter(|| black_box(LofModel::fit(f.ds.x.clone(), 20).unwrap()))
    });
    let model = LofModel::fit(f.ds.x.clone(), 20).unwrap();
    c.bench_function("lof/score", |b| {
        b.iter(|| {
            for x in &f.queries {
                black_box(model.score(x).unwrap());
            }
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = closed_form, data_supported, continuous, lof
}
criterion_main!(benches);
