use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tnet::network::{run, Config};
use tnet::rewriter::{rewrite_query, Query, Target};
use tnet::strategy::CommKind;
use tnet_bench::{join_input, path, CLOSURE};

const JOIN: &str = "\
@in
decl R/2.
decl T/2.
@out
decl Q/3.

Q(u, v, w) <- R(u, v), T(v, w).
";

fn fixpoint(c: &mut Criterion) {
    let q = Query::parse(CLOSURE).unwrap();
    let mut g = c.benchmark_group("closure_fixpoint");
    for n in [32, 64] {
        let edb = path(n);
        g.bench_with_input(BenchmarkId::new("semi_naive", n), &edb, |b, edb| {
            b.iter(|| tnet::datalog::evaluate(&q.program, edb).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("naive", n), &edb, |b, edb| {
            b.iter(|| tnet::datalog::evaluate_naive(&q.program, edb).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("network_run");
    g.sample_size(20);
    let join = Query::parse(JOIN).unwrap();
    let closure = Query::parse(CLOSURE).unwrap();
    for (name, q, input) in [("join", &join, join_input(64, 8)), ("closure", &closure, path(16))] {
        for (target, comm) in [
            (Target::Broadcast, CommKind::Broadcast),
            (Target::Hashing, CommKind::Hashing),
        ] {
            let spec = rewrite_query(q, target).unwrap();
            let mut cfg = Config::new(4);
            cfg.comm = comm;
            g.bench_function(BenchmarkId::new(name, format!("{target:?}")), |b| {
                b.iter(|| run(&spec, &cfg, &input).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, fixpoint, network);
criterion_main!(benches);
