//! Workloads shared by the engine benchmarks.

use tnet::{Const, Fact, Instance};

pub const CLOSURE: &str = "\
@in
decl E/2.
@out
decl T/2.

T(u, v) <- E(u, v).
T(u, w) <- T(u, v), E(v, w).
";

/// A directed path `0 -> 1 -> ... -> n`.
pub fn path(n: i64) -> Instance {
    Instance::from_facts((0..n).map(|i| Fact::new("E", vec![Const::Int(i), Const::Int(i + 1)])))
}

/// `R(k, g)` and `T(g, k + n)` with `groups` distinct join values g.
pub fn join_input(n: i64, groups: i64) -> Instance {
    let mut i = Instance::new();
    for k in 0..n {
        i.insert_fact(Fact::new("R", vec![Const::Int(k), Const::Int(k % groups)]));
        i.insert_fact(Fact::new("T", vec![Const::Int(k % groups), Const::Int(k + n)]));
    }
    i
}
