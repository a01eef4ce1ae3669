use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::{DatalogError, Literal, Program};

/// Dependency graph over derived relations. Edge weight is `true` when the
/// dependency goes through negation or a COUNT/SUM head.
pub(crate) fn dependency_graph(program: &Program) -> (DiGraph<String, bool>, BTreeMap<String, NodeIndex>) {
    let mut g = DiGraph::new();
    let mut idx = BTreeMap::new();
    for rel in program.derived() {
        let n = g.add_node(rel.clone());
        idx.insert(rel, n);
    }
    for rule in &program.rules {
        let stratified = rule.aggregate().is_some_and(|k| k.is_stratified());
        let head = idx[&rule.head.rel];
        for lit in &rule.body {
            let (atom, negated) = match lit {
                Literal::Pos(a) => (a, false),
                Literal::Neg(a) => (a, true),
                Literal::Cmp(..) => continue,
            };
            if let Some(&src) = idx.get(&atom.rel) {
                let negative = negated || stratified;
                match g.find_edge(src, head) {
                    Some(e) if negative => g[e] = true,
                    Some(_) => {}
                    None => {
                        g.add_edge(src, head, negative);
                    }
                }
            }
        }
    }
    (g, idx)
}

/// Orders the derived relations into strata, one per strongly connected
/// component, lower strata first. Ties between independent components are
/// broken by their smallest relation name.
pub fn stratify(program: &Program) -> Result<Vec<BTreeSet<String>>, DatalogError> {
    let (g, _) = dependency_graph(program);
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; g.node_count()];
    for (c, members) in sccs.iter().enumerate() {
        for &n in members {
            comp[n.index()] = c;
        }
    }
    for e in g.edge_indices() {
        let (a, b) = g.edge_endpoints(e).unwrap();
        if g[e] && comp[a.index()] == comp[b.index()] {
            return Err(DatalogError::NotStratifiable {
                cycle: cycle_through(&g, a, b, &comp),
            });
        }
    }
    let names: Vec<BTreeSet<String>> = sccs.iter().map(|m| m.iter().map(|&n| g[n].clone()).collect()).collect();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); sccs.len()];
    let mut indeg = vec![0usize; sccs.len()];
    for e in g.edge_indices() {
        let (a, b) = g.edge_endpoints(e).unwrap();
        let (ca, cb) = (comp[a.index()], comp[b.index()]);
        if ca != cb && succ[ca].insert(cb) {
            indeg[cb] += 1;
        }
    }
    let mut ready: BTreeSet<(String, usize)> = (0..sccs.len())
        .filter(|&c| indeg[c] == 0)
        .map(|c| (names[c].first().unwrap().clone(), c))
        .collect();
    let mut order = Vec::with_capacity(sccs.len());
    while let Some(first) = ready.pop_first() {
        let c = first.1;
        order.push(names[c].clone());
        for &d in &succ[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert((names[d].first().unwrap().clone(), d));
            }
        }
    }
    Ok(order)
}

/// A cycle `a -> b -> ... -> a` inside one component.
fn cycle_through(g: &DiGraph<String, bool>, a: NodeIndex, b: NodeIndex, comp: &[usize]) -> Vec<String> {
    let mut prev: BTreeMap<NodeIndex, NodeIndex> = BTreeMap::new();
    let mut queue = VecDeque::from([b]);
    let mut seen = BTreeSet::from([b]);
    while let Some(n) = queue.pop_front() {
        if n == a {
            break;
        }
        for m in g.neighbors(n) {
            if comp[m.index()] == comp[a.index()] && seen.insert(m) {
                prev.insert(m, n);
                queue.push_back(m);
            }
        }
    }
    let mut path = vec![a];
    let mut cur = a;
    while cur != b {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    std::iter::once(a).chain(path).map(|n| g[n].clone()).collect()
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::datalog::parse_program;

    #[test]
    fn transitive_closure_is_one_stratum() {
        let p = parse_program("decl E/2. decl T/2. T(x, y) <- E(x, y). T(x, z) <- T(x, y), E(y, z).").unwrap();
        let s = stratify(&p).unwrap();
        assert_eq!(s, vec![BTreeSet::from(["T".to_string()])]);
    }

    #[test]
    fn negated_relation_comes_first() {
        let p = parse_program(
            "decl E/2. decl CS/1. decl Q/2.
             CS(x) <- E(x, y), E(y, x).
             Q(x, y) <- E(x, y), not CS(x).",
        )
        .unwrap();
        let s = stratify(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].contains("CS"));
        assert!(s[1].contains("Q"));
    }

    #[test]
    fn self_negation_reports_cycle() {
        let p = parse_program("decl P/0. P() <- not P().").unwrap();
        match stratify(&p) {
            Err(DatalogError::NotStratifiable { cycle }) => assert_eq!(cycle, vec!["P", "P"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_relation_cycle_is_reported() {
        let p = parse_program("decl A/1. decl B/1. decl E/1. A(x) <- E(x), not B(x). B(x) <- A(x).").unwrap();
        match stratify(&p) {
            Err(DatalogError::NotStratifiable { cycle }) => {
                assert_eq!(cycle.first(), cycle.last());
                assert_eq!(cycle.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
