//! Random small Datalog programs and instances shared by test targets.
#![allow(dead_code)]

use proptest::prelude::*;
use tnet::datalog::{parse_program, CompiledProgram};
use tnet::{Const, Fact, Instance, Program};

const DECLS: &str = "decl E/2.\ndecl F/1.\ndecl A/2.\ndecl B/1.\ndecl C/2.\n";
const RELS: [(&str, usize); 5] = [("E", 2), ("F", 1), ("A", 2), ("B", 1), ("C", 2)];
const HEADS: [(&str, usize); 3] = [("A", 2), ("B", 1), ("C", 2)];
const VARS: [&str; 3] = ["x", "y", "z"];

#[derive(Clone, Debug)]
pub struct RuleShape {
    head: usize,
    head_vars: Vec<usize>,
    body: Vec<(usize, Vec<usize>)>,
    negated: Option<(usize, Vec<usize>)>,
    count: bool,
}

fn atom(rel: usize, args: &[usize]) -> (usize, Vec<usize>) {
    (rel, args.to_vec())
}

pub fn rule_shape() -> impl Strategy<Value = RuleShape> {
    // Input relations are drawn more often so that most programs derive facts.
    let rel = prop::sample::select(vec![0usize, 0, 0, 1, 2, 3, 4]);
    let body = prop::collection::vec((rel, prop::collection::vec(0..VARS.len(), 2)), 1..=3);
    (
        0..HEADS.len(),
        prop::collection::vec(any::<prop::sample::Index>(), 2),
        body,
        any::<Option<(usize, [prop::sample::Index; 2])>>(),
        prop::bool::weighted(0.15),
    )
        .prop_map(|(head, picks, body, neg, count)| {
            let body: Vec<_> = body.into_iter().map(|(r, vs)| atom(r, &vs[..RELS[r].1])).collect();
            let bound: Vec<usize> = {
                let mut v: Vec<usize> = body.iter().flat_map(|(_, a)| a.iter().copied()).collect();
                v.sort();
                v.dedup();
                v
            };
            let head_vars = picks.iter().map(|i| bound[i.index(bound.len())]).collect();
            let negated = neg.map(|(r, idx)| {
                let r = r % RELS.len();
                let args: Vec<usize> = idx.iter().map(|i| bound[i.index(bound.len())]).collect();
                atom(r, &args[..RELS[r].1])
            });
            RuleShape {
                head,
                head_vars,
                body,
                negated,
                count,
            }
        })
}

fn render_atom(rel: usize, args: &[usize]) -> String {
    let vs: Vec<&str> = args.iter().map(|&v| VARS[v]).collect();
    format!("{}({})", RELS[rel].0, vs.join(", "))
}

fn render(rules: &[RuleShape], negation: bool, aggregates: bool) -> String {
    let mut text = DECLS.to_string();
    for r in rules {
        let (name, arity) = HEADS[r.head];
        let mut args: Vec<String> = r.head_vars[..arity].iter().map(|&v| VARS[v].to_string()).collect();
        if aggregates && r.count {
            let last = args.pop().unwrap();
            args.push(format!("count<{last}>"));
        }
        let mut body: Vec<String> = r.body.iter().map(|(rel, a)| render_atom(*rel, a)).collect();
        if negation {
            if let Some((rel, a)) = &r.negated {
                body.push(format!("not {}", render_atom(*rel, a)));
            }
        }
        text.push_str(&format!("{}({}) <- {}.\n", name, args.join(", "), body.join(", ")));
    }
    text
}

pub fn sym(i: u8) -> Const {
    Const::sym(&format!("c{i}"))
}

pub fn instance() -> impl Strategy<Value = Instance> {
    let e = prop::collection::vec((0u8..6, 0u8..6), 0..20);
    let f = prop::collection::vec(0u8..6, 0..10);
    (e, f).prop_map(|(e, f)| {
        let mut i = Instance::new();
        for (a, b) in e {
            i.insert_fact(Fact::new("E", vec![sym(a), sym(b)]));
        }
        for a in f {
            i.insert_fact(Fact::new("F", vec![sym(a)]));
        }
        i
    })
}

pub fn program(rules: &[RuleShape], negation: bool, aggregates: bool) -> Option<Program> {
    let p = parse_program(&render(rules, negation, aggregates)).ok()?;
    CompiledProgram::new(p.clone()).ok().map(|_| p)
}

pub fn rules() -> impl Strategy<Value = Vec<RuleShape>> {
    prop::collection::vec(rule_shape(), 1..=6)
}

/// A stratifiable program with negation and aggregates each switched on or off.
pub fn any_program() -> impl Strategy<Value = Program> {
    (rules(), any::<bool>(), any::<bool>()).prop_filter_map("not stratifiable", |(r, neg, agg)| program(&r, neg, agg))
}

pub fn permutation() -> impl Strategy<Value = Vec<u8>> {
    Just((0u8..6).collect::<Vec<_>>()).prop_shuffle()
}
