//! Property tests for runs, routing, rewriting and causality graphs over
//! the bundled corpus specs.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use tnet::causality::{build_graph, EdgeKind};
use tnet::harness::{corpus, corpus_file, spec_inputs, CorpusEntry};
use tnet::network::{check_delivery_windows, check_reliability, run, Config, Semantics};
use tnet::rewriter::{inject_snapshot_fifo, inject_snapshot_generic, rewrite_query, Query, Target};
use tnet::strategy::{deliver_set, hash_address, CommKind, HashFamily, Partition, Router};
use tnet::transducer::{Section, Transducer};
use tnet::{Const, Fact, Instance, Key, NodeId, TransducerSpec};

fn entries() -> Vec<CorpusEntry> {
    corpus()
        .unwrap()
        .into_iter()
        .filter(|e| e.class.to_string() != "unstratifiable")
        .collect()
}

fn constant(i: u8) -> Const {
    Const::sym(["a", "b", "c", "d", "e"][i as usize % 5])
}

/// Facts over the given relations with constants a..e.
fn facts_over(schema: BTreeMap<String, usize>) -> impl Strategy<Value = Instance> {
    let rels: Vec<(String, usize)> = schema.into_iter().collect();
    prop::collection::vec((any::<prop::sample::Index>(), prop::collection::vec(0u8..5, 3)), 0..10).prop_map(
        move |raw| {
            let mut i = Instance::new();
            if rels.is_empty() {
                return i;
            }
            for (idx, cs) in raw {
                let (rel, arity) = &rels[idx.index(rels.len())];
                i.insert_fact(Fact::new(rel, cs[..*arity].iter().map(|&c| constant(c)).collect()));
            }
            i
        },
    )
}

fn semantics() -> impl Strategy<Value = Semantics> {
    prop_oneof![
        Just(Semantics::Rsfd),
        (0u32..3, any::<bool>()).prop_map(|(var, fifo)| Semantics::Rsbv { var, fifo }),
        (0u32..4).prop_map(|max_delay| Semantics::Rsync { max_delay }),
    ]
}

fn partition() -> impl Strategy<Value = Partition> {
    prop_oneof![
        Just(Partition::ReplicateAll),
        Just(Partition::SingleNode(1)),
        (0u64..8).prop_map(Partition::HashSplit)
    ]
}

fn config(comm: CommKind) -> impl Strategy<Value = Config> {
    (1u32..=4, partition(), 0u64..8, semantics(), 0u64..1000).prop_map(move |(n, p, h, sem, seed)| {
        Config::new(n)
            .with_partition(p)
            .with_family(HashFamily::seeded(h))
            .with_comm(comm)
            .with_semantics(sem)
            .with_seed(seed)
    })
}

/// A runnable corpus spec with a matching random input and configuration.
fn scenario() -> impl Strategy<Value = (String, TransducerSpec, Instance, Config)> {
    let all = entries();
    (0..all.len()).prop_flat_map(move |i| {
        let e = &all[i];
        let spec = e.runnable().unwrap();
        let input = facts_over(spec_inputs(&spec));
        (Just(e.name.clone()), Just(spec), input, config(e.comm))
    })
}

fn monotone_scenario() -> impl Strategy<Value = (String, TransducerSpec, Instance, Config)> {
    scenario().prop_filter("monotone specs only", |(_, s, _, _)| s.flags().monotone)
}

fn node_set(n: u32) -> BTreeSet<NodeId> {
    (1..=n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn fixed_delivery_runs_are_reproducible((_, spec, input, cfg) in scenario()) {
        let cfg = cfg.with_semantics(Semantics::Rsfd);
        prop_assert_eq!(run(&spec, &cfg, &input).unwrap().to_string(), run(&spec, &cfg, &input).unwrap().to_string());
    }

    #[test]
    fn firing_order_does_not_change_fixed_delivery_runs(
        (_, spec, input, cfg) in scenario(),
        shuffle in Just((1..=4u32).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let cfg = cfg.with_semantics(Semantics::Rsfd);
        let mut permuted = cfg.clone();
        permuted.firing_order = Some(shuffle.into_iter().filter(|n| cfg.nodes.contains(n)).collect());
        prop_assert_eq!(run(&spec, &cfg, &input).unwrap().to_string(), run(&spec, &permuted, &input).unwrap().to_string());
    }

    #[test]
    fn every_trace_matches_deliveries_to_emissions((name, spec, input, cfg) in scenario()) {
        let t = run(&spec, &cfg, &input).unwrap();
        prop_assert!(check_reliability(&t).is_ok(), "{name}: {:?}", check_reliability(&t));
        prop_assert!(check_delivery_windows(&t).is_ok(), "{name}: {:?}", check_delivery_windows(&t));
        if cfg.semantics == Semantics::Rsfd {
            prop_assert!(t.deliveries().all(|d| d.round == d.emit_round + 1));
        }
        prop_assert!(t.rounds.len() <= cfg.max_rounds as usize);
        if let Some(q) = t.quiescence {
            prop_assert!(q <= t.last_round());
        }
    }

    #[test]
    fn outputs_grow_and_environment_keeps_every_emission((_, spec, input, cfg) in scenario()) {
        let t = run(&spec, &cfg, &input).unwrap();
        let inflationary = spec.flags().inflationary;
        let mut emitted = Instance::new();
        for pair in t.rounds.windows(2) {
            for (before, after) in pair[0].nodes.iter().zip(&pair[1].nodes) {
                prop_assert_eq!(before.node, after.node);
                prop_assert!(before.out.is_subset(&after.out));
                if inflationary {
                    prop_assert!(before.mem.is_subset(&after.mem));
                }
            }
        }
        for r in &t.rounds {
            for n in &r.nodes {
                for f in n.emit.facts() {
                    emitted.insert(&format!("{}'", f.rel), f.args);
                }
            }
            prop_assert!(emitted.is_subset(&r.env));
        }
    }

    #[test]
    fn monotone_specs_ignore_delivery_delays(
        (name, spec, input, cfg) in monotone_scenario(),
        var in 1u32..3,
        fifo in any::<bool>(),
    ) {
        let fixed = run(&spec, &cfg.clone().with_semantics(Semantics::Rsfd), &input).unwrap();
        let delayed = run(&spec, &cfg.with_semantics(Semantics::Rsbv { var, fifo }), &input).unwrap();
        prop_assert_eq!(fixed.output(), delayed.output(), "{} [{}]", name, delayed.config);
    }

    #[test]
    fn causality_graph_embeds_happen_before((name, spec, input, cfg) in scenario()) {
        let t = run(&spec, &cfg, &input).unwrap();
        let g = build_graph(&t, &spec).unwrap();
        let hb = g.happen_before();
        let direct: Vec<_> = g.edges().iter().filter(|e| e.kind != EdgeKind::IndirectNull).cloned().collect();
        prop_assert_eq!(hb.edges(), &direct[..]);
        let mut messages: Vec<(NodeId, i64, NodeId, i64, String)> = g
            .edges()
            .iter()
            .filter(|e| e.kind == EdgeKind::DirectMessage)
            .map(|e| (e.from.node, e.from.round, e.to.node, e.to.round, e.relation.clone().unwrap()))
            .collect();
        let mut deliveries: Vec<_> = t.deliveries().map(|d| (d.src, d.emit_round, d.dst, d.round, d.fact.rel.clone())).collect();
        messages.sort();
        deliveries.sort();
        prop_assert_eq!(messages, deliveries, "{}", name);
        for e in g.edges() {
            match e.kind {
                EdgeKind::DirectLocal => prop_assert!(e.from.node == e.to.node && e.to.round == e.from.round + 1),
                _ => prop_assert!(e.to.round > e.from.round),
            }
        }
        let closure = g.closure();
        for &(a, b) in &closure {
            for c in g.reachable(b) {
                prop_assert!(closure.contains(&(a, c)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn hash_addresses_are_deterministic_and_colocate(
        seed in 0u64..64,
        n in 1u32..=6,
        k in 1usize..=2,
        prefix in prop::collection::vec(0u8..5, 2),
        left in 0u8..5,
        right in 0u8..5,
    ) {
        let nodes = node_set(n);
        let family = HashFamily::seeded(seed);
        let mut a = prefix.clone();
        a.push(left);
        let mut b = prefix;
        b.push(right);
        let fa = Fact::new("R", a.iter().map(|&c| constant(c)).collect());
        let fb = Fact::new("R", b.iter().map(|&c| constant(c)).collect());
        let ha = hash_address(&fa, Key::Finite(k), &family, &nodes).unwrap();
        prop_assert_eq!(&ha, &hash_address(&fa, Key::Finite(k), &family.clone(), &nodes).unwrap());
        prop_assert_eq!(ha, hash_address(&fb, Key::Finite(k), &family, &nodes).unwrap());
    }

    #[test]
    fn partitions_cover_the_input(p in partition(), n in 1u32..=5, input in facts_over(BTreeMap::from([("R".to_string(), 2), ("S".to_string(), 1)]))) {
        let parts = p.split(&input, &node_set(n)).unwrap();
        let mut union = Instance::new();
        for part in parts.values() {
            prop_assert!(part.is_subset(&input));
            union.extend_from(part);
        }
        prop_assert_eq!(union, input);
    }

    #[test]
    fn broadcast_equals_hashing_with_infinite_keys(n in 1u32..=5, seed in 0u64..16, input in facts_over(BTreeMap::from([("R".to_string(), 2), ("S".to_string(), 1)]))) {
        let nodes = node_set(n);
        let keys = BTreeMap::from([("R".to_string(), Key::Inf), ("S".to_string(), Key::Inf)]);
        let emissions: BTreeMap<NodeId, Instance> = nodes.iter().map(|&i| (i, input.clone())).collect();
        let broadcast = deliver_set(&emissions, &Router::new(CommKind::Broadcast, keys.clone(), HashFamily::seeded(seed), nodes.clone())).unwrap();
        let hashing = deliver_set(&emissions, &Router::new(CommKind::Hashing, keys, HashFamily::seeded(seed), nodes)).unwrap();
        prop_assert_eq!(broadcast, hashing);
    }

    #[test]
    fn passive_nodes_receive_nothing(
        n in 2u32..=5,
        seed in 0u64..16,
        k in prop_oneof![Just(Key::Inf), Just(Key::Finite(1)), Just(Key::Finite(2))],
        input in facts_over(BTreeMap::from([("R".to_string(), 2)])),
    ) {
        let nodes = node_set(n);
        let active: BTreeSet<NodeId> = (1..n).collect();
        let family = HashFamily::seeded_on(seed, active.clone());
        let router = Router::new(CommKind::Hashing, BTreeMap::from([("R".to_string(), k)]), family, nodes.clone());
        let emissions: BTreeMap<NodeId, Instance> = nodes.iter().map(|&i| (i, input.clone())).collect();
        let inbox = deliver_set(&emissions, &router).unwrap();
        prop_assert!(inbox.get(&n).is_none_or(|i| i.is_empty()));
    }
}

#[test]
fn oblivious_transitions_ignore_the_node_id() {
    for e in entries() {
        let spec = e.runnable().unwrap();
        if !spec.flags().oblivious {
            continue;
        }
        let node = Transducer::new(spec.clone()).unwrap();
        let inputs = spec_inputs(&spec);
        let mut db = Instance::new();
        let mut inbox = Instance::new();
        for (rel, arity) in &inputs {
            db.insert_fact(Fact::new(rel, (0..*arity as u8).map(constant).collect()));
        }
        for d in spec.schema.section(Section::Emt) {
            inbox.insert_fact(Fact::new(&d.name, (1..=d.arity as u8).map(constant).collect()));
        }
        let nodes = node_set(3);
        let mut results = Vec::new();
        for me in 1..=3 {
            let mut state = node.configure(&nodes, me, &nodes).unwrap();
            state.db = db.clone();
            let step = node.local_transition(&state, &inbox, 0).unwrap();
            results.push((step.state.mem, step.state.out, step.emitted));
        }
        assert!(results.windows(2).all(|w| w[0] == w[1]), "{}", e.name);
    }
}

#[test]
fn injection_is_idempotent_and_uses_reserved_names() {
    let specs: Vec<TransducerSpec> = [
        "emptiness.spec",
        "filtered-closure.spec",
        "closure-complement.spec",
        "broadcast-join.spec",
    ]
    .iter()
    .map(|f| TransducerSpec::parse(corpus_file(f).unwrap()).unwrap())
    .collect();
    for spec in specs {
        let user: BTreeSet<String> = spec.schema.decls().map(|(_, d)| d.name.clone()).collect();
        for inject in [inject_snapshot_fifo, inject_snapshot_generic] {
            let once = inject(&spec).unwrap();
            assert_eq!(inject(&once).unwrap(), once);
            for (_, d) in once.schema.decls() {
                assert!(user.contains(&d.name) || d.name.starts_with("sc_"), "{}", d.name);
            }
        }
    }
}

#[test]
fn rewrites_round_trip_through_text() {
    for e in corpus().unwrap() {
        let Some(q) = &e.query else { continue };
        for target in [
            Target::Broadcast,
            Target::Hashing,
            Target::SnapshotFifo,
            Target::SnapshotGeneric,
        ] {
            let Ok(spec) = rewrite_query(q, target) else { continue };
            assert_eq!(
                TransducerSpec::parse(&spec.to_string()).unwrap(),
                spec,
                "{} {target:?}",
                e.name
            );
        }
    }
    let q = Query::parse(corpus_file("closure.dl").unwrap()).unwrap();
    assert!(rewrite_query(&q, Target::Hashing).is_ok());
}
