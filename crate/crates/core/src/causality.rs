//! Syncausality graphs of runs and the coordination-pattern search.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::analyzer::negation_relevant_emits;
use crate::datalog::Instance;
use crate::network::{enumerate_configs, Budget, Config, Dimension, Network, Semantics, Trace};
use crate::rewriter::null_relation;
use crate::strategy::Partition;
use crate::transducer::{NodeId, Section, TransducerSpec};
use crate::Error;

/// A node at a round.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Point {
    pub node: NodeId,
    pub round: i64,
}

impl Point {
    pub fn new(node: NodeId, round: i64) -> Point {
        Point { node, round }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.node, self.round)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum EdgeKind {
    DirectLocal,
    DirectMessage,
    IndirectNull,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::DirectLocal => "direct_local",
            EdgeKind::DirectMessage => "direct_message",
            EdgeKind::IndirectNull => "indirect_null",
        }
    }

    pub fn is_direct(self) -> bool {
        self != EdgeKind::IndirectNull
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CausalEdge {
    pub from: Point,
    pub to: Point,
    pub kind: EdgeKind,
    /// Emit relation carried by the edge; `None` on local edges.
    pub relation: Option<String>,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct SyncausalityGraph {
    points: BTreeSet<Point>,
    edges: Vec<CausalEdge>,
    outgoing: BTreeMap<Point, Vec<usize>>,
}

impl SyncausalityGraph {
    fn add(&mut self, edge: CausalEdge) {
        self.outgoing.entry(edge.from).or_default().push(self.edges.len());
        self.edges.push(edge);
    }

    pub fn points(&self) -> &BTreeSet<Point> {
        &self.points
    }

    pub fn edges(&self) -> &[CausalEdge] {
        &self.edges
    }

    pub fn outgoing(&self, p: Point) -> impl Iterator<Item = &CausalEdge> {
        self.outgoing.get(&p).into_iter().flatten().map(|&i| &self.edges[i])
    }

    /// The subgraph of direct edges.
    pub fn happen_before(&self) -> SyncausalityGraph {
        let mut g = SyncausalityGraph {
            points: self.points.clone(),
            ..Default::default()
        };
        for e in self.edges.iter().filter(|e| e.kind.is_direct()) {
            g.add(e.clone());
        }
        g
    }

    /// Points reachable from `from` by one or more edges.
    pub fn reachable(&self, from: Point) -> BTreeSet<Point> {
        self.reach(self.outgoing(from).map(|e| e.to), i64::MAX)
    }

    /// Points reachable from `from` through a path whose first edge carries
    /// `rel`, staying at rounds up to `limit`.
    pub fn reachable_via(&self, from: Point, rel: &str, limit: i64) -> BTreeSet<Point> {
        let starts = self
            .outgoing(from)
            .filter(|e| e.relation.as_deref() == Some(rel))
            .map(|e| e.to);
        self.reach(starts, limit)
    }

    fn reach(&self, starts: impl Iterator<Item = Point>, limit: i64) -> BTreeSet<Point> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<Point> = starts.filter(|p| p.round <= limit).collect();
        while let Some(p) = queue.pop_front() {
            if !seen.insert(p) {
                continue;
            }
            queue.extend(
                self.outgoing(p)
                    .map(|e| e.to)
                    .filter(|q| q.round <= limit && !seen.contains(q)),
            );
        }
        seen
    }

    /// Every reachable pair.
    pub fn closure(&self) -> BTreeSet<(Point, Point)> {
        self.points
            .iter()
            .flat_map(|&p| self.reachable(p).into_iter().map(move |q| (p, q)))
            .collect()
    }
}

/// One `edge` record per line.
impl fmt::Display for SyncausalityGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.edges {
            write!(f, "edge kind={} from={} to={}", e.kind.name(), e.from, e.to)?;
            if let Some(r) = &e.relation {
                write!(f, " rel={r}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn build_graph(trace: &Trace, spec: &TransducerSpec) -> Result<SyncausalityGraph, Error> {
    let emit = spec.schema.names(Section::Emt);
    let t0 = trace.config.t0;
    let last = trace.last_round();
    let mut g = SyncausalityGraph::default();
    for &n in &trace.config.nodes {
        for r in t0..=last {
            g.points.insert(Point::new(n, r));
        }
    }
    for rec in &trace.rounds {
        for snap in &rec.nodes {
            if !trace.config.nodes.contains(&snap.node) {
                return Err(Error::Spec(format!("trace node {} is not configured", snap.node)));
            }
            if snap.derived && rec.round < last {
                g.add(CausalEdge {
                    from: Point::new(snap.node, rec.round),
                    to: Point::new(snap.node, rec.round + 1),
                    kind: EdgeKind::DirectLocal,
                    relation: None,
                });
            }
        }
    }
    let nulls: BTreeMap<String, String> = emit.iter().map(|r| (null_relation(r), r.clone())).collect();
    for d in trace.deliveries() {
        if !emit.contains(&d.fact.rel) {
            return Err(Error::Spec(format!(
                "delivered fact {} is not over an emit relation of the spec",
                d.fact
            )));
        }
        let from = Point::new(d.src, d.emit_round);
        let to = Point::new(d.dst, d.round);
        g.add(CausalEdge {
            from,
            to,
            kind: EdgeKind::DirectMessage,
            relation: Some(d.fact.rel.clone()),
        });
        if trace.config.semantics != Semantics::Rsfd {
            if let Some(sealed) = nulls.get(&d.fact.rel) {
                g.add(CausalEdge {
                    from,
                    to,
                    kind: EdgeKind::IndirectNull,
                    relation: Some(sealed.clone()),
                });
            }
        }
    }
    if trace.config.semantics == Semantics::Rsfd {
        let sealed = negation_relevant_emits(spec);
        for s in t0..last {
            for &i in &trace.active {
                for &j in &trace.active {
                    for r in &sealed {
                        g.add(CausalEdge {
                            from: Point::new(i, s),
                            to: Point::new(j, s + 1),
                            kind: EdgeKind::IndirectNull,
                            relation: Some(r.clone()),
                        });
                    }
                }
            }
        }
    }
    Ok(g)
}

/// A coordination master and the relation its broom starts with.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Pattern {
    pub master: Point,
    pub relation: String,
}

/// Searches for a point whose syncausal reach, starting with one relation,
/// covers every active node no later than quiescence. Under fixed delivery
/// the reach must be a single hop to round `s+1`.
pub fn detect_coordination_pattern(
    g: &SyncausalityGraph,
    trace: &Trace,
    active: &BTreeSet<NodeId>,
) -> Result<Option<Pattern>, Error> {
    let q = trace
        .quiescence
        .ok_or_else(|| Error::Config("the trace never quiesced".into()))?;
    if active.len() < 2 {
        return Ok(None);
    }
    let single_hop = trace.config.semantics == Semantics::Rsfd;
    for &from in g.points.iter().filter(|p| p.round < q) {
        let rels: BTreeSet<&str> = g.outgoing(from).filter_map(|e| e.relation.as_deref()).collect();
        for rel in rels {
            let reached: BTreeSet<NodeId> = if single_hop {
                g.outgoing(from)
                    .filter(|e| e.relation.as_deref() == Some(rel) && e.to.round == from.round + 1)
                    .map(|e| e.to.node)
                    .collect()
            } else {
                g.reachable_via(from, rel, q).into_iter().map(|p| p.node).collect()
            };
            if active.is_subset(&reached) {
                return Ok(Some(Pattern {
                    master: from,
                    relation: rel.to_string(),
                }));
            }
        }
    }
    Ok(None)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Freeness {
    /// A non-trivial configuration whose correct run has no master.
    Free(Box<Config>),
    NotFree {
        runs: usize,
    },
}

/// Searches non-trivial configurations (two or more active nodes) for a
/// run that quiesces with the trivial configuration's output and shows no
/// coordination pattern. `base` fixes the strategy kind and semantics.
pub fn check_coordination_freeness(
    spec: &TransducerSpec,
    input: &Instance,
    base: &Config,
    budget: &Budget,
) -> Result<Freeness, Error> {
    let net = Network::new(spec)?;
    let mut trivial = base.clone();
    trivial.nodes = BTreeSet::from([1]);
    trivial.partition = Partition::ReplicateAll;
    trivial.family = crate::strategy::HashFamily::seeded(base.family.seed);
    trivial.firing_order = None;
    trivial.max_rounds = trivial.max_rounds.max(budget.max_rounds);
    let reference = net
        .run(&trivial, input)?
        .output()
        .cloned()
        .ok_or_else(|| Error::Budget("the trivial configuration did not quiesce".into()))?;
    let mut runs = 0;
    let mut quiesced = 0;
    for cfg in enumerate_configs(base, input, Dimension::All, budget) {
        if cfg.nodes.len() < 2 {
            continue;
        }
        let trace = net.run(&cfg, input)?;
        if trace.active.len() < 2 {
            continue;
        }
        runs += 1;
        let Some(out) = trace.output() else { continue };
        quiesced += 1;
        if *out != reference {
            continue;
        }
        let g = build_graph(&trace, spec)?;
        if detect_coordination_pattern(&g, &trace, &trace.active)?.is_none() {
            return Ok(Freeness::Free(Box::new(cfg)));
        }
    }
    if quiesced == 0 {
        return Err(Error::Budget(format!("none of {runs} non-trivial runs quiesced")));
    }
    Ok(Freeness::NotFree { runs })
}
