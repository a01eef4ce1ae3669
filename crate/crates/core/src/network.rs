//! Transducer networks: the environment, delivery semantics, runs,
//! quiescence, traces, and the consistency and independence checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datalog::{ArithOp, Atom, CmpOp, Const, Expr, Fact, Instance, Key, Literal, RelationDecl, Rule, Term};
use crate::strategy::{CommKind, HashFamily, HashMode, Partition, Router};
use crate::transducer::{NodeId, Role, Section, SpecRule, Transducer, TransducerSpec, TIME};
use crate::Error;

/// Relayed clock relation emitted by the environment.
pub const STIME: &str = "STime";

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Semantics {
    /// Fixed delivery: every message arrives in the next round.
    Rsfd,
    /// Bounded variance: arrival uniform in `[s+1, s+1+var]`.
    Rsbv { var: u32, fifo: bool },
    /// Arbitrary finite variance, capped at `max_delay` rounds.
    Rsync { max_delay: u32 },
}

impl Semantics {
    pub fn name(self) -> &'static str {
        match self {
            Semantics::Rsfd => "rsfd",
            Semantics::Rsbv { .. } => "rsbv",
            Semantics::Rsync { .. } => "rsync",
        }
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Semantics::Rsfd => write!(f, "rsfd"),
            Semantics::Rsbv { var, fifo } => write!(f, "rsbv(var={var}, fifo={fifo})"),
            Semantics::Rsync { max_delay } => write!(f, "rsync(max_delay={max_delay})"),
        }
    }
}

/// One network configuration: nodes, initial clock, partition, strategy,
/// delivery semantics and the seed for delivery draws.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Config {
    pub nodes: BTreeSet<NodeId>,
    pub t0: i64,
    pub partition: Partition,
    pub family: HashFamily,
    pub comm: CommKind,
    pub semantics: Semantics,
    pub seed: u64,
    pub max_rounds: u32,
    /// Order in which nodes fire within a round; `None` is ascending.
    pub firing_order: Option<Vec<NodeId>>,
}

impl Config {
    /// Nodes `1..=n`, replicated input, seeded hashing, fixed delivery.
    pub fn new(n: u32) -> Config {
        Config {
            nodes: (1..=n).collect(),
            t0: 0,
            partition: Partition::ReplicateAll,
            family: HashFamily::seeded(0),
            comm: CommKind::Hashing,
            semantics: Semantics::Rsfd,
            seed: 0,
            max_rounds: 64,
            firing_order: None,
        }
    }

    pub fn trivial() -> Config {
        Config::new(1)
    }

    pub fn with_partition(mut self, p: Partition) -> Config {
        self.partition = p;
        self
    }

    pub fn with_family(mut self, f: HashFamily) -> Config {
        self.family = f;
        self
    }

    pub fn with_comm(mut self, c: CommKind) -> Config {
        self.comm = c;
        self
    }

    pub fn with_semantics(mut self, s: Semantics) -> Config {
        self.semantics = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Config {
        self.seed = seed;
        self
    }

    pub fn is_trivial(&self) -> bool {
        self.nodes.len() == 1
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nodes: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        write!(
            f,
            "nodes=[{}] t0={} partition={} hash={} comm={} semantics={} seed={}",
            nodes.join(","),
            self.t0,
            self.partition,
            self.family,
            self.comm,
            self.semantics,
            self.seed
        )
    }
}

/// The environment transducer of `spec`: a primed memory relation and a
/// relay rule per emit relation, plus the clock.
pub fn build_environment(spec: &TransducerSpec) -> Result<TransducerSpec, Error> {
    let mut env = TransducerSpec {
        owns_time: true,
        ..TransducerSpec::default()
    };
    for d in &spec.schema.emt {
        let primed = format!("{}'", d.name);
        if spec.schema.lookup(&primed).is_some() {
            return Err(Error::Spec(format!(
                "relation {primed} collides with the environment memory of {}",
                d.name
            )));
        }
        if d.name == TIME || d.name == STIME {
            return Err(Error::Spec(format!(
                "emit relation {} collides with the environment clock",
                d.name
            )));
        }
        env.schema.mem.push(RelationDecl::new(&primed, d.arity));
        env.schema.emt.push(RelationDecl::keyed(&d.name, d.arity, Key::Inf));
        let atom = Atom::with_vars(&d.name, d.arity, "u");
        env.rules.push(SpecRule::new(
            Role::Ins,
            Rule::plain(Atom::with_vars(&primed, d.arity, "u"), vec![Literal::Pos(atom.clone())]),
        ));
        env.rules.push(SpecRule::new(
            Role::Emt,
            Rule::plain(atom.clone(), vec![Literal::Pos(atom)]),
        ));
    }
    env.schema.mem.push(RelationDecl::new(TIME, 1));
    env.schema.emt.push(RelationDecl::keyed(STIME, 1, Key::Inf));
    let t = || Term::var("t");
    let time_t = Literal::Pos(Atom::new(TIME, vec![t()]));
    let succ = Expr::Bin(
        Box::new(Expr::Term(t())),
        ArithOp::Add,
        Box::new(Expr::Term(Term::Const(Const::Int(1)))),
    );
    env.rules.push(SpecRule::new(
        Role::Ins,
        Rule::plain(
            Atom::new(TIME, vec![Term::var("s")]),
            vec![
                time_t.clone(),
                Literal::Cmp(Expr::Term(Term::var("s")), CmpOp::Eq, succ),
            ],
        ),
    ));
    env.rules.push(SpecRule::new(
        Role::Del,
        Rule::plain(Atom::new(TIME, vec![t()]), vec![time_t.clone()]),
    ));
    env.rules.push(SpecRule::new(
        Role::Emt,
        Rule::plain(Atom::new(STIME, vec![t()]), vec![time_t]),
    ));
    env.validate()?;
    Ok(env)
}

/// A message in transit.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub fact: Fact,
    pub emit_round: i64,
    pub due: i64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EmitEvent {
    pub round: i64,
    pub src: NodeId,
    pub fact: Fact,
    pub dsts: BTreeSet<NodeId>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DeliverEvent {
    pub round: i64,
    pub src: NodeId,
    pub dst: NodeId,
    pub fact: Fact,
    pub emit_round: i64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Event {
    Emit(EmitEvent),
    Deliver(DeliverEvent),
}

/// State of one node after its transition in a round.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub mem: Instance,
    pub out: Instance,
    pub recv: Instance,
    pub emit: Instance,
    /// Whether this transition added a fact to memory or output.
    pub derived: bool,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoundRecord {
    pub round: i64,
    pub nodes: Vec<NodeSnapshot>,
    /// Environment memory after the round.
    pub env: Instance,
}

/// A complete run.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Trace {
    pub config: Config,
    pub active: BTreeSet<NodeId>,
    pub rounds: Vec<RoundRecord>,
    pub events: Vec<Event>,
    /// Messages still in transit when the run stopped.
    pub pending: Vec<Message>,
    /// First quiescent round, `None` for ⊥.
    pub quiescence: Option<i64>,
    /// Union of node outputs at the last recorded round.
    pub out: Instance,
    pub db_schema: BTreeSet<String>,
    pub out_schema: BTreeSet<String>,
}

impl Trace {
    /// out(*), or `None` when the run never quiesced.
    pub fn output(&self) -> Option<&Instance> {
        self.quiescence.map(|_| &self.out)
    }

    pub fn emits(&self) -> impl Iterator<Item = &EmitEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::Emit(x) => Some(x),
            _ => None,
        })
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &DeliverEvent> {
        self.events.iter().filter_map(|e| match e {
            Event::Deliver(x) => Some(x),
            _ => None,
        })
    }

    pub fn snapshot(&self, node: NodeId, round: i64) -> Option<&NodeSnapshot> {
        let r = self.rounds.get(usize::try_from(round - self.config.t0).ok()?)?;
        r.nodes.iter().find(|n| n.node == node)
    }

    /// Every fact a node received up to and including `round`.
    pub fn received_by(&self, node: NodeId, round: i64) -> Instance {
        let mut out = Instance::new();
        for d in self.deliveries().filter(|d| d.dst == node && d.round <= round) {
            out.insert_fact(d.fact.clone());
        }
        out
    }

    pub fn last_round(&self) -> i64 {
        self.config.t0 + self.rounds.len() as i64 - 1
    }
}

fn list(i: &Instance) -> String {
    i.facts().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
}

fn ids(s: &BTreeSet<NodeId>) -> String {
    s.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

/// Line-delimited rendering with a leading record type on each line.
impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config {}", self.config)?;
        writeln!(f, "active [{}]", ids(&self.active))?;
        let mut events = self.events.iter().peekable();
        for r in &self.rounds {
            while let Some(Event::Deliver(d)) = events.peek() {
                if d.round != r.round {
                    break;
                }
                writeln!(
                    f,
                    "deliver t={} src={} dst={} fact={} sent={}",
                    d.round, d.src, d.dst, d.fact, d.emit_round
                )?;
                events.next();
            }
            for n in &r.nodes {
                writeln!(
                    f,
                    "round t={} node={} mem=[{}] out=[{}] recv=[{}] emit=[{}]",
                    r.round,
                    n.node,
                    list(&n.mem),
                    list(&n.out),
                    list(&n.recv),
                    list(&n.emit)
                )?;
            }
            while let Some(Event::Emit(e)) = events.peek() {
                if e.round != r.round {
                    break;
                }
                writeln!(
                    f,
                    "emit t={} src={} fact={} dst=[{}]",
                    e.round,
                    e.src,
                    e.fact,
                    ids(&e.dsts)
                )?;
                events.next();
            }
        }
        for m in &self.pending {
            writeln!(
                f,
                "pending src={} dst={} fact={} sent={} due={}",
                m.src, m.dst, m.fact, m.emit_round, m.due
            )?;
        }
        match self.quiescence {
            Some(q) => {
                writeln!(f, "quiescence t={q}")?;
                for fact in self.out.facts() {
                    writeln!(f, "out {fact}")?;
                }
            }
            None => writeln!(f, "quiescence t=bottom")?,
        }
        Ok(())
    }
}

/// A spec compiled together with its environment.
#[derive(Clone, Debug)]
pub struct Network {
    node: Transducer,
    env: Transducer,
}

impl Network {
    pub fn new(spec: &TransducerSpec) -> Result<Network, Error> {
        Ok(Network {
            node: Transducer::new(spec.clone())?,
            env: Transducer::new(build_environment(spec)?)?,
        })
    }

    pub fn spec(&self) -> &TransducerSpec {
        self.node.spec()
    }

    pub fn router(&self, cfg: &Config) -> Router {
        let keys: BTreeMap<String, Key> = self.spec().key_set().into_iter().collect();
        Router::new(cfg.comm, keys, cfg.family.clone(), cfg.nodes.clone())
    }

    /// Runs from the initial global state until quiescence or `max_rounds`.
    pub fn run(&self, cfg: &Config, input: &Instance) -> Result<Trace, Error> {
        if cfg.nodes.is_empty() {
            return Err(Error::Config("a network needs at least one node".into()));
        }
        let spec = self.spec();
        let db = spec.schema.names(Section::Db);
        if let Some(bad) = input.relation_names().find(|r| !db.contains(*r)) {
            return Err(Error::Config(format!("input fact over non-database relation {bad}")));
        }
        if cfg.comm == CommKind::Hashing {
            cfg.family.validate(&cfg.nodes)?;
        }
        let order: Vec<NodeId> = match &cfg.firing_order {
            Some(o) => {
                let set: BTreeSet<NodeId> = o.iter().copied().collect();
                if set != cfg.nodes || o.len() != cfg.nodes.len() {
                    return Err(Error::Config("firing order must be a permutation of the nodes".into()));
                }
                o.clone()
            }
            None => cfg.nodes.iter().copied().collect(),
        };
        let router = self.router(cfg);
        let active = router.active();
        let local_db = cfg.partition.split(input, &cfg.nodes)?;
        let mut states = BTreeMap::new();
        for &n in &cfg.nodes {
            let mut s = self.node.configure(&cfg.nodes, n, &active)?;
            s.db = local_db[&n].clone();
            s.clock = cfg.t0;
            states.insert(n, s);
        }
        let mut env_state = crate::transducer::LocalState::default();
        env_state.mem.insert(TIME, vec![Const::Int(cfg.t0)]);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut in_flight: Vec<Message> = Vec::new();
        let mut delivered: BTreeSet<(Fact, NodeId)> = BTreeSet::new();
        let mut received: BTreeMap<NodeId, Instance> = cfg.nodes.iter().map(|&n| (n, Instance::new())).collect();
        let mut emitted_ever: BTreeMap<NodeId, Instance> = received.clone();
        let mut prev_emit: BTreeMap<NodeId, Instance> = received.clone();
        let mut last_due: BTreeMap<(NodeId, NodeId), i64> = BTreeMap::new();
        let mut trace = Trace {
            config: cfg.clone(),
            active: active.clone(),
            rounds: Vec::new(),
            events: Vec::new(),
            pending: Vec::new(),
            quiescence: None,
            out: Instance::new(),
            db_schema: db,
            out_schema: spec.schema.names(Section::Out),
        };

        for _ in 0..cfg.max_rounds {
            let s = env_clock(&env_state).unwrap_or(cfg.t0);
            // 1. deliveries due now
            let (due, rest): (Vec<Message>, Vec<Message>) = in_flight.into_iter().partition(|m| m.due <= s);
            in_flight = rest;
            let mut inbox: BTreeMap<NodeId, Instance> = cfg.nodes.iter().map(|&n| (n, Instance::new())).collect();
            let mut due = due;
            due.sort_by(|a, b| (a.dst, a.src, a.emit_round, &a.fact).cmp(&(b.dst, b.src, b.emit_round, &b.fact)));
            for m in due {
                inbox.get_mut(&m.dst).unwrap().insert_fact(m.fact.clone());
                received.get_mut(&m.dst).unwrap().insert_fact(m.fact.clone());
                delivered.insert((m.fact.clone(), m.dst));
                trace.events.push(Event::Deliver(DeliverEvent {
                    round: s,
                    src: m.src,
                    dst: m.dst,
                    fact: m.fact,
                    emit_round: m.emit_round,
                }));
            }
            // 2. node transitions
            let mut steps = BTreeMap::new();
            for &n in &order {
                steps.insert(n, self.node.transition(&states[&n], &inbox[&n], Some(s)));
            }
            let mut changed = false;
            let mut same_emit = true;
            let mut nothing_new = true;
            let mut snapshot = Vec::new();
            let mut all_emit = Instance::new();
            for (&n, step) in &steps {
                let old = &states[&n];
                changed |= step.state.mem != old.mem || step.state.out != old.out;
                same_emit &= step.emitted == prev_emit[&n];
                nothing_new &= step.emitted.is_subset(&emitted_ever[&n]);
                all_emit.extend_from(&step.emitted);
                snapshot.push(NodeSnapshot {
                    node: n,
                    mem: step.state.mem.clone(),
                    out: step.state.out.clone(),
                    recv: inbox[&n].clone(),
                    emit: step.emitted.clone(),
                    derived: step.derived,
                });
            }
            // 3. environment
            env_state = self.env.transition(&env_state, &all_emit, None).state;
            // 4. routing
            let mut fresh: Vec<Message> = Vec::new();
            for (&n, step) in &steps {
                for fact in step.emitted.facts() {
                    let dsts = router.destinations(n, &fact)?;
                    for &d in &dsts {
                        fresh.push(Message {
                            src: n,
                            dst: d,
                            fact: fact.clone(),
                            emit_round: s,
                            due: s + 1,
                        });
                    }
                    trace.events.push(Event::Emit(EmitEvent {
                        round: s,
                        src: n,
                        fact,
                        dsts,
                    }));
                }
            }
            fresh.sort();
            schedule(&mut fresh, cfg.semantics, s, &mut rng, &mut last_due);
            in_flight.extend(fresh);
            for (n, step) in steps {
                emitted_ever.get_mut(&n).unwrap().extend_from(&step.emitted);
                prev_emit.insert(n, step.emitted);
                states.insert(n, step.state);
            }
            trace.rounds.push(RoundRecord {
                round: s,
                nodes: snapshot,
                env: env_state.mem.clone(),
            });
            // 5. quiescence
            let stale = in_flight.iter().all(|m| delivered.contains(&(m.fact.clone(), m.dst)));
            // Under delays a node's emission follows its random inbox, so only
            // fresh facts count there.
            let settled = if cfg.semantics == Semantics::Rsfd {
                same_emit
            } else {
                nothing_new
            };
            let mut quiet = !changed && settled && stale;
            if quiet && cfg.semantics != Semantics::Rsfd {
                quiet = cfg.nodes.iter().all(|n| {
                    let probe = self.node.transition(&states[n], &received[n], Some(s + 1));
                    probe.state.mem == states[n].mem
                        && probe.state.out == states[n].out
                        && probe.emitted.is_subset(&emitted_ever[n])
                });
            }
            if quiet {
                trace.quiescence = Some(s);
                break;
            }
        }
        for st in states.values() {
            trace.out.extend_from(&st.out);
        }
        in_flight.sort_by(|a, b| (a.due, a.dst, a.src, &a.fact).cmp(&(b.due, b.dst, b.src, &b.fact)));
        trace.pending = in_flight;
        Ok(trace)
    }
}

fn env_clock(env: &crate::transducer::LocalState) -> Option<i64> {
    env.mem.get(TIME)?.iter().next()?.first()?.as_int()
}

/// Assigns due rounds to messages emitted at round `s`.
fn schedule(
    msgs: &mut [Message],
    sem: Semantics,
    s: i64,
    rng: &mut ChaCha8Rng,
    last_due: &mut BTreeMap<(NodeId, NodeId), i64>,
) {
    match sem {
        Semantics::Rsfd => {}
        Semantics::Rsbv { var, fifo: false } | Semantics::Rsync { max_delay: var } => {
            for m in msgs.iter_mut() {
                m.due = s + 1 + rng.gen_range(0..=var as i64);
            }
        }
        Semantics::Rsbv { var, fifo: true } => {
            let channels: BTreeSet<(NodeId, NodeId)> = msgs.iter().map(|m| (m.src, m.dst)).collect();
            let mut due = BTreeMap::new();
            for ch in channels {
                let draw = s + 1 + rng.gen_range(0..=var as i64);
                let d = draw.max(last_due.get(&ch).copied().unwrap_or(i64::MIN));
                last_due.insert(ch, d);
                due.insert(ch, d);
            }
            for m in msgs.iter_mut() {
                m.due = due[&(m.src, m.dst)];
            }
        }
    }
}

/// Runs `spec` once.
pub fn run(spec: &TransducerSpec, cfg: &Config, input: &Instance) -> Result<Trace, Error> {
    Network::new(spec)?.run(cfg, input)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Consistency {
    Consistent,
    Inconsistent,
    /// At least one run never quiesced.
    NotQuiescent,
}

/// Whether two runs quiesced with the same out(*).
pub fn check_eventual_consistency(a: &Trace, b: &Trace) -> Result<Consistency, Error> {
    if a.db_schema != b.db_schema || a.out_schema != b.out_schema {
        return Err(Error::Spec(
            "traces come from specs with different database or output schemas".into(),
        ));
    }
    Ok(match (a.output(), b.output()) {
        (Some(x), Some(y)) if x == y => Consistency::Consistent,
        (Some(_), Some(_)) => Consistency::Inconsistent,
        _ => Consistency::NotQuiescent,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dimension {
    Network,
    Time,
    Partition,
    Strategy,
    All,
}

impl Dimension {
    pub fn parse(s: &str) -> Option<Dimension> {
        Some(match s.to_ascii_lowercase().as_str() {
            "network" => Dimension::Network,
            "time" => Dimension::Time,
            "partition" => Dimension::Partition,
            "strategy" => Dimension::Strategy,
            "all" => Dimension::All,
            _ => return None,
        })
    }

    fn varies(self, d: Dimension) -> bool {
        self == Dimension::All || self == d
    }
}

/// Enumeration bounds for configuration searches.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Budget {
    pub node_counts: Vec<u32>,
    pub t0s: Vec<i64>,
    pub partition_seeds: Vec<u64>,
    pub hash_seeds: Vec<u64>,
    /// Delivery seeds, used when the semantics draws delays.
    pub seeds: Vec<u64>,
    pub max_rounds: u32,
}

impl Default for Budget {
    fn default() -> Budget {
        Budget {
            node_counts: vec![1, 2, 3],
            t0s: vec![0, 5],
            partition_seeds: vec![1, 2],
            hash_seeds: vec![1, 2, 3],
            seeds: vec![0],
            max_rounds: 64,
        }
    }
}

impl Budget {
    /// A budget with roughly `n` seeds in each seeded position.
    pub fn scaled(n: usize) -> Budget {
        let seeds: Vec<u64> = (1..=n.max(1) as u64).collect();
        Budget {
            node_counts: vec![1, 2, 3],
            t0s: vec![0, 5],
            partition_seeds: seeds.clone(),
            hash_seeds: seeds.clone(),
            seeds,
            max_rounds: 64,
        }
    }
}

/// Partition modes tried on `nodes`.
pub fn partitions(nodes: &BTreeSet<NodeId>, budget: &Budget) -> Vec<Partition> {
    let mut out = vec![Partition::ReplicateAll];
    let first = *nodes.first().unwrap();
    let last = *nodes.last().unwrap();
    out.push(Partition::SingleNode(first));
    if last != first {
        out.push(Partition::SingleNode(last));
        out.extend(budget.partition_seeds.iter().map(|&s| Partition::HashSplit(s)));
    }
    out
}

/// Hash families tried on `nodes`: seeded over all nodes, seeded over a
/// strict subset, one per constant target, and inputs pinned to one node.
pub fn families(nodes: &BTreeSet<NodeId>, input: &Instance, budget: &Budget) -> Vec<HashFamily> {
    let mut out: Vec<HashFamily> = budget.hash_seeds.iter().map(|&s| HashFamily::seeded(s)).collect();
    let ordered: Vec<NodeId> = nodes.iter().copied().collect();
    if ordered.len() >= 2 {
        for &s in &budget.hash_seeds {
            let active: BTreeSet<NodeId> = ordered[..ordered.len() - 1].iter().copied().collect();
            out.push(HashFamily::seeded_on(s, active));
        }
    }
    for &n in &ordered {
        out.push(HashFamily::constant(n));
    }
    if ordered.len() >= 2 {
        for &n in &ordered {
            let map = input.active_domain().into_iter().map(|c| (c, n)).collect();
            out.push(HashFamily {
                seed: 0,
                active: None,
                mode: HashMode::Pinned(map),
            });
        }
    }
    out
}

/// Fits a partition to a node set, falling back to full replication.
fn adapt_partition(p: &Partition, nodes: &BTreeSet<NodeId>) -> Partition {
    match p {
        Partition::SingleNode(n) if !nodes.contains(n) => Partition::ReplicateAll,
        Partition::Explicit(map) if !map.keys().all(|n| nodes.contains(n)) => Partition::ReplicateAll,
        _ => p.clone(),
    }
}

fn adapt_family(f: &HashFamily, nodes: &BTreeSet<NodeId>) -> HashFamily {
    if f.validate(nodes).is_ok() {
        return f.clone();
    }
    HashFamily::seeded(f.seed)
}

/// Configurations varying only `dim`, in enumeration order: node counts,
/// partitions, families, then seeds.
pub fn enumerate_configs(base: &Config, input: &Instance, dim: Dimension, budget: &Budget) -> Vec<Config> {
    let counts: Vec<BTreeSet<NodeId>> = if dim.varies(Dimension::Network) {
        budget.node_counts.iter().map(|&n| (1..=n).collect()).collect()
    } else {
        vec![base.nodes.clone()]
    };
    let t0s = if dim.varies(Dimension::Time) {
        budget.t0s.clone()
    } else {
        vec![base.t0]
    };
    let seeds = if base.semantics != Semantics::Rsfd && dim == Dimension::All {
        budget.seeds.clone()
    } else {
        vec![base.seed]
    };
    let mut out = Vec::new();
    for nodes in counts {
        let parts = if dim.varies(Dimension::Partition) {
            partitions(&nodes, budget)
        } else {
            vec![adapt_partition(&base.partition, &nodes)]
        };
        let fams = if dim.varies(Dimension::Strategy) && base.comm == CommKind::Hashing {
            families(&nodes, input, budget)
        } else {
            vec![adapt_family(&base.family, &nodes)]
        };
        for p in &parts {
            for f in &fams {
                for &t0 in &t0s {
                    for &seed in &seeds {
                        out.push(Config {
                            nodes: nodes.clone(),
                            t0,
                            partition: p.clone(),
                            family: f.clone(),
                            comm: base.comm,
                            semantics: base.semantics,
                            seed,
                            max_rounds: budget.max_rounds.max(base.max_rounds),
                            firing_order: None,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Outcome of one run: its configuration and out(*), `None` for ⊥.
pub type Outcome = (Config, Option<Instance>);

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Independence {
    Convergent { runs: usize, output: Instance },
    Divergent { first: Box<Outcome>, second: Box<Outcome> },
}

/// Runs `spec` over configurations varying `dim` and compares out(*).
pub fn check_independence(
    spec: &TransducerSpec,
    input: &Instance,
    base: &Config,
    dim: Dimension,
    budget: &Budget,
) -> Result<Independence, Error> {
    let net = Network::new(spec)?;
    let mut reference: Option<Outcome> = None;
    let mut runs = 0;
    for cfg in enumerate_configs(base, input, dim, budget) {
        let trace = net.run(&cfg, input)?;
        runs += 1;
        let outcome = trace.output().cloned();
        match &reference {
            None => reference = Some((cfg, outcome)),
            Some((_, r)) if *r == outcome => {}
            Some(r) => {
                return Ok(Independence::Divergent {
                    first: Box::new(r.clone()),
                    second: Box::new((cfg, outcome)),
                });
            }
        }
    }
    match reference {
        Some((_, Some(output))) => Ok(Independence::Convergent { runs, output }),
        Some((_, None)) => Err(Error::Budget("no enumerated configuration quiesced".into())),
        None => Err(Error::Budget("the budget enumerates no configuration".into())),
    }
}

/// Checks that deliveries match emissions: every delivery has an earlier
/// emission to that destination, and every addressed destination is
/// delivered or still pending.
pub fn check_reliability(trace: &Trace) -> Result<(), String> {
    let mut expected: BTreeMap<(NodeId, NodeId, Fact, i64), usize> = BTreeMap::new();
    for e in trace.emits() {
        for &d in &e.dsts {
            *expected.entry((e.src, d, e.fact.clone(), e.round)).or_default() += 1;
        }
    }
    for d in trace.deliveries() {
        if d.round <= d.emit_round {
            return Err(format!(
                "delivery of {} at {} is not after its emission at {}",
                d.fact, d.round, d.emit_round
            ));
        }
        let key = (d.src, d.dst, d.fact.clone(), d.emit_round);
        match expected.get_mut(&key) {
            Some(c) if *c > 0 => *c -= 1,
            _ => return Err(format!("delivery of {} to {} has no matching emission", d.fact, d.dst)),
        }
    }
    for m in &trace.pending {
        let key = (m.src, m.dst, m.fact.clone(), m.emit_round);
        match expected.get_mut(&key) {
            Some(c) if *c > 0 => *c -= 1,
            _ => {
                return Err(format!(
                    "pending message {} to {} has no matching emission",
                    m.fact, m.dst
                ))
            }
        }
    }
    if let Some(((src, dst, f, r), _)) = expected.iter().find(|(_, &c)| c > 0) {
        return Err(format!("emission of {f} by {src} at {r} never reached {dst}"));
    }
    Ok(())
}

/// Checks that every delivery lies in the window allowed by the semantics
/// and that FIFO channels deliver in emission order.
pub fn check_delivery_windows(trace: &Trace) -> Result<(), String> {
    let width = match trace.config.semantics {
        Semantics::Rsfd => 0,
        Semantics::Rsbv { var, .. } => var as i64,
        Semantics::Rsync { max_delay } => max_delay as i64,
    };
    let mut last: BTreeMap<(NodeId, NodeId), (i64, i64)> = BTreeMap::new();
    for d in trace.deliveries() {
        let lo = d.emit_round + 1;
        if d.round < lo || d.round > lo + width {
            return Err(format!(
                "{} delivered at {} outside [{lo}, {}]",
                d.fact,
                d.round,
                lo + width
            ));
        }
        if let Semantics::Rsbv { fifo: true, .. } = trace.config.semantics {
            let ch = (d.src, d.dst);
            if let Some(&(sent, _)) = last.get(&ch) {
                if sent > d.emit_round {
                    return Err(format!("channel {}->{} delivered out of order", d.src, d.dst));
                }
            }
            last.insert(ch, (d.emit_round, d.round));
        }
    }
    Ok(())
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::datalog::parse_facts;

    fn inst(text: &str) -> Instance {
        Instance::from_facts(parse_facts(text).unwrap().into_iter().map(|f| f.0))
    }

    const EMPTINESS: &str = "
        @db decl R/0.
        @mem decl Ready/0.
        @emt decl S/0 key=inf.
        @out decl T/0.
        S_emt() <- R().
        Ready_ins() <- not Ready().
        T_out() <- not S(), Ready().
    ";

    #[test]
    fn environment_shape() {
        let spec = TransducerSpec::parse("@db decl R/2. @emt decl S/2 key=1. S_emt(u, v) <- R(u, v).").unwrap();
        let env = build_environment(&spec).unwrap();
        assert!(env.schema.mem.iter().any(|d| d.name == "S'" && d.arity == 2));
        let text = env.to_string();
        assert!(text.contains("S'_ins(u0, u1) <- S(u0, u1)."));
        assert!(text.contains("S_emt(u0, u1) <- S(u0, u1)."));
        assert!(text.contains("Time_ins(s) <- Time(t), s = t + 1."));
        let none = build_environment(&TransducerSpec::parse("@db decl R/1.").unwrap()).unwrap();
        assert_eq!(none.rules.len(), 3);
        let clash = TransducerSpec::parse("@db decl S'/1. @emt decl S/1 key=1. S_emt(u) <- S'(u).").unwrap();
        assert!(build_environment(&clash).is_err());
    }

    #[test]
    fn emptiness_outputs_iff_empty() {
        let spec = TransducerSpec::parse(EMPTINESS).unwrap();
        let cfg = Config::new(3).with_comm(CommKind::Broadcast);
        let t = run(&spec, &cfg, &Instance::new()).unwrap();
        assert_eq!(t.output(), Some(&inst("T().")));
        let t = run(&spec, &cfg, &inst("R().")).unwrap();
        assert_eq!(t.output(), Some(&Instance::new()));
        check_reliability(&t).unwrap();
    }

    #[test]
    fn environment_clock_drives_nodes() {
        let spec = TransducerSpec::parse("@out decl C/1. C_out(t) <- Time(t).").unwrap();
        let mut cfg = Config::new(1);
        cfg.t0 = 7;
        cfg.max_rounds = 3;
        let t = run(&spec, &cfg, &Instance::new()).unwrap();
        assert_eq!(t.quiescence, None);
        assert_eq!(t.out, inst("C(7). C(8). C(9)."));
    }

    #[test]
    fn late_delivery_breaks_emptiness_under_bounded_variance() {
        let spec = TransducerSpec::parse(EMPTINESS).unwrap();
        let net = Network::new(&spec).unwrap();
        let input = inst("R().");
        let wrong = (0..200).any(|seed| {
            let cfg = Config::new(2)
                .with_comm(CommKind::Broadcast)
                .with_partition(Partition::SingleNode(1))
                .with_semantics(Semantics::Rsbv { var: 2, fifo: false })
                .with_seed(seed);
            let t = net.run(&cfg, &input).unwrap();
            check_delivery_windows(&t).unwrap();
            t.out.contains_fact(&Fact::new("T", vec![]))
        });
        assert!(wrong);
    }

    #[test]
    fn trivial_budget_is_convergent() {
        let spec = TransducerSpec::parse(EMPTINESS).unwrap();
        let budget = Budget {
            node_counts: vec![1],
            t0s: vec![0],
            ..Budget::default()
        };
        let v = check_independence(&spec, &Instance::new(), &Config::trivial(), Dimension::Network, &budget).unwrap();
        assert!(matches!(v, Independence::Convergent { runs: 1, .. }));
    }
}
