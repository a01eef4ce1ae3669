//! Parallelization strategies: hash families, the distributed hash mapping,
//! partition functions and communication kinds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};

use crate::datalog::{Const, Fact, Instance, Key};
use crate::network::Trace;
use crate::transducer::NodeId;
use crate::Error;

/// How a family maps constants to nodes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum HashMode {
    /// Keyed SHA-256 of the constant modulo the active set.
    Seeded,
    /// Listed constants go to fixed nodes; others fall back to `Seeded`.
    Pinned(BTreeMap<Const, NodeId>),
    /// Every constant goes to one node.
    Constant(NodeId),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HashFamily {
    pub seed: u64,
    /// Codomain of the family; `None` means every node.
    pub active: Option<BTreeSet<NodeId>>,
    pub mode: HashMode,
}

impl HashFamily {
    pub fn seeded(seed: u64) -> HashFamily {
        HashFamily {
            seed,
            active: None,
            mode: HashMode::Seeded,
        }
    }

    pub fn seeded_on(seed: u64, active: BTreeSet<NodeId>) -> HashFamily {
        HashFamily {
            seed,
            active: Some(active),
            mode: HashMode::Seeded,
        }
    }

    pub fn pinned(map: BTreeMap<Const, NodeId>) -> HashFamily {
        HashFamily {
            seed: 0,
            active: None,
            mode: HashMode::Pinned(map),
        }
    }

    pub fn constant(node: NodeId) -> HashFamily {
        HashFamily {
            seed: 0,
            active: None,
            mode: HashMode::Constant(node),
        }
    }

    /// Nodes reachable by the family.
    pub fn active(&self, nodes: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        match (&self.mode, &self.active) {
            (HashMode::Constant(n), _) => BTreeSet::from([*n]),
            (_, Some(a)) => a.clone(),
            (_, None) => nodes.clone(),
        }
    }

    pub fn is_partitioned(&self, nodes: &BTreeSet<NodeId>) -> bool {
        self.active(nodes).len() < nodes.len()
    }

    pub fn validate(&self, nodes: &BTreeSet<NodeId>) -> Result<(), Error> {
        let active = self.active(nodes);
        if active.is_empty() || !active.is_subset(nodes) {
            return Err(Error::Config(format!(
                "hash family active set {active:?} must be a nonempty subset of {nodes:?}"
            )));
        }
        if let HashMode::Pinned(map) = &self.mode {
            if let Some((c, n)) = map.iter().find(|(_, n)| !active.contains(n)) {
                return Err(Error::Config(format!("constant {c} pinned to inactive node {n}")));
            }
        }
        Ok(())
    }

    /// The member function applied to a single constant.
    pub fn hash(&self, c: &Const, nodes: &BTreeSet<NodeId>) -> NodeId {
        match &self.mode {
            HashMode::Constant(n) => *n,
            HashMode::Pinned(map) if map.contains_key(c) => map[c],
            _ => {
                let active: Vec<NodeId> = self.active(nodes).into_iter().collect();
                active[(digest(self.seed, &c.canonical_bytes()) % active.len() as u64) as usize]
            }
        }
    }
}

impl fmt::Display for HashFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let active = |f: &mut fmt::Formatter<'_>, sep: &str| match &self.active {
            Some(a) => write!(f, "{sep}active=[{}]", join(a.iter())),
            None => Ok(()),
        };
        match &self.mode {
            HashMode::Seeded => {
                write!(f, "seeded(seed={}", self.seed)?;
                active(f, ", ")?;
                write!(f, ")")
            }
            HashMode::Pinned(map) => {
                let items: Vec<String> = map.iter().map(|(c, n)| format!("{c}:{n}")).collect();
                write!(f, "pinned{{{}}}", items.join(", "))?;
                if self.seed != 0 {
                    write!(f, " seed={}", self.seed)?;
                }
                active(f, " ")
            }
            HashMode::Constant(n) => write!(f, "constant({n})"),
        }
    }
}

fn join<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn digest(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(bytes);
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().unwrap())
}

/// Destinations of an emitted fact under a key and a family.
pub fn hash_address(
    fact: &Fact,
    key: Key,
    family: &HashFamily,
    nodes: &BTreeSet<NodeId>,
) -> Result<BTreeSet<NodeId>, Error> {
    match key {
        Key::Absent => Err(Error::Spec(format!("no key declared for {}", fact.rel))),
        Key::Inf => Ok(family.active(nodes)),
        Key::Finite(k) => Ok(fact.args.iter().take(k).map(|c| family.hash(c, nodes)).collect()),
    }
}

/// How input facts are placed on nodes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Partition {
    ReplicateAll,
    SingleNode(NodeId),
    /// Each fact on exactly one node chosen by a seeded hash of the fact.
    HashSplit(u64),
    Explicit(BTreeMap<NodeId, Instance>),
}

impl Partition {
    /// The local database of every node. The union over nodes is `input`.
    pub fn split(&self, input: &Instance, nodes: &BTreeSet<NodeId>) -> Result<BTreeMap<NodeId, Instance>, Error> {
        let mut out: BTreeMap<NodeId, Instance> = nodes.iter().map(|&n| (n, Instance::new())).collect();
        match self {
            Partition::ReplicateAll => {
                for v in out.values_mut() {
                    *v = input.clone();
                }
            }
            Partition::SingleNode(n) => {
                let slot = out
                    .get_mut(n)
                    .ok_or_else(|| Error::Config(format!("partition names unknown node {n}")))?;
                *slot = input.clone();
            }
            Partition::HashSplit(seed) => {
                let ids: Vec<NodeId> = nodes.iter().copied().collect();
                for f in input.facts() {
                    let mut bytes = f.rel.as_bytes().to_vec();
                    for c in &f.args {
                        bytes.push(0xff);
                        bytes.extend(c.canonical_bytes());
                    }
                    let n = ids[(digest(*seed, &bytes) % ids.len() as u64) as usize];
                    out.get_mut(&n).unwrap().insert_fact(f);
                }
            }
            Partition::Explicit(map) => {
                for (n, facts) in map {
                    let slot = out
                        .get_mut(n)
                        .ok_or_else(|| Error::Config(format!("partition names unknown node {n}")))?;
                    for f in facts.facts().filter(|f| input.contains_fact(f)) {
                        slot.insert_fact(f);
                    }
                }
                for f in input.facts() {
                    if !out.values().any(|i| i.contains_fact(&f)) {
                        return Err(Error::Config(format!("partition assigns no node to {f}")));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn is_disjoint(&self) -> bool {
        matches!(self, Partition::HashSplit(_) | Partition::SingleNode(_))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::ReplicateAll => write!(f, "replicate_all"),
            Partition::SingleNode(n) => write!(f, "single_node({n})"),
            Partition::HashSplit(s) => write!(f, "hash_split(seed={s})"),
            Partition::Explicit(map) => {
                let items: Vec<String> = map.iter().map(|(n, i)| format!("{n}: [{}]", join(i.facts()))).collect();
                write!(f, "explicit{{{}}}", items.join(", "))
            }
        }
    }
}

/// How emitted facts are addressed.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum CommKind {
    Hashing,
    Broadcast,
    CommFree,
}

impl CommKind {
    pub fn name(self) -> &'static str {
        match self {
            CommKind::Hashing => "hashing",
            CommKind::Broadcast => "broadcast",
            CommKind::CommFree => "comm_free",
        }
    }
}

impl fmt::Display for CommKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Addressing function for one configuration.
#[derive(Clone, Debug)]
pub struct Router {
    pub kind: CommKind,
    pub keys: BTreeMap<String, Key>,
    pub family: HashFamily,
    pub nodes: BTreeSet<NodeId>,
}

impl Router {
    pub fn new(kind: CommKind, keys: BTreeMap<String, Key>, family: HashFamily, nodes: BTreeSet<NodeId>) -> Router {
        Router {
            kind,
            keys,
            family,
            nodes,
        }
    }

    /// Nodes that can receive facts, which is also the content of `All`.
    pub fn active(&self) -> BTreeSet<NodeId> {
        match self.kind {
            CommKind::Hashing => self.family.active(&self.nodes),
            CommKind::Broadcast | CommKind::CommFree => self.nodes.clone(),
        }
    }

    pub fn destinations(&self, src: NodeId, fact: &Fact) -> Result<BTreeSet<NodeId>, Error> {
        match self.kind {
            CommKind::Broadcast => Ok(self.nodes.clone()),
            CommKind::CommFree => Ok(BTreeSet::from([src])),
            CommKind::Hashing => {
                let key = self.keys.get(&fact.rel).copied().unwrap_or(Key::Absent);
                hash_address(fact, key, &self.family, &self.nodes)
            }
        }
    }
}

/// Inboxes obtained by routing every node's emissions.
pub fn deliver_set(
    emissions: &BTreeMap<NodeId, Instance>,
    router: &Router,
) -> Result<BTreeMap<NodeId, Instance>, Error> {
    let mut out: BTreeMap<NodeId, Instance> = router.nodes.iter().map(|&n| (n, Instance::new())).collect();
    for (&src, inst) in emissions {
        for f in inst.facts() {
            for d in router.destinations(src, &f)? {
                out.entry(d).or_default().insert_fact(f.clone());
            }
        }
    }
    Ok(out)
}

/// Whether every emitted fact in the run was addressed only to its sender.
pub fn is_communication_free_run(trace: &Trace) -> bool {
    trace.emits().all(|e| e.dsts.len() == 1 && e.dsts.contains(&e.src))
}
