//! Fact and configuration files, the bundled example corpus, and the
//! checks run over it.
//!
//! Configuration files are TOML tables:
//!
//! ```text
//! nodes = 3                    # or an explicit list, [1, 2, 5]
//! t0 = 0
//! partition = "hash_split(seed=1)"
//! hash = "seeded(seed=2, active=[1,2])"
//! comm = "hashing"
//! semantics = "rsbv(var=2, fifo=true)"
//! seed = 7
//! max_rounds = 64
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::analyzer::{classify, logical_program, Coordination};
use crate::causality::{check_coordination_freeness, Freeness};
use crate::datalog::{parse_atoms, parse_constant, parse_facts, DatalogError};
use crate::network::{check_independence, run, Budget, Config, Dimension, Independence, Semantics};
use crate::rewriter::{rewrite_query, Query, Target};
use crate::strategy::{CommKind, HashFamily, Partition};
use crate::transducer::{NodeId, Section, TransducerSpec};
use crate::{Error, Instance, Program};

/// Relation name to arity.
pub type Arities = BTreeMap<String, usize>;

/// Parses a fact file, one ground atom per `.`. With `schema`, every
/// relation must be declared there with a matching arity.
pub fn parse_instance(text: &str, schema: Option<&Arities>) -> Result<Instance, Error> {
    let mut out = Instance::new();
    for (fact, span) in parse_facts(text)? {
        if let Some(schema) = schema {
            match schema.get(&fact.rel) {
                None => {
                    return Err(DatalogError::Undeclared {
                        line: span.line,
                        col: span.col,
                        rel: fact.rel,
                    }
                    .into());
                }
                Some(&a) if a != fact.args.len() => {
                    return Err(DatalogError::Arity {
                        line: span.line,
                        col: span.col,
                        rel: fact.rel,
                        expected: a,
                        got: fact.args.len(),
                    }
                    .into());
                }
                _ => {}
            }
        }
        out.insert_fact(fact);
    }
    Ok(out)
}

pub fn load_instance(path: &Path, schema: Option<&Arities>) -> Result<Instance, Error> {
    parse_instance(&read(path)?, schema)
}

/// Input relations of a spec: its database section.
pub fn spec_inputs(spec: &TransducerSpec) -> Arities {
    spec.schema
        .section(Section::Db)
        .iter()
        .map(|d| (d.name.clone(), d.arity))
        .collect()
}

/// Input relations of a query: the declared relations no rule derives.
pub fn query_inputs(q: &Query) -> Arities {
    let derived = q.program.derived();
    q.program
        .decls
        .iter()
        .filter(|d| !derived.contains(&d.name))
        .map(|d| (d.name.clone(), d.arity))
        .collect()
}

pub(crate) fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum Nodes {
    Count(u32),
    List(Vec<NodeId>),
}

/// A configuration as written in a file; absent fields take the defaults
/// of [`Config::new`].
#[derive(Clone, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub nodes: Option<Nodes>,
    pub t0: Option<i64>,
    pub partition: Option<String>,
    pub hash: Option<String>,
    pub comm: Option<String>,
    pub semantics: Option<String>,
    pub seed: Option<u64>,
    pub max_rounds: Option<u32>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_config(&self) -> Result<Config, Error> {
        let mut cfg = Config::new(1);
        cfg.nodes = match &self.nodes {
            None => cfg.nodes,
            Some(Nodes::Count(0)) => return Err(Error::Config("nodes must be positive".into())),
            Some(Nodes::Count(n)) => (1..=*n).collect(),
            Some(Nodes::List(l)) if l.is_empty() => return Err(Error::Config("empty node list".into())),
            Some(Nodes::List(l)) => l.iter().copied().collect(),
        };
        if let Some(t) = self.t0 {
            cfg.t0 = t;
        }
        if let Some(p) = &self.partition {
            cfg.partition = parse_partition(p)?;
        }
        if let Some(h) = &self.hash {
            cfg.family = parse_family(h)?;
        }
        if let Some(c) = &self.comm {
            cfg.comm = parse_comm(c)?;
        }
        if let Some(s) = &self.semantics {
            cfg.semantics = parse_semantics(s)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_rounds {
            cfg.max_rounds = m;
        }
        cfg.family.validate(&cfg.nodes)?;
        if let Partition::SingleNode(n) = cfg.partition {
            if !cfg.nodes.contains(&n) {
                return Err(Error::Config(format!("partition node {n} is not in the node set")));
            }
        }
        Ok(cfg)
    }
}

pub fn parse_config(text: &str) -> Result<Config, Error> {
    ConfigFile::parse(text)?.to_config()
}

pub fn load_config(path: &Path) -> Result<Config, Error> {
    parse_config(&read(path)?)
}

/// Splits `name(k=v, k=[a,b])` into its name and arguments.
fn call(text: &str) -> Result<(&str, BTreeMap<&str, &str>), Error> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        return Ok((text, BTreeMap::new()));
    };
    let inner = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("missing ')' in {text:?}")))?;
    let mut args = BTreeMap::new();
    let mut depth = 0;
    let mut start = 0;
    let mut parts = Vec::new();
    for (i, ch) in inner.char_indices() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    for part in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('=') {
            Some((k, v)) => args.insert(k.trim(), v.trim()),
            None => args.insert("", part),
        };
    }
    Ok((text[..open].trim(), args))
}

fn num<T: std::str::FromStr>(args: &BTreeMap<&str, &str>, key: &str, text: &str) -> Result<T, Error> {
    args.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("expected numeric {key} in {text:?}")))
}

fn node_list(text: &str) -> Result<BTreeSet<NodeId>, Error> {
    let inner = text.trim().strip_prefix('[').and_then(|t| t.strip_suffix(']'));
    let inner = inner.ok_or_else(|| Error::Config(format!("expected a node list, got {text:?}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad node id {s:?}"))))
        .collect()
}

/// `replicate_all`, `single_node(2)`, `hash_split(seed=1)` or
/// `explicit{1: [R(a, b)], 2: [T(b, c)]}`.
pub fn parse_partition(text: &str) -> Result<Partition, Error> {
    if let Some(body) = text.trim().strip_prefix("explicit{").and_then(|t| t.strip_suffix('}')) {
        let mut map = BTreeMap::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            let (node, tail) = rest
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad explicit partition {text:?}")))?;
            let node: NodeId = node
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad node id {node:?}")))?;
            let tail = tail
                .trim_start()
                .strip_prefix('[')
                .ok_or_else(|| Error::Config(format!("expected '[' in {text:?}")))?;
            let (facts, tail) = tail
                .split_once(']')
                .ok_or_else(|| Error::Config(format!("expected ']' in {text:?}")))?;
            map.insert(node, Instance::from_facts(parse_atoms(facts)?));
            rest = tail.trim_start().trim_start_matches(',').trim_start();
        }
        return Ok(Partition::Explicit(map));
    }
    let (name, args) = call(text)?;
    match name {
        "replicate_all" => Ok(Partition::ReplicateAll),
        "single_node" => Ok(Partition::SingleNode(num(&args, "", text)?)),
        "hash_split" => Ok(Partition::HashSplit(num(&args, "seed", text)?)),
        _ => Err(Error::Config(format!("unknown partition {text:?}"))),
    }
}

/// `seeded(seed=1)`, `seeded(seed=1, active=[1,2])`, `constant(2)` or
/// `pinned{a:1, b:2}`.
pub fn parse_family(text: &str) -> Result<HashFamily, Error> {
    if let Some(body) = text.trim().strip_prefix("pinned{").and_then(|t| t.strip_suffix('}')) {
        let mut map = BTreeMap::new();
        for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (c, n) = item
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("bad pinned entry {item:?}")))?;
            let node = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad node id {n:?}")))?;
            map.insert(parse_constant(c.trim())?, node);
        }
        return Ok(HashFamily::pinned(map));
    }
    let (name, args) = call(text)?;
    match name {
        "seeded" => {
            let seed = num(&args, "seed", text)?;
            match args.get("active") {
                Some(a) => Ok(HashFamily::seeded_on(seed, node_list(a)?)),
                None => Ok(HashFamily::seeded(seed)),
            }
        }
        "constant" => Ok(HashFamily::constant(num(&args, "", text)?)),
        _ => Err(Error::Config(format!("unknown hash family {text:?}"))),
    }
}

pub fn parse_comm(text: &str) -> Result<CommKind, Error> {
    [CommKind::Hashing, CommKind::Broadcast, CommKind::CommFree]
        .into_iter()
        .find(|c| c.name() == text.trim())
        .ok_or_else(|| Error::Config(format!("unknown communication kind {text:?}")))
}

/// `rsfd`, `rsbv(var=2, fifo=true)` or `rsync(max_delay=4)`.
pub fn parse_semantics(text: &str) -> Result<Semantics, Error> {
    let (name, args) = call(text)?;
    match name {
        "rsfd" => Ok(Semantics::Rsfd),
        "rsbv" => {
            let fifo = match args.get("fifo").copied() {
                None | Some("false") => false,
                Some("true") => true,
                Some(v) => return Err(Error::Config(format!("fifo must be true or false, got {v:?}"))),
            };
            Ok(Semantics::Rsbv {
                var: num(&args, "var", text)?,
                fifo,
            })
        }
        "rsync" => Ok(Semantics::Rsync {
            max_delay: num(&args, "max_delay", text)?,
        }),
        _ => Err(Error::Config(format!("unknown semantics {text:?}"))),
    }
}

/// Every emit relation keyed on all of its columns, or broadcast when
/// nullary.
pub fn with_maximal_keys(spec: &TransducerSpec) -> TransducerSpec {
    let mut out = spec.clone();
    for d in &mut out.schema.emt {
        d.key = if d.arity == 0 {
            crate::Key::Inf
        } else {
            crate::Key::Finite(d.arity)
        };
    }
    out
}

/// Expected coordination class of a corpus entry under fixed delivery.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExpectedClass {
    Class(Coordination),
    Unstratifiable,
}

impl fmt::Display for ExpectedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpectedClass::Class(c) => f.write_str(c.name()),
            ExpectedClass::Unstratifiable => f.write_str("unstratifiable"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Expect {
    Output(Instance),
    Oracle,
}

/// One run of an entry and the out(*) it must produce.
#[derive(Clone, Debug)]
pub struct Case {
    pub input: Instance,
    pub config: Config,
    pub expect: Expect,
}

/// One independence check of an entry's spec.
#[derive(Clone, Debug)]
pub struct IndependenceCase {
    pub input: Instance,
    pub base: Config,
    pub dimension: Dimension,
    pub divergent: bool,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub summary: String,
    pub spec_file: Option<String>,
    pub spec: Option<TransducerSpec>,
    pub query_file: Option<String>,
    pub query: Option<Query>,
    /// Communication kind the spec is written for.
    pub comm: CommKind,
    pub class: ExpectedClass,
    /// Input of the runtime coordination verdict.
    pub probe: Option<Instance>,
    pub cases: Vec<Case>,
    pub independence: Vec<IndependenceCase>,
}

impl CorpusEntry {
    /// The spec cases run: the entry's own, else its query's broadcast
    /// rewrite.
    pub fn runnable(&self) -> Result<TransducerSpec, Error> {
        match (&self.spec, &self.query) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(q)) => rewrite_query(q, Target::Broadcast),
            (None, None) => Err(Error::Config(format!("entry {} has neither spec nor query", self.name))),
        }
    }

    /// The program the taxonomy is computed on.
    pub fn analyzed_program(&self) -> Option<Program> {
        match (&self.query, &self.spec) {
            (Some(q), _) => Some(q.program.clone()),
            (None, Some(s)) => Some(logical_program(s)),
            (None, None) => None,
        }
    }

    pub fn oracle(&self, input: &Instance) -> Result<Instance, Error> {
        self.query
            .as_ref()
            .ok_or_else(|| Error::Config(format!("entry {} has no query to evaluate", self.name)))?
            .answer(input)
    }

    /// Input arities for facts given to this entry.
    pub fn inputs(&self) -> Arities {
        match (&self.spec, &self.query) {
            (Some(s), _) => spec_inputs(s),
            (None, Some(q)) => query_inputs(q),
            (None, None) => Arities::new(),
        }
    }
}

macro_rules! corpus_files {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../corpus/", $name)))),*]
    };
}

const FILES: &[(&str, &str)] = corpus_files!(
    "manifest.toml",
    "join.dl",
    "local-join.spec",
    "broadcast-join.spec",
    "emptiness.dl",
    "emptiness.spec",
    "hashed-join.dl",
    "hashed-join.spec",
    "hashed-join-wrong-keys.spec",
    "unchained.dl",
    "unchained-filter.spec",
    "unchained-filter-rsync.spec",
    "closure-complement.dl",
    "closure-complement.spec",
    "closure.dl",
    "closure-local-first.spec",
    "unary-negation.dl",
    "unary-negation.spec",
    "filter-join.dl",
    "negated-join.dl",
    "closure-hashed.spec",
    "filtered-closure.dl",
    "filtered-closure.spec",
    "filter-count.dl",
    "filter-count.spec",
    "filter-count-combiner.spec",
    "filter-count-wrong-key.spec",
    "count.dl",
    "local-count.spec",
    "path-count.spec",
);

/// Text of a bundled corpus file.
pub fn corpus_file(name: &str) -> Option<&'static str> {
    FILES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    entry: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    summary: String,
    spec: Option<String>,
    query: Option<String>,
    comm: Option<String>,
    class: String,
    probe: Option<String>,
    #[serde(default)]
    case: Vec<RawCase>,
    #[serde(default)]
    independence: Vec<RawIndependence>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    input: String,
    #[serde(default)]
    config: ConfigFile,
    output: Option<String>,
    #[serde(default)]
    oracle: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIndependence {
    input: String,
    #[serde(default)]
    config: ConfigFile,
    dimension: String,
    verdict: String,
}

fn file(name: &str) -> Result<&'static str, Error> {
    corpus_file(name).ok_or_else(|| Error::Config(format!("corpus file {name} is not bundled")))
}

/// Loads the bundled corpus.
pub fn corpus() -> Result<Vec<CorpusEntry>, Error> {
    let manifest: Manifest = toml::from_str(file("manifest.toml")?).map_err(|e| Error::Config(e.to_string()))?;
    manifest.entry.into_iter().map(load_entry).collect()
}

fn entry_config(cf: &ConfigFile, comm: CommKind) -> Result<Config, Error> {
    let mut cfg = cf.to_config()?;
    if cf.comm.is_none() {
        cfg.comm = comm;
    }
    Ok(cfg)
}

fn load_entry(raw: RawEntry) -> Result<CorpusEntry, Error> {
    let ctx = |e: Error| Error::Config(format!("corpus entry {}: {e}", raw.name));
    let spec = raw
        .spec
        .as_deref()
        .map(|f| TransducerSpec::parse(file(f)?))
        .transpose()
        .map_err(ctx)?;
    let query = raw
        .query
        .as_deref()
        .map(|f| Query::parse(file(f)?))
        .transpose()
        .map_err(ctx)?;
    let comm = match &raw.comm {
        Some(c) => parse_comm(c).map_err(ctx)?,
        None => CommKind::Hashing,
    };
    let class = match raw.class.as_str() {
        "unstratifiable" => ExpectedClass::Unstratifiable,
        c => ExpectedClass::Class(
            Coordination::parse(c).ok_or_else(|| ctx(Error::Config(format!("unknown class {c:?}"))))?,
        ),
    };
    let mut entry = CorpusEntry {
        name: raw.name.clone(),
        summary: raw.summary,
        spec_file: raw.spec,
        spec,
        query_file: raw.query,
        query,
        comm,
        class,
        probe: None,
        cases: Vec::new(),
        independence: Vec::new(),
    };
    let inputs = entry.inputs();
    let facts = |t: &str| parse_instance(t, Some(&inputs));
    entry.probe = raw.probe.as_deref().map(facts).transpose().map_err(ctx)?;
    for c in raw.case {
        let expect = match (c.output, c.oracle) {
            (Some(o), false) => Expect::Output(Instance::from_facts(parse_atoms(&o).map_err(|e| ctx(e.into()))?)),
            (None, true) => Expect::Oracle,
            _ => {
                return Err(ctx(Error::Config(
                    "a case needs exactly one of output and oracle".into(),
                )))
            }
        };
        entry.cases.push(Case {
            input: facts(&c.input).map_err(ctx)?,
            config: entry_config(&c.config, comm).map_err(ctx)?,
            expect,
        });
    }
    for i in raw.independence {
        let dimension = Dimension::parse(&i.dimension)
            .ok_or_else(|| ctx(Error::Config(format!("unknown dimension {:?}", i.dimension))))?;
        let divergent = match i.verdict.as_str() {
            "divergent" => true,
            "convergent" => false,
            v => return Err(ctx(Error::Config(format!("unknown verdict {v:?}")))),
        };
        let mut base = entry_config(&i.config, comm).map_err(ctx)?;
        if i.config.nodes.is_none() {
            base.nodes = (1..=3).collect();
        }
        entry.independence.push(IndependenceCase {
            input: facts(&i.input).map_err(ctx)?,
            base,
            dimension,
            divergent,
        });
    }
    Ok(entry)
}

/// One line of a corpus report.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Record {
    pub kind: &'static str,
    pub entry: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entry={} result={}",
            self.kind,
            self.entry,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// A spec tried by the runtime coordination verdict, and what became of it.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub label: &'static str,
    pub status: CandidateStatus,
}

#[derive(Clone, Debug)]
pub enum CandidateStatus {
    /// The rewrite does not apply to the query.
    Inapplicable(String),
    Divergent,
    NeverQuiescent,
    Free(Box<Config>),
    NotFree,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            CandidateStatus::Inapplicable(why) => write!(f, "{}:inapplicable({why})", self.label),
            CandidateStatus::Divergent => write!(f, "{}:divergent", self.label),
            CandidateStatus::NeverQuiescent => write!(f, "{}:never-quiescent", self.label),
            CandidateStatus::Free(_) => write!(f, "{}:free", self.label),
            CandidateStatus::NotFree => write!(f, "{}:not-free", self.label),
        }
    }
}

/// Runtime coordination verdict of an entry under fixed delivery.
#[derive(Clone, Debug)]
pub struct RuntimeVerdict {
    pub candidates: Vec<Candidate>,
}

impl RuntimeVerdict {
    pub fn is_free(&self) -> bool {
        self.witness().is_some()
    }

    pub fn witness(&self) -> Option<(&'static str, &Config)> {
        self.candidates.iter().find_map(|c| match &c.status {
            CandidateStatus::Free(cfg) => Some((c.label, cfg.as_ref())),
            _ => None,
        })
    }
}

/// Budget of the runtime verdict.
pub fn runtime_budget() -> Budget {
    Budget {
        node_counts: vec![1, 2, 3],
        t0s: vec![0],
        partition_seeds: vec![1],
        hash_seeds: vec![1, 2],
        seeds: vec![0],
        max_rounds: 64,
    }
}

/// Checks the entry's spec and the broadcast and hashing rewrites of its
/// query. Divergent candidates do not compute the query and are skipped;
/// the entry is free when some remaining candidate has a witness.
pub fn runtime_verdict(entry: &CorpusEntry, input: &Instance, budget: &Budget) -> Result<RuntimeVerdict, Error> {
    let mut specs: Vec<(&'static str, Result<TransducerSpec, Error>, CommKind)> = Vec::new();
    if let Some(s) = &entry.spec {
        specs.push(("spec", Ok(s.clone()), entry.comm));
    }
    if let Some(q) = &entry.query {
        specs.push(("broadcast", rewrite_query(q, Target::Broadcast), CommKind::Broadcast));
        specs.push(("hashing", rewrite_query(q, Target::Hashing), CommKind::Hashing));
    }
    let mut candidates = Vec::new();
    for (label, spec, comm) in specs {
        let status = match spec {
            Err(e) => CandidateStatus::Inapplicable(e.to_string()),
            Ok(spec) => candidate_status(&spec, input, comm, budget)?,
        };
        candidates.push(Candidate { label, status });
    }
    Ok(RuntimeVerdict { candidates })
}

fn candidate_status(
    spec: &TransducerSpec,
    input: &Instance,
    comm: CommKind,
    budget: &Budget,
) -> Result<CandidateStatus, Error> {
    let base = Config::new(2).with_comm(comm);
    match check_independence(spec, input, &base, Dimension::All, budget) {
        Ok(Independence::Divergent { .. }) => return Ok(CandidateStatus::Divergent),
        Err(Error::Budget(_)) => return Ok(CandidateStatus::NeverQuiescent),
        Err(e) => return Err(e),
        Ok(Independence::Convergent { .. }) => {}
    }
    Ok(match check_coordination_freeness(spec, input, &base, budget) {
        Ok(Freeness::Free(cfg)) => CandidateStatus::Free(cfg),
        Ok(Freeness::NotFree { .. }) => CandidateStatus::NotFree,
        Err(Error::Budget(_)) => CandidateStatus::NeverQuiescent,
        Err(e) => return Err(e),
    })
}

fn facts(i: &Instance) -> String {
    let items: Vec<String> = i.facts().map(|f| f.to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

/// Runs every check of one entry.
pub fn check_entry(entry: &CorpusEntry, budget: &Budget) -> Vec<Record> {
    let mut out = Vec::new();
    let mut record = |kind, pass, detail: String| {
        out.push(Record {
            kind,
            entry: entry.name.clone(),
            pass,
            detail,
        })
    };

    if let Some(spec) = &entry.spec {
        let text = spec.to_string();
        let ok = TransducerSpec::parse(&text).is_ok_and(|s| s == *spec);
        record(
            "roundtrip",
            ok,
            format!("file={}", entry.spec_file.as_deref().unwrap_or("")),
        );
    }
    if let Some(q) = &entry.query {
        let ok = Query::parse(&q.to_string()).is_ok_and(|p| p == *q);
        record(
            "roundtrip",
            ok,
            format!("file={}", entry.query_file.as_deref().unwrap_or("")),
        );
    }

    let analyzed = entry.analyzed_program().map(|p| classify(&p));
    let actual = match &analyzed {
        Some(Ok(r)) => Some(ExpectedClass::Class(r.class("rsfd"))),
        Some(Err(Error::Datalog(DatalogError::NotStratifiable { .. }))) => Some(ExpectedClass::Unstratifiable),
        _ => None,
    };
    match actual {
        Some(a) => record(
            "class",
            a == entry.class,
            format!("expected={} actual={a}", entry.class),
        ),
        None => record("class", false, format!("expected={} actual=error", entry.class)),
    }

    match entry.runnable() {
        Err(e) => {
            if !entry.cases.is_empty() {
                record("case", false, format!("error={e}"));
            }
        }
        Ok(spec) => {
            for (n, case) in entry.cases.iter().enumerate() {
                let expected = match &case.expect {
                    Expect::Output(o) => Ok(o.clone()),
                    Expect::Oracle => entry.oracle(&case.input),
                };
                let result = expected.and_then(|exp| Ok((exp, run(&spec, &case.config, &case.input)?)));
                match result {
                    Ok((exp, trace)) => {
                        let got = trace.output();
                        let detail = format!(
                            "case={n} config=[{}] expected={} actual={}",
                            case.config,
                            facts(&exp),
                            got.map(facts).unwrap_or_else(|| "bottom".into())
                        );
                        record("case", got == Some(&exp), detail);
                    }
                    Err(e) => record("case", false, format!("case={n} error={e}")),
                }
            }
            for (n, ic) in entry.independence.iter().enumerate() {
                match check_independence(&spec, &ic.input, &ic.base, ic.dimension, budget) {
                    Ok(v) => {
                        let divergent = matches!(v, Independence::Divergent { .. });
                        let detail = format!(
                            "check={n} expected={} actual={}",
                            verdict_name(ic.divergent),
                            verdict_name(divergent)
                        );
                        record("independence", divergent == ic.divergent, detail);
                    }
                    Err(e) => record("independence", false, format!("check={n} error={e}")),
                }
            }
        }
    }

    if let (ExpectedClass::Class(expected), Some(probe)) = (entry.class, &entry.probe) {
        match runtime_verdict(entry, probe, &runtime_budget()) {
            Ok(v) => {
                let list: Vec<String> = v.candidates.iter().map(|c| c.to_string()).collect();
                let agree = v.is_free() == (expected == Coordination::None);
                let verdict = if v.is_free() { "free" } else { "not-free" };
                record(
                    "runtime",
                    agree,
                    format!(
                        "class={} verdict={verdict} candidates=[{}]",
                        expected.name(),
                        list.join(",")
                    ),
                );
            }
            Err(e) => record("runtime", false, format!("error={e}")),
        }
    }
    out
}

fn verdict_name(divergent: bool) -> &'static str {
    if divergent {
        "divergent"
    } else {
        "convergent"
    }
}

#[cfg(test)]
mod test {
    use super::*;

    fn arities(pairs: &[(&str, usize)]) -> Arities {
        pairs.iter().map(|(n, a)| (n.to_string(), *a)).collect()
    }

    #[test]
    fn fact_files() {
        let schema = arities(&[("R", 2), ("T", 2)]);
        let i = parse_instance("R(a,b).\nT(b,c).", Some(&schema)).unwrap();
        assert_eq!(i.len(), 2);
        assert!(parse_instance("", Some(&schema)).unwrap().is_empty());
        let err = parse_instance("R(a).", Some(&schema)).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Datalog(DatalogError::Arity {
                    expected: 2,
                    got: 1,
                    ..
                })
            ),
            "{err}"
        );
        assert!(parse_instance("S(a).", Some(&schema)).is_err());
        assert_eq!(parse_instance("S(a).", None).unwrap().len(), 1);
    }

    #[test]
    fn config_files() {
        let cfg = parse_config(
            "nodes = 3\nt0 = 5\npartition = \"hash_split(seed=2)\"\nhash = \"seeded(seed=4, active=[1,3])\"\n\
             comm = \"broadcast\"\nsemantics = \"rsbv(var=2, fifo=true)\"\nseed = 9\nmax_rounds = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.nodes, BTreeSet::from([1, 2, 3]));
        assert_eq!(cfg.t0, 5);
        assert_eq!(cfg.partition, Partition::HashSplit(2));
        assert_eq!(cfg.family, HashFamily::seeded_on(4, BTreeSet::from([1, 3])));
        assert_eq!(cfg.comm, CommKind::Broadcast);
        assert_eq!(cfg.semantics, Semantics::Rsbv { var: 2, fifo: true });
        assert_eq!((cfg.seed, cfg.max_rounds), (9, 20));
        assert_eq!(parse_config("").unwrap(), Config::new(1));
        assert!(parse_config("nodes = 2\npartition = \"single_node(3)\"").is_err());
        assert!(parse_config("colour = 1").is_err());
        assert!(parse_config("semantics = \"rsync\"").is_err());
    }

    #[test]
    fn config_values_round_trip_through_display() {
        let partitions = [
            Partition::ReplicateAll,
            Partition::SingleNode(2),
            Partition::HashSplit(7),
            parse_partition("explicit{1: [R(a, b)], 2: [T(b, c), T(c, d)]}").unwrap(),
        ];
        for p in partitions {
            assert_eq!(parse_partition(&p.to_string()).unwrap(), p);
        }
        let families = [
            HashFamily::seeded(3),
            HashFamily::seeded_on(3, BTreeSet::from([2, 4])),
            HashFamily::constant(2),
            parse_family("pinned{a:1, 7:2}").unwrap(),
        ];
        for f in families {
            assert_eq!(parse_family(&f.to_string()).unwrap(), f);
        }
        for s in [
            Semantics::Rsfd,
            Semantics::Rsbv { var: 3, fifo: false },
            Semantics::Rsync { max_delay: 5 },
        ] {
            assert_eq!(parse_semantics(&s.to_string()).unwrap(), s);
        }
    }

    #[test]
    fn corpus_loads_and_round_trips() {
        let entries = corpus().unwrap();
        let names: BTreeSet<&str> = entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names.len(), entries.len());
        for e in &entries {
            if let Some(s) = &e.spec {
                assert_eq!(&TransducerSpec::parse(&s.to_string()).unwrap(), s, "{}", e.name);
            }
            if let Some(q) = &e.query {
                assert_eq!(&Query::parse(&q.to_string()).unwrap(), q, "{}", e.name);
            }
        }
        for (name, _) in FILES {
            let used = entries
                .iter()
                .any(|e| e.spec_file.as_deref() == Some(name) || e.query_file.as_deref() == Some(name));
            assert!(used || *name == "manifest.toml", "{name} is not referenced");
        }
    }

    #[test]
    fn maximal_keys() {
        let e = corpus()
            .unwrap()
            .into_iter()
            .find(|e| e.name == "unchained-filter")
            .unwrap();
        let text = with_maximal_keys(e.spec.as_ref().unwrap()).to_string();
        assert!(text.contains("decl S/2 key=2."), "{text}");
        assert!(text.contains("decl U/1 key=1."), "{text}");
    }
}
