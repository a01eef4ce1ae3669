//! Static classification of queries and specs, and runtime audits of a
//! parallelization strategy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::datalog::{
    stratify, Atom, CompiledProgram, Const, Fact, Instance, Literal, Program, RelationDecl, Rule, Term,
};
use crate::network::{Config, Network, Semantics};
use crate::strategy::hash_address;
use crate::transducer::{NodeId, Role, Section, TransducerSpec};
use crate::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Coordination {
    None,
    Snapshot,
    Broadcast,
    Synchronized,
}

impl Coordination {
    pub fn name(self) -> &'static str {
        match self {
            Coordination::None => "none",
            Coordination::Snapshot => "snapshot",
            Coordination::Broadcast => "broadcast",
            Coordination::Synchronized => "synchronized",
        }
    }

    pub fn parse(s: &str) -> Option<Coordination> {
        [
            Coordination::None,
            Coordination::Snapshot,
            Coordination::Broadcast,
            Coordination::Synchronized,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

pub const SEMANTICS: [&str; 3] = ["rsfd", "rsbv", "rsync"];

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TaxonomyReport {
    /// Syntactic monotonicity; `false` reads as unknown, not as non-monotone.
    pub monotone: bool,
    pub chained: bool,
    pub unchained_rules: Vec<String>,
    pub recursion_bounded: bool,
    /// Shown hashing by the sufficient conditions; `false` means not shown.
    pub hashing: bool,
    /// Keyed by semantics name.
    pub embarrassingly_parallel: BTreeMap<&'static str, bool>,
    pub coordination: BTreeMap<&'static str, Coordination>,
    pub notes: Vec<String>,
}

impl TaxonomyReport {
    pub fn class(&self, semantics: &str) -> Coordination {
        self.coordination[semantics]
    }

    /// One-line summary for `semantics`.
    pub fn summary(&self, semantics: &str) -> String {
        let mut words = vec![
            if self.monotone { "monotone" } else { "unknown-monotone" }.to_string(),
            if self.chained { "chained" } else { "unchained" }.to_string(),
        ];
        if !self.monotone {
            words.push(
                if self.recursion_bounded {
                    "recursion-bounded"
                } else {
                    "not-recursion-bounded"
                }
                .into(),
            );
        }
        words.push(if self.hashing { "hashing" } else { "not-shown-hashing" }.into());
        match self.class(semantics) {
            Coordination::None => words.push(format!("coordination-free({semantics})")),
            c => words.push(format!("{}-coordination({semantics})", c.name())),
        }
        words.join(" ")
    }

    /// Line-delimited records with a leading record type.
    pub fn structured(&self) -> String {
        let mut out = format!(
            "taxonomy monotone={} chained={} recursion_bounded={} hashing={}\n",
            if self.monotone { "true" } else { "unknown" },
            self.chained,
            self.recursion_bounded,
            self.hashing
        );
        for r in &self.unchained_rules {
            out.push_str(&format!("unchained rule={r}\n"));
        }
        for s in SEMANTICS {
            out.push_str(&format!(
                "class semantics={s} coordination={} embarrassingly_parallel={}\n",
                self.coordination[s].name(),
                self.embarrassingly_parallel[s]
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("note {n}\n"));
        }
        out
    }
}

impl fmt::Display for TaxonomyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.structured())
    }
}

/// Whether a rule's body atoms form one connected variable-sharing
/// component with no nullary atom.
pub fn rule_is_chained(rule: &Rule) -> bool {
    let atoms: Vec<&Atom> = rule.body.iter().filter_map(Literal::atom).collect();
    if atoms.iter().any(|a| a.terms.is_empty()) {
        return false;
    }
    if atoms.len() <= 1 {
        return true;
    }
    // Variables equated by a plain `x = y` comparison are aliases.
    let mut alias: BTreeMap<&str, &str> = BTreeMap::new();
    fn root<'a>(alias: &BTreeMap<&'a str, &'a str>, mut v: &'a str) -> &'a str {
        while let Some(&p) = alias.get(v) {
            v = p;
        }
        v
    }
    for lit in &rule.body {
        if let Literal::Cmp(
            crate::datalog::Expr::Term(Term::Var(a)),
            crate::datalog::CmpOp::Eq,
            crate::datalog::Expr::Term(Term::Var(b)),
        ) = lit
        {
            let (ra, rb) = (root(&alias, a), root(&alias, b));
            if ra != rb {
                alias.insert(ra, rb);
            }
        }
    }
    let vars: Vec<BTreeSet<&str>> = atoms
        .iter()
        .map(|a| a.vars().map(|v| root(&alias, v)).collect())
        .collect();
    let mut reached = vec![false; atoms.len()];
    reached[0] = true;
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        for j in 0..atoms.len() {
            if !reached[j] && !vars[i].is_disjoint(&vars[j]) {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Whether every rule is chained, with the offending rules.
pub fn is_chained(q: &Program) -> (bool, Vec<String>) {
    let bad: Vec<String> = q
        .rules
        .iter()
        .filter(|r| !rule_is_chained(r))
        .map(|r| r.to_string())
        .collect();
    (bad.is_empty(), bad)
}

/// Whether recursion is confined to the top of every stratification: at
/// most one recursive component, and nothing depends on it.
pub fn is_recursion_bounded(q: &Program) -> Result<bool, Error> {
    let strata = stratify(q)?;
    let deps = dependencies(q);
    let recursive: Vec<&BTreeSet<String>> = strata
        .iter()
        .filter(|s| s.len() > 1 || s.iter().any(|r| deps.get(r).is_some_and(|d| d.contains(r))))
        .collect();
    match recursive.as_slice() {
        [] => Ok(true),
        [top] => Ok(!q
            .rules
            .iter()
            .any(|r| !top.contains(&r.head.rel) && r.body_relations().any(|b| top.contains(b)))),
        _ => Ok(false),
    }
}

/// Head relation → relations its rules read.
fn dependencies(q: &Program) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &q.rules {
        out.entry(r.head.rel.clone())
            .or_default()
            .extend(r.body_relations().map(str::to_string));
    }
    out
}

/// Classifies a query.
pub fn classify(q: &Program) -> Result<TaxonomyReport, Error> {
    let monotone = q.is_monotone();
    let (chained, unchained_rules) = is_chained(q);
    let rb = is_recursion_bounded(q)?;
    let hashing = (monotone && chained) || (rb && chained);
    let mut notes = Vec::new();
    let rsfd = if monotone && chained {
        Coordination::None
    } else if monotone {
        Coordination::Broadcast
    } else if !rb {
        Coordination::Synchronized
    } else if chained {
        Coordination::Snapshot
    } else {
        notes.push("non-monotone recursion-bounded unchained query: placed in broadcast class".to_string());
        Coordination::Broadcast
    };
    if !monotone {
        notes.push("monotonicity is syntactic; the query may still be semantically monotone".to_string());
    }
    if !hashing {
        notes.push("outside the sufficient conditions for hashing; not shown hashing".to_string());
    }
    if rsfd == Coordination::Snapshot {
        notes.push("rsbv: snapshot coordination requires injected protocol".to_string());
    }
    let rsync = if monotone { Coordination::None } else { rsfd };
    let ep = monotone || (rb && chained);
    Ok(TaxonomyReport {
        monotone,
        chained,
        unchained_rules,
        recursion_bounded: rb,
        hashing,
        embarrassingly_parallel: SEMANTICS.iter().map(|&s| (s, ep)).collect(),
        coordination: BTreeMap::from([("rsfd", rsfd), ("rsbv", rsfd), ("rsync", rsync)]),
        notes,
    })
}

/// The query a spec computes as one program: emit, output and aux heads
/// keep their base names, insert/delete rules are dropped, and nullary
/// memory guards are removed from bodies.
pub fn logical_program(spec: &TransducerSpec) -> Program {
    let mem = spec.schema.names(Section::Mem);
    let guard = |a: &Atom| a.terms.is_empty() && mem.contains(&a.rel);
    let mut decls: Vec<RelationDecl> = spec
        .schema
        .decls()
        .map(|(_, d)| RelationDecl::new(&d.name, d.arity))
        .collect();
    for sys in [crate::transducer::TIME, crate::transducer::ID, crate::transducer::ALL] {
        decls.push(RelationDecl::new(sys, 1));
    }
    let rules = spec
        .rules
        .iter()
        .filter(|r| !matches!(r.role, Role::Ins | Role::Del))
        .map(|r| {
            let mut rule = r.rule.clone();
            rule.body.retain(|l| !l.atom().is_some_and(guard));
            rule
        })
        .collect();
    Program { decls, rules }
}

/// Classifies the query computed by a spec.
pub fn classify_spec(spec: &TransducerSpec) -> Result<TaxonomyReport, Error> {
    classify(&logical_program(spec))
}

/// Emit relations whose content reaches a negated literal or a COUNT/SUM
/// body in the spec's logical program.
pub fn negation_relevant_emits(spec: &TransducerSpec) -> BTreeSet<String> {
    let q = logical_program(spec);
    let mut sealed: BTreeSet<String> = BTreeSet::new();
    for r in &q.rules {
        for a in r.body.iter().filter_map(Literal::atom) {
            if r.reads_non_monotonically(&a.rel) {
                sealed.insert(a.rel.clone());
            }
        }
    }
    let mut readers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &q.rules {
        for b in r.body_relations() {
            readers.entry(b.to_string()).or_default().insert(r.head.rel.clone());
        }
    }
    spec.schema
        .emt
        .iter()
        .map(|d| d.name.clone())
        .filter(|e| {
            let mut seen = BTreeSet::from([e.clone()]);
            let mut stack = vec![e.clone()];
            while let Some(x) = stack.pop() {
                if sealed.contains(&x) {
                    return true;
                }
                for y in readers.get(&x).into_iter().flatten() {
                    if seen.insert(y.clone()) {
                        stack.push(y.clone());
                    }
                }
            }
            false
        })
        .collect()
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LiveViolation {
    pub rule: String,
    pub facts: Vec<Fact>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SafetyViolation {
    pub rule: String,
    pub fact: Fact,
    pub node: NodeId,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProperViolation {
    pub fact: Fact,
    pub node: NodeId,
    pub round: i64,
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct StrategyAudit {
    pub live: Vec<LiveViolation>,
    pub safety: Vec<SafetyViolation>,
    pub proper: Vec<ProperViolation>,
}

impl StrategyAudit {
    pub fn is_clean(&self) -> bool {
        self.live.is_empty() && self.safety.is_empty() && self.proper.is_empty()
    }
}

/// Valuations of `atoms` (plus filters) over `inst`, as variable maps.
fn valuations(atoms: &[Atom], filters: &[Literal], inst: &Instance) -> Vec<BTreeMap<String, Const>> {
    let mut vars: Vec<String> = Vec::new();
    let mut decls: BTreeMap<String, usize> = BTreeMap::new();
    let mut body = Vec::new();
    for (k, a) in atoms.iter().enumerate() {
        decls.insert(a.rel.clone(), a.terms.len());
        // Wildcards become named so that positions stay aligned.
        let terms = a
            .terms
            .iter()
            .enumerate()
            .map(|(p, t)| match t {
                Term::Wild => Term::Var(format!("_w{k}_{p}")),
                t => t.clone(),
            })
            .collect();
        body.push(Literal::Pos(Atom::new(&a.rel, terms)));
    }
    for l in &body {
        for v in l.atom().unwrap().vars() {
            if !vars.iter().any(|x| x == v) {
                vars.push(v.to_string());
            }
        }
    }
    for f in filters {
        let mut fv = Vec::new();
        if let Literal::Cmp(a, _, b) = f {
            a.vars(&mut fv);
            b.vars(&mut fv);
        }
        if fv.iter().all(|v| vars.contains(v)) {
            body.push(f.clone());
        }
    }
    let head = Atom::new("valuation#", vars.iter().map(|v| Term::var(v)).collect());
    let mut program = Program {
        decls: decls.iter().map(|(r, &n)| RelationDecl::new(r, n)).collect(),
        rules: vec![Rule::plain(head, body)],
    };
    program.decls.push(RelationDecl::new("valuation#", vars.len()));
    let Ok(compiled) = CompiledProgram::new(program) else {
        return vec![];
    };
    let result = compiled.evaluate(&inst.restrict(|r| decls.contains_key(r)));
    result
        .get("valuation#")
        .into_iter()
        .flatten()
        .map(|t| vars.iter().cloned().zip(t.iter().cloned()).collect())
        .collect()
}

fn ground(a: &Atom, val: &BTreeMap<String, Const>) -> Option<Fact> {
    let args = a
        .terms
        .iter()
        .map(|t| match t {
            Term::Var(v) => val.get(v).cloned(),
            Term::Const(c) => Some(c.clone()),
            Term::Wild => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(Fact::new(&a.rel, args))
}

fn matches(a: &Atom, val: &BTreeMap<String, Const>, f: &Fact) -> bool {
    a.rel == f.rel
        && a.terms.iter().zip(&f.args).all(|(t, c)| match t {
            Term::Var(v) => val.get(v).is_none_or(|x| x == c),
            Term::Const(k) => k == c,
            Term::Wild => true,
        })
}

/// Audits a hashing strategy over sample runs: liveness (joining emitted
/// facts with no common destination), safety (negation of an emitted fact
/// evaluated at a node outside its destinations) and proper instances
/// (addressed facts missing from the next round's inbox).
pub fn check_strategy(spec: &TransducerSpec, cfg: &Config, samples: &[Instance]) -> Result<StrategyAudit, Error> {
    let net = Network::new(spec)?;
    let router = net.router(cfg);
    let emt = spec.schema.names(Section::Emt);
    let mut audit = StrategyAudit::default();
    for input in samples {
        let trace = net.run(cfg, input)?;
        let mut global = Instance::new();
        for e in trace.emits() {
            global.insert_fact(e.fact.clone());
        }
        let dsts = |f: &Fact| hash_address(f, spec.schema.key(&f.rel), &cfg.family, &cfg.nodes);
        for sr in &spec.rules {
            let rule = &sr.rule;
            let filters: Vec<Literal> = rule
                .body
                .iter()
                .filter(|l| matches!(l, Literal::Cmp(..)))
                .cloned()
                .collect();
            let emitted: Vec<Atom> = rule
                .positive_atoms()
                .filter(|a| emt.contains(&a.rel))
                .cloned()
                .collect();
            if emitted.len() >= 2 {
                for val in valuations(&emitted, &filters, &global) {
                    let facts: Vec<Fact> = emitted.iter().filter_map(|a| ground(a, &val)).collect();
                    let mut common: Option<BTreeSet<NodeId>> = None;
                    for f in &facts {
                        let d = dsts(f)?;
                        common = Some(match common {
                            None => d,
                            Some(c) => c.intersection(&d).copied().collect(),
                        });
                    }
                    if common.is_some_and(|c| c.is_empty()) {
                        let violation = LiveViolation {
                            rule: sr.to_string(),
                            facts,
                        };
                        if !audit.live.contains(&violation) {
                            audit.live.push(violation);
                        }
                    }
                }
            }
            for neg in rule.negative_atoms().filter(|a| emt.contains(&a.rel)) {
                let positive: Vec<Atom> = rule.positive_atoms().cloned().collect();
                for &node in &cfg.nodes {
                    let Some(final_state) = trace
                        .rounds
                        .last()
                        .and_then(|r| r.nodes.iter().find(|n| n.node == node))
                    else {
                        continue;
                    };
                    let mut local = cfg
                        .partition
                        .split(input, &cfg.nodes)?
                        .remove(&node)
                        .unwrap_or_default();
                    local.extend_from(&final_state.mem);
                    local.extend_from(&final_state.out);
                    local.extend_from(&trace.received_by(node, trace.last_round()));
                    local.insert(crate::transducer::ID, vec![Const::Int(node as i64)]);
                    for j in router.active() {
                        local.insert(crate::transducer::ALL, vec![Const::Int(j as i64)]);
                    }
                    let vals = if positive.is_empty() {
                        vec![BTreeMap::new()]
                    } else {
                        valuations(&positive, &filters, &local)
                    };
                    for val in vals {
                        for f in global.facts().filter(|f| matches(neg, &val, f)) {
                            if !dsts(&f)?.contains(&node) {
                                let v = SafetyViolation {
                                    rule: sr.to_string(),
                                    fact: f,
                                    node,
                                };
                                if !audit.safety.contains(&v) {
                                    audit.safety.push(v);
                                }
                            }
                        }
                    }
                }
            }
        }
        if cfg.semantics == Semantics::Rsfd {
            for e in trace.emits() {
                for &d in &e.dsts {
                    if let Some(snap) = trace.snapshot(d, e.round + 1) {
                        if !snap.recv.contains_fact(&e.fact) {
                            audit.proper.push(ProperViolation {
                                fact: e.fact.clone(),
                                node: d,
                                round: e.round + 1,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(audit)
}
