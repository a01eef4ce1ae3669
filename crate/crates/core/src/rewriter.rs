//! Source-to-source constructions: broadcast and hashing networks for a
//! query, and snapshot-coordination injection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::analyzer::classify;
use crate::datalog::{
    parse_document, AggKind, Atom, CmpOp, Expr, Head, HeadArg, Instance, Item, Key, Literal, Program, RelationDecl,
    Rule, Term,
};
use crate::transducer::{Role, Section, SpecRule, TransducerSpec, ALL, ID};
use crate::Error;

/// Prefix reserved for generated relations.
pub const RESERVED: &str = "sc_";

/// Memory flag guarding the query in the broadcast network.
pub const READY: &str = "Ready";

/// `rel` with primes spelled out, usable inside generated names.
pub fn sanitize(rel: &str) -> String {
    rel.replace('\'', "p")
}

/// The NULL relation that seals `rel`.
pub fn null_relation(rel: &str) -> String {
    format!("{RESERVED}null_{}", sanitize(rel))
}

fn primed(rel: &str) -> String {
    format!("{rel}'")
}

/// A query with designated output relations. Inputs are the declared
/// relations no rule derives.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Query {
    pub program: Program,
    pub outputs: BTreeSet<String>,
}

impl Query {
    pub fn new(program: Program, outputs: BTreeSet<String>) -> Result<Query, Error> {
        program.validate()?;
        crate::datalog::stratify(&program)?;
        let derived = program.derived();
        if let Some(bad) = outputs.iter().find(|o| !derived.contains(*o)) {
            return Err(Error::Rewrite(format!("output {bad} is not derived by any rule")));
        }
        if let Some(bad) = program.decls.iter().find(|d| d.name.starts_with(RESERVED)) {
            return Err(Error::Rewrite(format!(
                "relation {} uses the reserved prefix {RESERVED}",
                bad.name
            )));
        }
        Ok(Query { program, outputs })
    }

    /// The query's output relations evaluated on one node.
    pub fn answer(&self, input: &Instance) -> Result<Instance, Error> {
        let all = crate::datalog::evaluate(&self.program, input)?;
        Ok(all.restrict(|r| self.outputs.contains(r)))
    }

    /// Parses a program whose declarations may sit under `@in`, `@idb` or
    /// `@out`. Without an `@out` section every derived relation is output.
    pub fn parse(text: &str) -> Result<Query, Error> {
        let doc = parse_document(text)?;
        let mut program = Program::default();
        let mut outputs = BTreeSet::new();
        let mut inputs = BTreeSet::new();
        for (section, item) in doc.items {
            match item {
                Item::Decl(d) => {
                    match section.as_ref().map(|(s, sp)| (s.as_str(), sp)) {
                        None | Some(("idb", _)) => {}
                        Some(("in", _)) => {
                            inputs.insert(d.name.clone());
                        }
                        Some(("out", _)) => {
                            outputs.insert(d.name.clone());
                        }
                        Some((other, sp)) => {
                            return Err(Error::Rewrite(format!(
                                "{}:{}: unknown query section @{other}",
                                sp.line, sp.col
                            )))
                        }
                    }
                    program.decls.push(d);
                }
                Item::Rule(head, body, span) => program.rules.push(Rule {
                    head: head.into_head(),
                    body,
                    span,
                }),
            }
        }
        let derived = program.derived();
        if let Some(bad) = inputs.iter().find(|i| derived.contains(*i)) {
            return Err(Error::Rewrite(format!("input relation {bad} is derived by a rule")));
        }
        if outputs.is_empty() {
            outputs = derived;
        }
        Query::new(program, outputs)
    }

    pub fn inputs(&self) -> BTreeSet<String> {
        self.program.extensional()
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inputs = self.inputs();
        let section = |n: &str| match (inputs.contains(n), self.outputs.contains(n)) {
            (true, _) => "in",
            (false, true) => "out",
            (false, false) => "idb",
        };
        for name in ["in", "idb", "out"] {
            let decls: Vec<&RelationDecl> = self.program.decls.iter().filter(|d| section(&d.name) == name).collect();
            if decls.is_empty() {
                continue;
            }
            writeln!(f, "@{name}")?;
            for d in decls {
                writeln!(f, "decl {}/{}{}.", d.name, d.arity, d.key)?;
            }
        }
        for r in &self.program.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Target {
    Broadcast,
    Hashing,
    SnapshotFifo,
    SnapshotGeneric,
}

impl Target {
    pub fn parse(s: &str) -> Option<Target> {
        match s {
            "broadcast" => Some(Target::Broadcast),
            "hashing" => Some(Target::Hashing),
            "snapshot-fifo" => Some(Target::SnapshotFifo),
            "snapshot-generic" => Some(Target::SnapshotGeneric),
            _ => None,
        }
    }
}

/// A spec under construction with name bookkeeping.
struct Builder {
    spec: TransducerSpec,
    taken: BTreeSet<String>,
    counter: usize,
}

impl Builder {
    fn new(spec: TransducerSpec, also_taken: impl IntoIterator<Item = String>) -> Builder {
        let mut taken: BTreeSet<String> = spec.schema.decls().map(|(_, d)| d.name.clone()).collect();
        taken.extend(also_taken);
        Builder {
            spec,
            taken,
            counter: 0,
        }
    }

    fn declare(&mut self, sec: Section, decl: RelationDecl) -> Result<(), Error> {
        if !self.taken.insert(decl.name.clone()) {
            return Err(Error::Rewrite(format!(
                "generated relation {} collides with an existing one",
                decl.name
            )));
        }
        self.spec.schema.section_mut(sec).push(decl);
        Ok(())
    }

    fn fresh(&mut self, stem: &str) -> String {
        loop {
            self.counter += 1;
            let name = format!("{RESERVED}{stem}{}", self.counter);
            if !self.taken.contains(&name) {
                return name;
            }
        }
    }

    fn rule(&mut self, role: Role, head: Head, body: Vec<Literal>) {
        self.spec.rules.push(SpecRule::new(role, Rule::new(head, body)));
    }

    fn finish(self) -> Result<TransducerSpec, Error> {
        self.spec.validate()?;
        Ok(self.spec)
    }
}

fn pos(rel: &str, terms: Vec<Term>) -> Literal {
    Literal::Pos(Atom::new(rel, terms))
}

fn nullary(rel: &str) -> Literal {
    pos(rel, Vec::new())
}

fn var_terms(vars: &[String]) -> Vec<Term> {
    vars.iter().map(|v| Term::var(v)).collect()
}

fn plain_head(rel: &str, terms: Vec<Term>) -> Head {
    Head::from_atom(Atom::new(rel, terms))
}

fn rename_atoms(rule: &Rule, f: &dyn Fn(&str) -> Option<String>) -> Rule {
    let mut r = rule.clone();
    for l in &mut r.body {
        if let Some(a) = l.atom_mut() {
            if let Some(n) = f(&a.rel) {
                a.rel = n;
            }
        }
    }
    r
}

fn check_prime_collisions(q: &Query, rels: &BTreeSet<String>) -> Result<(), Error> {
    for r in rels {
        if q.program.decl(&primed(r)).is_some() {
            return Err(Error::Rewrite(format!(
                "relation {} collides with the primed copy of {r}",
                primed(r)
            )));
        }
    }
    Ok(())
}

/// Shuffles every input relation to all nodes as a primed copy and runs
/// the query over the primed copies. Non-monotone queries wait one round
/// behind a `Ready` flag, so they only read complete inputs.
pub fn to_broadcast_network(q: &Query) -> Result<TransducerSpec, Error> {
    let inputs = q.inputs();
    check_prime_collisions(q, &inputs)?;
    let monotone = q.program.is_monotone();
    if !monotone && q.program.decl(READY).is_some() {
        return Err(Error::Rewrite(format!(
            "relation {READY} collides with the broadcast guard"
        )));
    }
    let read: BTreeSet<&str> = q.program.rules.iter().flat_map(|r| r.body_relations()).collect();
    let mut b = Builder::new(TransducerSpec::default(), []);
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut roles: BTreeMap<String, Role> = BTreeMap::new();
    for d in &q.program.decls {
        if inputs.contains(&d.name) {
            b.declare(Section::Db, RelationDecl::new(&d.name, d.arity))?;
            b.declare(Section::Emt, RelationDecl::keyed(&primed(&d.name), d.arity, Key::Inf))?;
            let atom = Atom::with_vars(&d.name, d.arity, "u");
            b.rule(
                Role::Emt,
                plain_head(&primed(&d.name), atom.terms.clone()),
                vec![Literal::Pos(atom)],
            );
            rename.insert(d.name.clone(), primed(&d.name));
        } else if q.outputs.contains(&d.name) && !read.contains(d.name.as_str()) {
            b.declare(Section::Out, RelationDecl::new(&d.name, d.arity))?;
            roles.insert(d.name.clone(), Role::Out);
        } else {
            let name = if q.outputs.contains(&d.name) {
                format!("{RESERVED}idb_{}", sanitize(&d.name))
            } else {
                d.name.clone()
            };
            b.declare(Section::Aux, RelationDecl::new(&name, d.arity))?;
            if q.outputs.contains(&d.name) {
                b.declare(Section::Out, RelationDecl::new(&d.name, d.arity))?;
                let atom = Atom::with_vars(&name, d.arity, "u");
                b.rule(
                    Role::Out,
                    plain_head(&d.name, atom.terms.clone()),
                    vec![Literal::Pos(atom)],
                );
            }
            roles.insert(d.name.clone(), Role::Aux);
            rename.insert(d.name.clone(), name);
        }
    }
    if !monotone {
        b.declare(Section::Mem, RelationDecl::new(READY, 0))?;
        b.rule(
            Role::Ins,
            plain_head(READY, vec![]),
            vec![Literal::Neg(Atom::new(READY, vec![]))],
        );
    }
    for r in &q.program.rules {
        let mut rule = rename_atoms(r, &|rel| rename.get(rel).cloned());
        if let Some(n) = rename.get(&rule.head.rel) {
            rule.head.rel = n.clone();
        }
        if !monotone {
            rule.body.push(nullary(READY));
        }
        b.rule(roles[&r.head.rel], rule.head, rule.body);
    }
    b.finish()
}

/// Replaces variables equated by plain `x = y` comparisons with one
/// representative and drops those comparisons.
fn unify_equalities(rule: &Rule) -> Rule {
    let mut r = rule.clone();
    loop {
        let found = r.body.iter().position(
            |l| matches!(l, Literal::Cmp(Expr::Term(Term::Var(a)), CmpOp::Eq, Expr::Term(Term::Var(b))) if a != b),
        );
        let Some(i) = found else { return r };
        let Literal::Cmp(Expr::Term(Term::Var(keep)), _, Expr::Term(Term::Var(gone))) = r.body.remove(i) else {
            unreachable!()
        };
        let sub = |t: &mut Term| {
            if *t == Term::Var(gone.clone()) {
                *t = Term::Var(keep.clone());
            }
        };
        for l in &mut r.body {
            match l {
                Literal::Pos(a) | Literal::Neg(a) => a.terms.iter_mut().for_each(sub),
                Literal::Cmp(x, _, y) => {
                    subst_expr(x, &gone, &keep);
                    subst_expr(y, &gone, &keep);
                }
            }
        }
        for a in &mut r.head.args {
            match a {
                HeadArg::Term(t) => sub(t),
                HeadArg::Agg(_, ts) => ts.iter_mut().for_each(sub),
            }
        }
    }
}

fn subst_expr(e: &mut Expr, from: &str, to: &str) {
    match e {
        Expr::Term(Term::Var(v)) if v == from => *v = to.to_string(),
        Expr::Term(_) => {}
        Expr::Bin(a, _, b) => {
            subst_expr(a, from, to);
            subst_expr(b, from, to);
        }
    }
}

/// Distinct variables of `lits` in order of first occurrence.
fn bound_vars(lits: &[Literal]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut push = |v: String| {
        if !out.contains(&v) {
            out.push(v);
        }
    };
    for l in lits {
        match l {
            Literal::Pos(a) => a.vars().for_each(|v| push(v.to_string())),
            Literal::Cmp(x, _, y) => {
                let mut vs = Vec::new();
                x.vars(&mut vs);
                y.vars(&mut vs);
                vs.into_iter().for_each(&mut push);
            }
            Literal::Neg(_) => {}
        }
    }
    out
}

fn maximal_key(arity: usize) -> Key {
    if arity == 0 {
        Key::Inf
    } else {
        Key::Finite(arity)
    }
}

fn prefix_key(k: usize) -> Key {
    if k == 0 {
        Key::Inf
    } else {
        Key::Finite(k)
    }
}

impl Builder {
    /// Emits `body` into a fresh relation over `terms` and returns the atom
    /// that reads it back.
    fn stage(&mut self, stem: &str, terms: Vec<Term>, key: Key, body: Vec<Literal>) -> Result<Atom, Error> {
        let name = self.fresh(stem);
        self.declare(Section::Emt, RelationDecl::keyed(&name, terms.len(), key))?;
        self.rule(Role::Emt, plain_head(&name, terms.clone()), body);
        Ok(Atom::new(&name, terms))
    }

    /// Compiles one primed query rule into emission rules whose joins,
    /// negations and groupings each run on a node that holds every fact
    /// they read.
    fn compile_hashing_rule(&mut self, rule: &Rule) -> Result<(), Error> {
        let rule = unify_equalities(rule);
        let mut positives: Vec<Atom> = Vec::new();
        let mut negatives: Vec<Atom> = Vec::new();
        let mut cmps: Vec<Literal> = Vec::new();
        for l in &rule.body {
            match l {
                Literal::Pos(a) => positives.push(a.clone()),
                Literal::Neg(a) => negatives.push(a.clone()),
                Literal::Cmp(..) => cmps.push(l.clone()),
            }
        }
        let mut body: Vec<Literal> = Vec::new();
        if positives.len() > 2 {
            let mut order = vec![positives.remove(0)];
            while !positives.is_empty() {
                let seen: BTreeSet<&str> = order.iter().flat_map(|a| a.vars()).collect();
                let i = positives
                    .iter()
                    .position(|a| a.vars().any(|v| seen.contains(v)))
                    .unwrap_or(0);
                order.push(positives.remove(i));
            }
            let last = order.pop().unwrap();
            let mut acc = order.remove(0);
            for a in order {
                let pair = vec![Literal::Pos(acc), Literal::Pos(a)];
                let vars = bound_vars(&pair);
                acc = self.stage("join", var_terms(&vars), maximal_key(vars.len()), pair)?;
            }
            body.push(Literal::Pos(acc));
            body.push(Literal::Pos(last));
        } else {
            body.extend(positives.into_iter().map(Literal::Pos));
        }
        body.extend(cmps);
        for neg in negatives {
            let mut terms: Vec<Term> = Vec::new();
            for t in &neg.terms {
                if *t != Term::Wild && !terms.contains(t) {
                    terms.push(t.clone());
                }
            }
            let k = terms.len();
            for v in bound_vars(&body) {
                if !terms.contains(&Term::Var(v.clone())) {
                    terms.push(Term::Var(v));
                }
            }
            let routed = self.stage("neg", terms, prefix_key(k), body)?;
            body = vec![Literal::Pos(routed), Literal::Neg(neg)];
        }
        if rule.head.aggregate().is_some() {
            let mut group: Vec<Term> = Vec::new();
            for a in &rule.head.args {
                if let HeadArg::Term(t @ Term::Var(_)) = a {
                    if !group.contains(t) {
                        group.push(t.clone());
                    }
                }
            }
            let k = group.len();
            for a in &rule.head.args {
                if let HeadArg::Agg(_, ts) = a {
                    for t in ts.iter().filter(|t| matches!(t, Term::Var(_))) {
                        if !group.contains(t) {
                            group.push(t.clone());
                        }
                    }
                }
            }
            let grouped = self.stage("group", group, prefix_key(k), body)?;
            body = vec![Literal::Pos(grouped)];
        }
        self.rule(Role::Emt, rule.head, body);
        Ok(())
    }
}

/// Shuffles every input relation under maximal keys and evaluates the
/// query as emission rules, so that facts sharing a constant meet at that
/// constant's node. Rules reading an emitted relation under negation or a
/// stratified aggregate wait for a `Stage` flag that is raised in the round
/// that relation becomes complete under fixed delivery.
pub fn to_hashing_network(q: &Query) -> Result<TransducerSpec, Error> {
    let report = classify(&q.program)?;
    if !report.chained {
        return Err(Error::Rewrite(format!(
            "query is not chained: {}",
            report.unchained_rules.join("; ")
        )));
    }
    if !report.monotone && !report.recursion_bounded {
        return Err(Error::Rewrite("non-monotone query is not recursion-bounded".into()));
    }
    if q.program.rules.iter().any(|r| r.aggregate() == Some(AggKind::FsCount)) {
        return Err(Error::Rewrite(
            "fs_count is not supported by the hashing network".into(),
        ));
    }
    let all: BTreeSet<String> = q.program.decls.iter().map(|d| d.name.clone()).collect();
    check_prime_collisions(q, &all)?;
    let inputs = q.inputs();
    let mut b = Builder::new(TransducerSpec::default(), []);
    for d in &q.program.decls {
        let p = primed(&d.name);
        b.declare(Section::Emt, RelationDecl::keyed(&p, d.arity, maximal_key(d.arity)))?;
        if inputs.contains(&d.name) {
            b.declare(Section::Db, RelationDecl::new(&d.name, d.arity))?;
            let atom = Atom::with_vars(&d.name, d.arity, "u");
            b.rule(Role::Emt, plain_head(&p, atom.terms.clone()), vec![Literal::Pos(atom)]);
        }
        if q.outputs.contains(&d.name) {
            b.declare(Section::Out, RelationDecl::new(&d.name, d.arity))?;
            let atom = Atom::with_vars(&p, d.arity, "u");
            b.rule(
                Role::Out,
                plain_head(&d.name, atom.terms.clone()),
                vec![Literal::Pos(atom)],
            );
        }
    }
    for r in &q.program.rules {
        let mut rule = rename_atoms(r, &|rel| Some(primed(rel)));
        rule.head.rel = primed(&rule.head.rel);
        b.compile_hashing_rule(&rule)?;
    }
    add_stage_guards(&mut b, &inputs.iter().map(|r| primed(r)).collect())?;
    b.finish()
}

/// Round offsets at which each emitted relation is complete under fixed
/// delivery, `None` when it depends on recursion.
fn completion_rounds(
    spec: &TransducerSpec,
    shuffled: &BTreeSet<String>,
) -> Result<BTreeMap<String, Option<u32>>, Error> {
    let emt = spec.schema.names(Section::Emt);
    let mut g: DiGraph<String, ()> = DiGraph::new();
    let idx: BTreeMap<String, _> = emt.iter().map(|r| (r.clone(), g.add_node(r.clone()))).collect();
    let rules: Vec<&Rule> = spec.rules_for(Role::Emt).collect();
    for r in &rules {
        for b in r.body_relations().filter(|b| emt.contains(*b)) {
            g.update_edge(idx[b], idx[&r.head.rel], ());
        }
    }
    let mut done: BTreeMap<String, Option<u32>> = BTreeMap::new();
    for scc in tarjan_scc(&g).into_iter().rev() {
        let recursive = scc.len() > 1 || g.contains_edge(scc[0], scc[0]);
        for &n in &scc {
            let rel = &g[n];
            if shuffled.contains(rel) {
                done.insert(rel.clone(), Some(1));
                continue;
            }
            if recursive {
                done.insert(rel.clone(), None);
                continue;
            }
            let mut latest = Some(0);
            for r in rules.iter().filter(|r| r.head.rel == *rel) {
                let mut ready = Some(guard_round(r, &emt, &done)?);
                for b in r.body_relations().filter(|b| emt.contains(*b)) {
                    ready = ready.zip(done[b]).map(|(x, c)| x.max(c));
                }
                latest = latest.zip(ready).map(|(x, c)| x.max(c));
            }
            done.insert(rel.clone(), latest.map(|l| l + 1));
        }
    }
    Ok(done)
}

/// The round from which `rule` may read its non-monotone inputs.
fn guard_round(rule: &Rule, emt: &BTreeSet<String>, done: &BTreeMap<String, Option<u32>>) -> Result<u32, Error> {
    let mut round = 0;
    for b in rule
        .body_relations()
        .filter(|b| emt.contains(*b) && rule.reads_non_monotonically(b))
    {
        match done.get(b) {
            Some(Some(c)) => round = round.max(*c),
            _ => {
                return Err(Error::Rewrite(format!(
                    "rule {rule} reads {b} non-monotonically but {b} never completes"
                )))
            }
        }
    }
    Ok(round)
}

fn stage_relation(j: u32) -> String {
    format!("{RESERVED}stage{j}")
}

fn add_stage_guards(b: &mut Builder, shuffled: &BTreeSet<String>) -> Result<(), Error> {
    let done = completion_rounds(&b.spec, shuffled)?;
    let emt = b.spec.schema.names(Section::Emt);
    let mut stages = 0;
    let mut guards = Vec::new();
    for (i, r) in b.spec.rules.iter().enumerate() {
        if r.role != Role::Emt {
            continue;
        }
        let g = guard_round(&r.rule, &emt, &done)?;
        if g > 0 {
            stages = stages.max(g);
            guards.push((i, g));
        }
    }
    for (i, g) in guards {
        b.spec.rules[i].rule.body.push(nullary(&stage_relation(g)));
    }
    if stages == 0 {
        return Ok(());
    }
    for j in 1..=stages {
        b.declare(Section::Mem, RelationDecl::new(&stage_relation(j), 0))?;
    }
    let bootstrap = (1..=stages)
        .map(|j| Literal::Neg(Atom::new(&stage_relation(j), vec![])))
        .collect();
    b.rule(Role::Ins, plain_head(&stage_relation(1), vec![]), bootstrap);
    for j in 1..stages {
        b.rule(
            Role::Ins,
            plain_head(&stage_relation(j + 1), vec![]),
            vec![nullary(&stage_relation(j))],
        );
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Protocol {
    Fifo,
    Generic,
}

/// Seals every emit relation read under negation: each node announces a
/// NULL once its emission of the relation is computed, receivers keep what
/// they received, and negation waits for a NULL from every active node.
/// Emit relations read positively are accumulated as well. Relies on FIFO
/// channels.
pub fn inject_snapshot_fifo(spec: &TransducerSpec) -> Result<TransducerSpec, Error> {
    inject(spec, Protocol::Fifo)
}

/// Like [`inject_snapshot_fifo`], but each NULL carries the number of facts
/// the sender emitted, and negation also waits until the received
/// sender-tagged facts add up to the announced totals.
pub fn inject_snapshot_generic(spec: &TransducerSpec) -> Result<TransducerSpec, Error> {
    inject(spec, Protocol::Generic)
}

fn inject(spec: &TransducerSpec, proto: Protocol) -> Result<TransducerSpec, Error> {
    let targets = spec.negated_emit_relations();
    if targets.is_empty() {
        return Ok(spec.clone());
    }
    let mut b = Builder::new(spec.clone(), []);
    let cnt_all = format!("{RESERVED}cnt_all");
    b.declare(Section::Aux, RelationDecl::new(&cnt_all, 1))?;
    b.spec.rules.push(SpecRule::new(
        Role::Aux,
        Rule::new(
            Head {
                rel: cnt_all.clone(),
                args: vec![HeadArg::Agg(AggKind::Count, vec![Term::var("u")])],
            },
            vec![pos(ALL, vec![Term::var("u")])],
        ),
    ));
    let mut views: BTreeMap<String, (String, String)> = BTreeMap::new();
    for r in &targets {
        let arity = spec.schema.lookup(r).map(|(_, d)| d.arity).unwrap_or(0);
        let s = sanitize(r);
        let name = |stem: &str| format!("{RESERVED}{stem}_{s}");
        let u = Atom::with_vars("", arity, "u").terms;
        let iu = || [vec![Term::var("i")], u.clone()].concat();
        let agg = |kind, rel: &str, terms: Vec<Term>| Head {
            rel: rel.to_string(),
            args: vec![HeadArg::Agg(kind, terms)],
        };

        let out = name("out");
        b.declare(Section::Aux, RelationDecl::new(&out, arity))?;
        let emitting: Vec<Rule> = spec
            .rules_for(Role::Emt)
            .filter(|x| x.head.rel == *r)
            .cloned()
            .collect();
        for mut e in emitting {
            e.head.rel = out.clone();
            b.spec.rules.push(SpecRule::new(Role::Aux, e));
        }
        let cnt = name("cnt");
        b.declare(Section::Aux, RelationDecl::new(&cnt, 1))?;
        b.rule(
            Role::Aux,
            agg(AggKind::Count, &cnt, u.clone()),
            vec![pos(&out, u.clone())],
        );

        let null = null_relation(r);
        let seen_null = name("seen_null");
        let nulls = name("nulls");
        let cnt_null = name("cnt_null");
        let sealed = name("sealed");
        let view = name("all");
        let null_arity = if proto == Protocol::Fifo { 1 } else { 2 };
        let nt = if proto == Protocol::Fifo {
            vec![Term::var("i")]
        } else {
            vec![Term::var("i"), Term::var("c")]
        };
        b.declare(Section::Emt, RelationDecl::keyed(&null, null_arity, Key::Inf))?;
        b.rule(
            Role::Emt,
            plain_head(&null, nt.clone()),
            vec![pos(&cnt, vec![Term::var("c")]), pos(ID, vec![Term::var("i")])],
        );
        b.declare(Section::Mem, RelationDecl::new(&seen_null, null_arity))?;
        b.rule(
            Role::Ins,
            plain_head(&seen_null, nt.clone()),
            vec![pos(&null, nt.clone())],
        );
        b.declare(Section::Aux, RelationDecl::new(&nulls, null_arity))?;
        b.rule(Role::Aux, plain_head(&nulls, nt.clone()), vec![pos(&null, nt.clone())]);
        b.rule(
            Role::Aux,
            plain_head(&nulls, nt.clone()),
            vec![pos(&seen_null, nt.clone())],
        );
        b.declare(Section::Aux, RelationDecl::new(&cnt_null, 1))?;
        b.rule(
            Role::Aux,
            agg(AggKind::FsCount, &cnt_null, vec![Term::var("i")]),
            vec![pos(&nulls, nt.clone())],
        );
        b.declare(Section::Aux, RelationDecl::new(&sealed, 0))?;
        b.declare(Section::Aux, RelationDecl::new(&view, arity))?;
        let n = || vec![Term::var("n")];
        let mut gate = vec![pos(&cnt_null, n()), pos(&cnt_all, n())];
        match proto {
            Protocol::Fifo => {
                let seen = name("seen");
                b.declare(Section::Mem, RelationDecl::new(&seen, arity))?;
                b.rule(Role::Ins, plain_head(&seen, u.clone()), vec![pos(r, u.clone())]);
                b.rule(Role::Aux, plain_head(&view, u.clone()), vec![pos(r, u.clone())]);
                b.rule(Role::Aux, plain_head(&view, u.clone()), vec![pos(&seen, u.clone())]);
            }
            Protocol::Generic => {
                let tag = name("tag");
                let seen_tag = name("seen_tag");
                let tags = name("tags");
                let sum = name("sum");
                let recv = name("recv");
                b.declare(Section::Emt, RelationDecl::keyed(&tag, arity + 1, Key::Inf))?;
                b.rule(
                    Role::Emt,
                    plain_head(&tag, iu()),
                    vec![pos(&out, u.clone()), pos(ID, vec![Term::var("i")])],
                );
                b.declare(Section::Mem, RelationDecl::new(&seen_tag, arity + 1))?;
                b.rule(Role::Ins, plain_head(&seen_tag, iu()), vec![pos(&tag, iu())]);
                b.declare(Section::Aux, RelationDecl::new(&tags, arity + 1))?;
                b.rule(Role::Aux, plain_head(&tags, iu()), vec![pos(&tag, iu())]);
                b.rule(Role::Aux, plain_head(&tags, iu()), vec![pos(&seen_tag, iu())]);
                b.declare(Section::Aux, RelationDecl::new(&sum, 1))?;
                b.rule(
                    Role::Aux,
                    agg(AggKind::Sum, &sum, vec![Term::var("c"), Term::var("i")]),
                    vec![pos(&nulls, nt.clone())],
                );
                b.declare(Section::Aux, RelationDecl::new(&recv, 1))?;
                b.rule(Role::Aux, agg(AggKind::Count, &recv, iu()), vec![pos(&tags, iu())]);
                b.rule(Role::Aux, plain_head(&view, u.clone()), vec![pos(&tags, iu())]);
                gate.push(pos(&sum, vec![Term::var("v")]));
                gate.push(pos(&recv, vec![Term::var("v")]));
            }
        }
        b.rule(Role::Aux, plain_head(&sealed, vec![]), gate);
        views.insert(r.clone(), (view, sealed));
    }
    let emt = spec.schema.names(Section::Emt);
    let read: BTreeSet<String> = spec
        .rules
        .iter()
        .flat_map(|r| r.rule.positive_atoms().map(|a| a.rel.clone()).collect::<Vec<_>>())
        .filter(|r| emt.contains(r) && !views.contains_key(r))
        .collect();
    let mut accumulated: BTreeMap<String, String> = views.iter().map(|(r, (v, _))| (r.clone(), v.clone())).collect();
    for r in read {
        let arity = spec.schema.lookup(&r).map(|(_, d)| d.arity).unwrap_or(0);
        let s = sanitize(&r);
        let (seen, view) = (format!("{RESERVED}seen_{s}"), format!("{RESERVED}all_{s}"));
        let u = Atom::with_vars("", arity, "u").terms;
        b.declare(Section::Mem, RelationDecl::new(&seen, arity))?;
        b.rule(Role::Ins, plain_head(&seen, u.clone()), vec![pos(&r, u.clone())]);
        b.declare(Section::Aux, RelationDecl::new(&view, arity))?;
        b.rule(Role::Aux, plain_head(&view, u.clone()), vec![pos(&r, u.clone())]);
        b.rule(Role::Aux, plain_head(&view, u.clone()), vec![pos(&seen, u.clone())]);
        accumulated.insert(r, view);
    }
    for sr in b.spec.rules.iter_mut().take(spec.rules.len()) {
        let mut gates = Vec::new();
        for l in &mut sr.rule.body {
            match l {
                Literal::Neg(a) => {
                    if let Some((view, sealed)) = views.get(&a.rel) {
                        a.rel = view.clone();
                        if !gates.contains(sealed) {
                            gates.push(sealed.clone());
                        }
                    }
                }
                Literal::Pos(a) => {
                    if let Some(view) = accumulated.get(&a.rel) {
                        a.rel = view.clone();
                    }
                }
                _ => {}
            }
        }
        sr.rule.body.extend(gates.iter().map(|g| nullary(g)));
    }
    b.finish()
}

/// Applies `target` to a query; snapshot targets inject into its
/// broadcast network.
pub fn rewrite_query(q: &Query, target: Target) -> Result<TransducerSpec, Error> {
    match target {
        Target::Broadcast => to_broadcast_network(q),
        Target::Hashing => to_hashing_network(q),
        Target::SnapshotFifo => inject_snapshot_fifo(&to_broadcast_network(q)?),
        Target::SnapshotGeneric => inject_snapshot_generic(&to_broadcast_network(q)?),
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::datalog::{evaluate, parse_facts, Instance};
    use crate::network::{run, Config, Semantics};
    use crate::strategy::{CommKind, HashFamily, Partition};

    fn inst(text: &str) -> Instance {
        Instance::from_facts(parse_facts(text).unwrap().into_iter().map(|f| f.0))
    }

    const CLOSURE: &str = "
        @in decl E/2.
        @out decl T/2.
        T(u, v) <- E(u, v).
        T(u, w) <- T(u, v), E(v, w).
    ";

    const FILTERED: &str = "
        @in decl E/2. decl F/1.
        @out decl T/2.
        T(u, v) <- E(u, v), not F(u).
        T(u, w) <- T(u, v), E(v, w).
    ";

    const EMPTY: &str = "
        @in decl R/0.
        @out decl T/0.
        T() <- not R().
    ";

    fn oracle(q: &Query, input: &Instance) -> Instance {
        let all = evaluate(&q.program, input).unwrap();
        all.restrict(|r| q.outputs.contains(r))
    }

    #[test]
    fn query_files() {
        let q = Query::parse(FILTERED).unwrap();
        assert_eq!(q.inputs(), BTreeSet::from(["E".to_string(), "F".to_string()]));
        assert_eq!(Query::parse(&q.to_string()).unwrap(), q);
        assert!(Query::parse("@in decl T/1. decl E/1. T(x) <- E(x).").is_err());
        assert!(Query::parse("@db decl E/1.").is_err());
        assert!(Query::parse("decl E/1. decl sc_x/1. sc_x(x) <- E(x).").is_err());
    }

    #[test]
    fn broadcast_shape() {
        let q = Query::parse("@in decl P/2. decl R/1. @out decl T/2. T(u, v) <- P(u, v), R(u).").unwrap();
        let spec = to_broadcast_network(&q).unwrap();
        let rules: Vec<String> = spec.rules.iter().map(|r| r.to_string()).collect();
        assert_eq!(
            rules,
            [
                "P'_emt(u0, u1) <- P(u0, u1).",
                "R'_emt(u0) <- R(u0).",
                "T_out(u, v) <- P'(u, v), R'(u)."
            ]
        );
        assert_eq!(spec.schema.key("P'"), Key::Inf);

        let q =
            Query::parse("@in decl S/2. decl T/2. @out decl Q/2. Q(u, z) <- S(u, v), not T(v, z), S(z, _).").unwrap();
        let spec = to_broadcast_network(&q).unwrap();
        let text = spec.to_string();
        assert!(text.contains("Ready_ins() <- not Ready()."), "{text}");
        assert!(
            text.contains("Q_out(u, z) <- S'(u, v), not T'(v, z), S'(z, _), Ready()."),
            "{text}"
        );

        let q = Query::parse("@in decl E/1.").unwrap();
        let spec = to_broadcast_network(&q).unwrap();
        assert_eq!(spec.rules.len(), 1);
        assert!(Query::parse("decl E/1. decl E'/1. decl T/1. T(x) <- E(x), E'(x).")
            .and_then(|q| to_broadcast_network(&q))
            .is_err());
    }

    #[test]
    fn broadcast_network_matches_oracle_in_two_rounds() {
        for (text, input) in [
            (CLOSURE, "E(a, b). E(b, c). E(c, d)."),
            (FILTERED, "E(a, b). E(b, c). F(b)."),
        ] {
            let q = Query::parse(text).unwrap();
            let input = inst(input);
            let spec = to_broadcast_network(&q).unwrap();
            for p in [
                Partition::ReplicateAll,
                Partition::SingleNode(2),
                Partition::HashSplit(3),
            ] {
                let cfg = Config::new(3).with_comm(CommKind::Broadcast).with_partition(p);
                let t = run(&spec, &cfg, &input).unwrap();
                assert_eq!(t.output(), Some(&oracle(&q, &input)));
                assert_eq!(t.quiescence, Some(2));
            }
        }
    }

    #[test]
    fn hashing_shapes() {
        let spec = to_hashing_network(&Query::parse(CLOSURE).unwrap()).unwrap();
        let text = spec.to_string();
        assert!(text.contains("decl T'/2 key=2."), "{text}");
        assert!(text.contains("T'_emt(u, w) <- T'(u, v), E'(v, w)."), "{text}");
        assert!(text.contains("T_out(u0, u1) <- T'(u0, u1)."), "{text}");
        assert!(!text.contains("stage"));

        let spec = to_hashing_network(&Query::parse(FILTERED).unwrap()).unwrap();
        let text = spec.to_string();
        assert!(text.contains("sc_neg1_emt(u, v) <- E'(u, v)."), "{text}");
        assert!(text.contains("decl sc_neg1/2 key=1."), "{text}");
        assert!(
            text.contains("T'_emt(u, v) <- sc_neg1(u, v), not F'(u), sc_stage1()."),
            "{text}"
        );
        assert!(text.contains("sc_stage1_ins() <- not sc_stage1()."), "{text}");
        assert_eq!(TransducerSpec::parse(&text).unwrap(), spec);

        let unchained = Query::parse("@in decl R/1. decl S/1. @out decl T/2. T(x, y) <- R(x), S(y).").unwrap();
        assert!(matches!(to_hashing_network(&unchained), Err(Error::Rewrite(_))));
    }

    #[test]
    fn hashing_network_matches_oracle() {
        let cases = [
            (CLOSURE, "E(a, b). E(b, c). E(c, d). E(d, a)."),
            (FILTERED, "E(a, b). E(b, c). E(c, d). F(b)."),
            (
                "@in decl A/2. decl B/2. decl C/2. @out decl Q/2. Q(x, w) <- A(x, y), B(y, z), C(z, w).",
                "A(1, 2). A(5, 2). B(2, 3). C(3, 4). C(3, 9).",
            ),
            (
                "@in decl E/2. @out decl N/2. N(x, count<y>) <- E(x, y).",
                "E(a, b). E(a, c). E(b, c).",
            ),
            (
                "@in decl E/2. decl B/1. @idb decl P/2. @out decl Q/2.
              P(x, y) <- E(x, y), not B(y). Q(x, z) <- P(x, y), P(y, z), not B(x).",
                "E(1, 2). E(2, 3). E(3, 4). E(4, 5). B(4).",
            ),
        ];
        for (text, input) in cases {
            let q = Query::parse(text).unwrap();
            let input = inst(input);
            let spec = to_hashing_network(&q).unwrap();
            for seed in 1..4 {
                for p in [Partition::ReplicateAll, Partition::HashSplit(seed)] {
                    let cfg = Config::new(3).with_partition(p).with_family(HashFamily::seeded(seed));
                    let t = run(&spec, &cfg, &input).unwrap();
                    assert_eq!(t.output(), Some(&oracle(&q, &input)), "{text} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn injection_is_idempotent_and_gates_negation() {
        let spec = to_broadcast_network(&Query::parse(EMPTY).unwrap()).unwrap();
        for inject in [inject_snapshot_fifo, inject_snapshot_generic] {
            let once = inject(&spec).unwrap();
            assert_eq!(inject(&once).unwrap(), once);
            let text = once.to_string();
            assert!(
                text.contains("T_out() <- not sc_all_Rp(), Ready(), sc_sealed_Rp()."),
                "{text}"
            );
            assert_eq!(TransducerSpec::parse(&text).unwrap(), once);
        }
        let plain = to_broadcast_network(&Query::parse(CLOSURE).unwrap()).unwrap();
        assert_eq!(inject_snapshot_fifo(&plain).unwrap(), plain);
    }

    #[test]
    fn injected_filtered_closure_is_correct_under_delays() {
        let q = Query::parse(FILTERED).unwrap();
        let spec = to_broadcast_network(&q).unwrap();
        let input = inst("E(a, b). E(b, c). E(c, d). E(d, a). F(b).");
        let cases = [
            (
                inject_snapshot_fifo(&spec).unwrap(),
                Semantics::Rsbv { var: 2, fifo: true },
            ),
            (
                inject_snapshot_generic(&spec).unwrap(),
                Semantics::Rsbv { var: 2, fifo: false },
            ),
        ];
        for (injected, sem) in cases {
            for seed in 0..30 {
                let cfg = Config::new(3)
                    .with_comm(CommKind::Broadcast)
                    .with_partition(Partition::HashSplit(1))
                    .with_semantics(sem)
                    .with_seed(seed);
                let t = run(&injected, &cfg, &input).unwrap();
                assert_eq!(t.output(), Some(&oracle(&q, &input)), "{sem} seed {seed}");
            }
        }
    }

    #[test]
    fn injected_emptiness_is_correct_under_delays() {
        let q = Query::parse(EMPTY).unwrap();
        let spec = to_broadcast_network(&q).unwrap();
        let cases = [
            (
                inject_snapshot_fifo(&spec).unwrap(),
                Semantics::Rsbv { var: 3, fifo: true },
            ),
            (
                inject_snapshot_generic(&spec).unwrap(),
                Semantics::Rsbv { var: 3, fifo: false },
            ),
            (
                inject_snapshot_generic(&spec).unwrap(),
                Semantics::Rsync { max_delay: 4 },
            ),
        ];
        for (injected, sem) in cases {
            for input in [Instance::new(), inst("R().")] {
                for seed in 0..30 {
                    let cfg = Config::new(3)
                        .with_comm(CommKind::Broadcast)
                        .with_partition(Partition::SingleNode(3))
                        .with_semantics(sem)
                        .with_seed(seed);
                    let t = run(&injected, &cfg, &input).unwrap();
                    assert_eq!(t.output(), Some(&oracle(&q, &input)), "{sem} seed {seed}");
                }
            }
        }
    }
}
