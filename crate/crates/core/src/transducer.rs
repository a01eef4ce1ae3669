//! Relational transducers: the six-part schema, spec files, and the local
//! transition of a single node.

use std::collections::BTreeSet;
use std::fmt;

use crate::datalog::{parse_document, CompiledProgram, Const, Instance, Item, Key, Program, RelationDecl, Rule};
use crate::Error;

pub type NodeId = u32;

pub const TIME: &str = "Time";
pub const ID: &str = "Id";
pub const ALL: &str = "All";

/// Schema section a relation is declared in. Aux relations are
/// intermediate derived relations recomputed inside each transition.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Section {
    Db,
    Mem,
    Emt,
    Out,
    Aux,
}

impl Section {
    pub const ALL: [Section; 5] = [Section::Db, Section::Mem, Section::Emt, Section::Out, Section::Aux];

    pub fn name(self) -> &'static str {
        match self {
            Section::Db => "db",
            Section::Mem => "mem",
            Section::Emt => "emt",
            Section::Out => "out",
            Section::Aux => "aux",
        }
    }

    fn parse(s: &str) -> Option<Section> {
        Section::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Which query a rule belongs to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Role {
    Ins,
    Del,
    Out,
    Emt,
    Aux,
}

impl Role {
    fn suffix(self) -> &'static str {
        match self {
            Role::Ins => "_ins",
            Role::Del => "_del",
            Role::Out => "_out",
            Role::Emt => "_emt",
            Role::Aux => "",
        }
    }

    fn target(self) -> Section {
        match self {
            Role::Ins | Role::Del => Section::Mem,
            Role::Out => Section::Out,
            Role::Emt => Section::Emt,
            Role::Aux => Section::Aux,
        }
    }

    /// Name of the head relation inside the compiled program.
    fn internal(self, rel: &str) -> String {
        match self {
            Role::Aux => rel.to_string(),
            Role::Ins => format!("{rel}#ins"),
            Role::Del => format!("{rel}#del"),
            Role::Out => format!("{rel}#out"),
            Role::Emt => format!("{rel}#emt"),
        }
    }
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Schema {
    pub db: Vec<RelationDecl>,
    pub mem: Vec<RelationDecl>,
    pub emt: Vec<RelationDecl>,
    pub out: Vec<RelationDecl>,
    pub aux: Vec<RelationDecl>,
}

impl Schema {
    pub fn section(&self, s: Section) -> &Vec<RelationDecl> {
        match s {
            Section::Db => &self.db,
            Section::Mem => &self.mem,
            Section::Emt => &self.emt,
            Section::Out => &self.out,
            Section::Aux => &self.aux,
        }
    }

    pub fn section_mut(&mut self, s: Section) -> &mut Vec<RelationDecl> {
        match s {
            Section::Db => &mut self.db,
            Section::Mem => &mut self.mem,
            Section::Emt => &mut self.emt,
            Section::Out => &mut self.out,
            Section::Aux => &mut self.aux,
        }
    }

    pub fn decls(&self) -> impl Iterator<Item = (Section, &RelationDecl)> {
        Section::ALL
            .into_iter()
            .flat_map(move |s| self.section(s).iter().map(move |d| (s, d)))
    }

    pub fn lookup(&self, name: &str) -> Option<(Section, &RelationDecl)> {
        self.decls().find(|(_, d)| d.name == name)
    }

    pub fn section_of(&self, name: &str) -> Option<Section> {
        self.lookup(name).map(|(s, _)| s)
    }

    pub fn names(&self, s: Section) -> BTreeSet<String> {
        self.section(s).iter().map(|d| d.name.clone()).collect()
    }

    pub fn key(&self, rel: &str) -> Key {
        self.emt
            .iter()
            .find(|d| d.name == rel)
            .map(|d| d.key)
            .unwrap_or(Key::Absent)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SpecRule {
    pub role: Role,
    /// Head relation is the base name (without role suffix).
    pub rule: Rule,
}

impl SpecRule {
    pub fn new(role: Role, rule: Rule) -> SpecRule {
        SpecRule { role, rule }
    }
}

impl fmt::Display for SpecRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut r = self.rule.clone();
        r.head.rel.push_str(self.role.suffix());
        write!(f, "{r}")
    }
}

/// A transducer: schema plus the rules of the insert, delete, output,
/// emission and auxiliary queries. Emit relations carry their hash key.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct TransducerSpec {
    pub schema: Schema,
    pub rules: Vec<SpecRule>,
    /// Set on the environment spec, which keeps `Time` in memory.
    pub(crate) owns_time: bool,
}

/// Syntactic properties of a spec.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Flags {
    pub time_oblivious: bool,
    pub space_oblivious: bool,
    pub oblivious: bool,
    pub inflationary: bool,
    pub monotone: bool,
}

impl TransducerSpec {
    pub fn rules_for(&self, role: Role) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.role == role).map(|r| &r.rule)
    }

    pub fn key_set(&self) -> Vec<(String, Key)> {
        self.schema.emt.iter().map(|d| (d.name.clone(), d.key)).collect()
    }

    pub fn flags(&self) -> Flags {
        let reads = |rel: &str| self.rules.iter().any(|r| r.rule.body_relations().any(|b| b == rel));
        let time_oblivious = !reads(TIME);
        let space_oblivious = !reads(ID) && !reads(ALL);
        Flags {
            time_oblivious,
            space_oblivious,
            oblivious: time_oblivious && space_oblivious,
            inflationary: self.rules.iter().all(|r| r.role != Role::Del),
            monotone: self.rules.iter().all(|r| r.rule.is_monotone()),
        }
    }

    /// Emit relations that occur in a negated body literal.
    pub fn negated_emit_relations(&self) -> BTreeSet<String> {
        let emt = self.schema.names(Section::Emt);
        self.rules
            .iter()
            .flat_map(|r| r.rule.negative_atoms().map(|a| a.rel.clone()).collect::<Vec<_>>())
            .filter(|r| emt.contains(r))
            .collect()
    }

    /// Checks section placement, keys, reserved names, and every rule.
    pub fn validate(&self) -> Result<(), Error> {
        let mut seen = BTreeSet::new();
        for (sec, d) in self.schema.decls() {
            if !seen.insert(d.name.clone()) {
                return Err(Error::Spec(format!("relation {} declared twice", d.name)));
            }
            let reserved = [ID, ALL].contains(&d.name.as_str()) || (d.name == TIME && !self.owns_time);
            if reserved {
                return Err(Error::Spec(format!("{} is a reserved system relation", d.name)));
            }
            if d.name.contains('#') {
                return Err(Error::Spec(format!("invalid relation name {}", d.name)));
            }
            match (sec, d.key) {
                (Section::Emt, Key::Absent) => {
                    return Err(Error::Spec(format!("emit relation {} needs a key", d.name)))
                }
                (Section::Emt, _) | (_, Key::Absent) => {}
                _ => return Err(Error::Spec(format!("only emit relations carry keys ({})", d.name))),
            }
        }
        for (_, d) in self.schema.decls() {
            for role in [Role::Ins, Role::Del, Role::Out, Role::Emt] {
                if let Some(base) = d.name.strip_suffix(role.suffix()) {
                    if self.schema.section_of(base) == Some(role.target()) {
                        return Err(Error::Spec(format!(
                            "relation {} clashes with the {} head of {base}",
                            d.name,
                            role.suffix()
                        )));
                    }
                }
            }
        }
        for r in &self.rules {
            let sec = self.schema.section_of(&r.rule.head.rel);
            if sec != Some(r.role.target()) {
                return Err(Error::Spec(format!(
                    "{}:{}: head {} must be a {} relation",
                    r.rule.span.line,
                    r.rule.span.col,
                    r.rule.head.rel,
                    r.role.target().name()
                )));
            }
        }
        self.logic_program()?.validate()?;
        Ok(())
    }

    /// The program evaluated by each transition. Heads are renamed to
    /// internal role names; bodies read the state, inbox and system relations.
    pub fn logic_program(&self) -> Result<Program, Error> {
        let mut decls: Vec<RelationDecl> = self
            .schema
            .decls()
            .map(|(_, d)| RelationDecl::new(&d.name, d.arity))
            .collect();
        for sys in [TIME, ID, ALL] {
            if !decls.iter().any(|d| d.name == sys) {
                decls.push(RelationDecl::new(sys, 1));
            }
        }
        for (sec, d) in self.schema.decls() {
            let roles: &[Role] = match sec {
                Section::Mem => &[Role::Ins, Role::Del],
                Section::Out => &[Role::Out],
                Section::Emt => &[Role::Emt],
                _ => &[],
            };
            for role in roles {
                decls.push(RelationDecl::new(&role.internal(&d.name), d.arity));
            }
        }
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut rule = r.rule.clone();
                rule.head.rel = r.role.internal(&rule.head.rel);
                rule
            })
            .collect();
        Ok(Program { decls, rules })
    }

    /// Parses a spec file: declarations under `@db`, `@mem`, `@emt`, `@out`
    /// and `@aux` headers, and rules whose heads carry a role suffix.
    pub fn parse(text: &str) -> Result<TransducerSpec, Error> {
        let doc = parse_document(text)?;
        let mut spec = TransducerSpec::default();
        let mut raw_rules = Vec::new();
        for (section, item) in doc.items {
            match item {
                Item::Decl(d) => {
                    let Some((name, span)) = section else {
                        return Err(Error::Spec(format!("declaration of {} outside a section", d.name)));
                    };
                    let sec = Section::parse(&name)
                        .ok_or_else(|| Error::Spec(format!("{}:{}: unknown section @{name}", span.line, span.col)))?;
                    spec.schema.section_mut(sec).push(d);
                }
                Item::Rule(head, body, span) => raw_rules.push((head.into_head(), body, span)),
            }
        }
        for (mut head, body, span) in raw_rules {
            let role = resolve_role(&spec.schema, &mut head.rel).ok_or_else(|| {
                Error::Spec(format!(
                    "{}:{}: cannot resolve the role of head {}",
                    span.line, span.col, head.rel
                ))
            })?;
            spec.rules.push(SpecRule::new(role, Rule { head, body, span }));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Resolves a written head name to its role, stripping the suffix in place.
fn resolve_role(schema: &Schema, rel: &mut String) -> Option<Role> {
    match schema.section_of(rel) {
        Some(Section::Aux) => return Some(Role::Aux),
        Some(Section::Out) => return Some(Role::Out),
        Some(Section::Emt) => return Some(Role::Emt),
        _ => {}
    }
    for role in [Role::Ins, Role::Del, Role::Out, Role::Emt] {
        if let Some(base) = rel.strip_suffix(role.suffix()) {
            if schema.section_of(base) == Some(role.target()) {
                *rel = base.to_string();
                return Some(role);
            }
        }
    }
    None
}

impl fmt::Display for TransducerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for sec in Section::ALL {
            let decls = self.schema.section(sec);
            if decls.is_empty() {
                continue;
            }
            writeln!(f, "@{}", sec.name())?;
            for d in decls {
                writeln!(f, "{d}")?;
            }
        }
        if !self.rules.is_empty() {
            writeln!(f)?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// The state of one node between transitions.
#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct LocalState {
    pub db: Instance,
    pub mem: Instance,
    pub out: Instance,
    pub sys: Instance,
    pub clock: i64,
}

/// Result of one local transition.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Step {
    pub state: LocalState,
    pub emitted: Instance,
    /// Whether the transition added a fact to memory or output.
    pub derived: bool,
}

/// A spec compiled for repeated transitions.
#[derive(Clone, Debug)]
pub struct Transducer {
    spec: TransducerSpec,
    program: CompiledProgram,
    emt: BTreeSet<String>,
}

impl Transducer {
    pub fn new(spec: TransducerSpec) -> Result<Transducer, Error> {
        spec.validate()?;
        let program = CompiledProgram::new(spec.logic_program()?)?;
        let emt = spec.schema.names(Section::Emt);
        Ok(Transducer { spec, program, emt })
    }

    pub fn spec(&self) -> &TransducerSpec {
        &self.spec
    }

    /// Initial state of node `me`: `Id(me)` and `All(j)` for each active j.
    pub fn configure(
        &self,
        nodes: &BTreeSet<NodeId>,
        me: NodeId,
        active: &BTreeSet<NodeId>,
    ) -> Result<LocalState, Error> {
        if !nodes.contains(&me) {
            return Err(Error::Config(format!("node {me} is not in the node set")));
        }
        let mut sys = Instance::new();
        sys.insert(ID, vec![Const::Int(me as i64)]);
        for &j in active {
            sys.insert(ALL, vec![Const::Int(j as i64)]);
        }
        Ok(LocalState {
            sys,
            ..LocalState::default()
        })
    }

    /// One transition at round `clock` with `inbox` over emit relations.
    pub fn local_transition(&self, state: &LocalState, inbox: &Instance, clock: i64) -> Result<Step, Error> {
        if let Some(bad) = inbox.relation_names().find(|r| !self.emt.contains(*r)) {
            return Err(Error::Spec(format!("inbox fact over non-emit relation {bad}")));
        }
        Ok(self.transition(state, inbox, Some(clock)))
    }

    /// Transition without validation; `clock = None` skips injecting `Time`.
    pub(crate) fn transition(&self, state: &LocalState, inbox: &Instance, clock: Option<i64>) -> Step {
        let mut edb = state.db.clone();
        edb.extend_from(&state.mem);
        edb.extend_from(&state.out);
        edb.extend_from(&state.sys);
        edb.extend_from(inbox);
        if let Some(c) = clock {
            edb.insert(TIME, vec![Const::Int(c)]);
        }
        let result = self.program.evaluate(&edb);
        let mut next = state.clone();
        let mut emitted = Instance::new();
        for d in &self.spec.schema.mem {
            let ins = result.get(&Role::Ins.internal(&d.name));
            let del = result.get(&Role::Del.internal(&d.name));
            for t in ins.into_iter().flatten() {
                if !del.is_some_and(|s| s.contains(t)) {
                    next.mem.insert(&d.name, t.clone());
                }
            }
            for t in del.into_iter().flatten() {
                if !ins.is_some_and(|s| s.contains(t)) {
                    next.mem.remove(&d.name, t);
                }
            }
        }
        for d in &self.spec.schema.out {
            if let Some(set) = result.get(&Role::Out.internal(&d.name)) {
                for t in set {
                    next.out.insert(&d.name, t.clone());
                }
            }
        }
        for d in &self.spec.schema.emt {
            if let Some(set) = result.get(&Role::Emt.internal(&d.name)) {
                for t in set {
                    emitted.insert(&d.name, t.clone());
                }
            }
        }
        if let Some(c) = clock {
            next.clock = c;
        }
        let derived = !next.mem.difference(&state.mem).is_empty() || next.out.len() > state.out.len();
        Step {
            state: next,
            emitted,
            derived,
        }
    }
}
