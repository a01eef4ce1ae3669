//! Datalog with stratified negation and aggregates: syntax, instances,
//! stratification and evaluation.

mod eval;
mod parse;
mod stratify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use eval::{evaluate, evaluate_naive, CompiledProgram};
pub use parse::{parse_atoms, parse_constant, parse_facts};
pub(crate) use parse::{parse_document, Item};
pub use stratify::stratify;

/// A constant of the domain. Integers sort before symbols.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Const {
    Int(i64),
    Sym(Arc<str>),
}

impl Const {
    pub fn sym(s: &str) -> Const {
        Const::Sym(Arc::from(s))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Const::Int(v) => Some(*v),
            Const::Sym(_) => None,
        }
    }

    /// Byte encoding used by the seeded hash functions.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Const::Int(v) => {
                let mut out = vec![0u8];
                out.extend_from_slice(&v.to_be_bytes());
                out
            }
            Const::Sym(s) => {
                let mut out = vec![1u8];
                out.extend_from_slice(s.as_bytes());
                out
            }
        }
    }

    /// Rendering inside rule text, where bare identifiers are variables.
    pub fn quoted(&self) -> String {
        match self {
            Const::Int(v) => v.to_string(),
            Const::Sym(s) => quote(s),
        }
    }
}

impl From<i64> for Const {
    fn from(v: i64) -> Self {
        Const::Int(v)
    }
}

impl From<&str> for Const {
    fn from(v: &str) -> Self {
        Const::sym(v)
    }
}

fn is_plain_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    s != "not" && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Fact-file rendering: plain identifiers stay bare, everything else is quoted.
impl fmt::Display for Const {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const::Int(v) => write!(f, "{v}"),
            Const::Sym(s) if is_plain_symbol(s) => write!(f, "{s}"),
            Const::Sym(s) => write!(f, "{}", quote(s)),
        }
    }
}

pub type Tuple = Vec<Const>;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Fact {
    pub rel: String,
    pub args: Tuple,
}

impl Fact {
    pub fn new(rel: &str, args: Vec<Const>) -> Fact {
        Fact {
            rel: rel.to_string(),
            args,
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.rel)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// A finite set of facts grouped by relation. Empty relations are never
/// stored, so structural equality is set equality.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Instance {
    rels: BTreeMap<String, BTreeSet<Tuple>>,
}

impl Instance {
    pub fn new() -> Instance {
        Instance::default()
    }

    pub fn from_facts<I: IntoIterator<Item = Fact>>(facts: I) -> Instance {
        let mut inst = Instance::new();
        for f in facts {
            inst.insert_fact(f);
        }
        inst
    }

    pub fn insert(&mut self, rel: &str, tuple: Tuple) -> bool {
        match self.rels.get_mut(rel) {
            Some(set) => set.insert(tuple),
            None => {
                self.rels.insert(rel.to_string(), BTreeSet::from([tuple]));
                true
            }
        }
    }

    pub fn insert_fact(&mut self, f: Fact) -> bool {
        self.insert(&f.rel, f.args)
    }

    pub fn remove(&mut self, rel: &str, tuple: &Tuple) -> bool {
        let Some(set) = self.rels.get_mut(rel) else {
            return false;
        };
        let removed = set.remove(tuple);
        if set.is_empty() {
            self.rels.remove(rel);
        }
        removed
    }

    pub fn contains(&self, rel: &str, tuple: &Tuple) -> bool {
        self.rels.get(rel).is_some_and(|s| s.contains(tuple))
    }

    pub fn contains_fact(&self, f: &Fact) -> bool {
        self.contains(&f.rel, &f.args)
    }

    pub fn get(&self, rel: &str) -> Option<&BTreeSet<Tuple>> {
        self.rels.get(rel)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.rels.keys().map(|s| s.as_str())
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, &BTreeSet<Tuple>)> {
        self.rels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn facts(&self) -> impl Iterator<Item = Fact> + '_ {
        self.rels
            .iter()
            .flat_map(|(r, set)| set.iter().map(move |t| Fact::new(r, t.clone())))
    }

    pub fn len(&self) -> usize {
        self.rels.values().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rels.is_empty()
    }

    /// Adds every fact of `other`; returns how many were new.
    pub fn extend_from(&mut self, other: &Instance) -> usize {
        let mut added = 0;
        for (rel, set) in &other.rels {
            let entry = self.rels.entry(rel.clone()).or_default();
            for t in set {
                if entry.insert(t.clone()) {
                    added += 1;
                }
            }
        }
        added
    }

    pub fn union(&self, other: &Instance) -> Instance {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn difference(&self, other: &Instance) -> Instance {
        let mut out = Instance::new();
        for f in self.facts() {
            if !other.contains_fact(&f) {
                out.insert_fact(f);
            }
        }
        out
    }

    pub fn is_subset(&self, other: &Instance) -> bool {
        self.rels
            .iter()
            .all(|(r, set)| other.rels.get(r).is_some_and(|o| set.is_subset(o)))
    }

    /// Keeps only the relations accepted by `keep`.
    pub fn restrict<F: Fn(&str) -> bool>(&self, keep: F) -> Instance {
        Instance {
            rels: self
                .rels
                .iter()
                .filter(|(r, _)| keep(r))
                .map(|(r, s)| (r.clone(), s.clone()))
                .collect(),
        }
    }

    pub fn take_relation(&mut self, rel: &str) -> BTreeSet<Tuple> {
        self.rels.remove(rel).unwrap_or_default()
    }

    pub fn active_domain(&self) -> BTreeSet<Const> {
        self.rels
            .values()
            .flat_map(|s| s.iter().flat_map(|t| t.iter().cloned()))
            .collect()
    }

    /// Renames every constant through `f`.
    pub fn map_constants<F: Fn(&Const) -> Const>(&self, f: F) -> Instance {
        let mut out = Instance::new();
        for fact in self.facts() {
            out.insert(&fact.rel, fact.args.iter().map(&f).collect());
        }
        out
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, fact) in self.facts().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{fact}")?;
        }
        write!(f, "}}")
    }
}

/// Hash key of an emit relation: the first `k` positions, every node
/// reachable by the family, or none for non-emit relations.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Key {
    Absent,
    Finite(usize),
    Inf,
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Absent => Ok(()),
            Key::Finite(k) => write!(f, " key={k}"),
            Key::Inf => write!(f, " key=inf"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct RelationDecl {
    pub name: String,
    pub arity: usize,
    pub key: Key,
}

impl RelationDecl {
    pub fn new(name: &str, arity: usize) -> RelationDecl {
        RelationDecl {
            name: name.to_string(),
            arity,
            key: Key::Absent,
        }
    }

    pub fn keyed(name: &str, arity: usize, key: Key) -> RelationDecl {
        RelationDecl {
            name: name.to_string(),
            arity,
            key,
        }
    }
}

impl fmt::Display for RelationDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decl {}/{}{}.", self.name, self.arity, self.key)
    }
}

/// Source position, ignored by equality so printed and re-parsed programs
/// compare equal.
#[derive(Clone, Copy, Debug, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl Eq for Span {}

impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Term {
    Var(String),
    Const(Const),
    /// `_`: a fresh variable at every occurrence.
    Wild,
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{}", c.quoted()),
            Term::Wild => write!(f, "_"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Atom {
    pub rel: String,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn new(rel: &str, terms: Vec<Term>) -> Atom {
        Atom {
            rel: rel.to_string(),
            terms,
        }
    }

    /// Atom over fresh variable names `prefix0, prefix1, ...`.
    pub fn with_vars(rel: &str, arity: usize, prefix: &str) -> Atom {
        Atom::new(rel, (0..arity).map(|i| Term::Var(format!("{prefix}{i}"))).collect())
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.rel)?;
        write_list(f, &self.terms)?;
        write!(f, ")")
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Expr {
    Term(Term),
    Bin(Box<Expr>, ArithOp, Box<Expr>),
}

impl Expr {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Term(Term::Var(v)) => out.push(v.clone()),
            Expr::Term(_) => {}
            Expr::Bin(a, _, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Term(t) => write!(f, "{t}"),
            Expr::Bin(a, op, b) => {
                let sym = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                    ArithOp::Mul => "*",
                };
                let paren = |e: &Expr| matches!(e, Expr::Bin(..));
                if paren(a) {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {sym} ")?;
                if paren(b) {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Cmp(Expr, CmpOp, Expr),
}

impl Literal {
    pub fn atom(&self) -> Option<&Atom> {
        match self {
            Literal::Pos(a) | Literal::Neg(a) => Some(a),
            Literal::Cmp(..) => None,
        }
    }

    pub fn atom_mut(&mut self) -> Option<&mut Atom> {
        match self {
            Literal::Pos(a) | Literal::Neg(a) => Some(a),
            Literal::Cmp(..) => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "not {a}"),
            Literal::Cmp(a, op, b) => write!(f, "{a} {op} {b}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum AggKind {
    Count,
    Sum,
    FsCount,
}

impl AggKind {
    pub fn keyword(self) -> &'static str {
        match self {
            AggKind::Count => "count",
            AggKind::Sum => "sum",
            AggKind::FsCount => "fs_count",
        }
    }

    /// COUNT and SUM need their input complete; FS_COUNT does not.
    pub fn is_stratified(self) -> bool {
        !matches!(self, AggKind::FsCount)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum HeadArg {
    Term(Term),
    Agg(AggKind, Vec<Term>),
}

impl fmt::Display for HeadArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadArg::Term(t) => write!(f, "{t}"),
            HeadArg::Agg(kind, args) => {
                write!(f, "{}<", kind.keyword())?;
                write_list(f, args)?;
                write!(f, ">")
            }
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Head {
    pub rel: String,
    pub args: Vec<HeadArg>,
}

impl Head {
    pub fn from_atom(atom: Atom) -> Head {
        Head {
            rel: atom.rel,
            args: atom.terms.into_iter().map(HeadArg::Term).collect(),
        }
    }

    pub fn aggregate(&self) -> Option<AggKind> {
        self.args.iter().find_map(|a| match a {
            HeadArg::Agg(k, _) => Some(*k),
            HeadArg::Term(_) => None,
        })
    }

    /// The head as a plain atom, when it carries no aggregate.
    pub fn as_atom(&self) -> Option<Atom> {
        let terms = self
            .args
            .iter()
            .map(|a| match a {
                HeadArg::Term(t) => Some(t.clone()),
                HeadArg::Agg(..) => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Atom::new(&self.rel, terms))
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.args {
            match a {
                HeadArg::Term(Term::Var(v)) => out.push(v.clone()),
                HeadArg::Term(_) => {}
                HeadArg::Agg(_, ts) => out.extend(ts.iter().filter_map(|t| match t {
                    Term::Var(v) => Some(v.clone()),
                    _ => None,
                })),
            }
        }
        out
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.rel)?;
        write_list(f, &self.args)?;
        write!(f, ")")
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Rule {
    pub head: Head,
    pub body: Vec<Literal>,
    pub span: Span,
}

impl Rule {
    pub fn new(head: Head, body: Vec<Literal>) -> Rule {
        Rule {
            head,
            body,
            span: Span::default(),
        }
    }

    pub fn plain(head: Atom, body: Vec<Literal>) -> Rule {
        Rule::new(Head::from_atom(head), body)
    }

    pub fn aggregate(&self) -> Option<AggKind> {
        self.head.aggregate()
    }

    pub fn positive_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter_map(|l| match l {
            Literal::Pos(a) => Some(a),
            _ => None,
        })
    }

    pub fn negative_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.body.iter().filter_map(|l| match l {
            Literal::Neg(a) => Some(a),
            _ => None,
        })
    }

    pub fn body_relations(&self) -> impl Iterator<Item = &str> {
        self.body.iter().filter_map(|l| l.atom().map(|a| a.rel.as_str()))
    }

    /// Whether the rule reads `rel` under negation or a stratified aggregate.
    pub fn reads_non_monotonically(&self, rel: &str) -> bool {
        let stratified = self.aggregate().is_some_and(AggKind::is_stratified);
        self.body.iter().any(|l| match l {
            Literal::Neg(a) => a.rel == rel,
            Literal::Pos(a) => stratified && a.rel == rel,
            Literal::Cmp(..) => false,
        })
    }

    pub fn is_monotone(&self) -> bool {
        !self.aggregate().is_some_and(AggKind::is_stratified) && !self.body.iter().any(|l| matches!(l, Literal::Neg(_)))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " <- ")?;
            write_list(f, &self.body)?;
        }
        write!(f, ".")
    }
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Program {
    pub decls: Vec<RelationDecl>,
    pub rules: Vec<Rule>,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&RelationDecl> {
        self.decls.iter().find(|d| d.name == name)
    }

    /// Relations defined by at least one rule.
    pub fn derived(&self) -> BTreeSet<String> {
        self.rules.iter().map(|r| r.head.rel.clone()).collect()
    }

    /// Declared relations that no rule defines.
    pub fn extensional(&self) -> BTreeSet<String> {
        let derived = self.derived();
        self.decls
            .iter()
            .map(|d| d.name.clone())
            .filter(|n| !derived.contains(n))
            .collect()
    }

    /// Negation-free and free of COUNT/SUM.
    pub fn is_monotone(&self) -> bool {
        self.rules.iter().all(Rule::is_monotone)
    }

    /// Checks declarations, arities and rule safety.
    pub fn validate(&self) -> Result<(), DatalogError> {
        let mut seen = BTreeSet::new();
        for d in &self.decls {
            if !seen.insert(d.name.as_str()) {
                return Err(DatalogError::DuplicateDecl { rel: d.name.clone() });
            }
        }
        for rule in &self.rules {
            eval::check_rule(rule, &self.decls)?;
        }
        Ok(())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.decls {
            writeln!(f, "{d}")?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Parses program text: declarations and rules, no section headers.
pub fn parse_program(text: &str) -> Result<Program, DatalogError> {
    let doc = parse_document(text)?;
    let mut program = Program::default();
    for (section, item) in doc.items {
        if let Some(sec) = section {
            return Err(DatalogError::Syntax {
                line: sec.1.line,
                col: sec.1.col,
                msg: format!("unexpected section header @{}", sec.0),
            });
        }
        match item {
            Item::Decl(d) => program.decls.push(d),
            Item::Rule(head, body, span) => program.rules.push(Rule {
                head: head.into_head(),
                body,
                span,
            }),
        }
    }
    program.validate()?;
    Ok(program)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatalogError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared relation {rel}")]
    Undeclared { line: usize, col: usize, rel: String },
    #[error("{line}:{col}: relation {rel} has arity {expected}, used with {got} arguments")]
    Arity {
        line: usize,
        col: usize,
        rel: String,
        expected: usize,
        got: usize,
    },
    #[error("{line}:{col}: unsafe rule: variable {var} is not bound by a positive body atom")]
    Unsafe { line: usize, col: usize, var: String },
    #[error("{line}:{col}: {msg}")]
    Aggregate { line: usize, col: usize, msg: String },
    #[error("relation {rel} declared twice")]
    DuplicateDecl { rel: String },
    #[error("not stratifiable: cycle through negation or aggregation {}", cycle.join(" -> "))]
    NotStratifiable { cycle: Vec<String> },
}
