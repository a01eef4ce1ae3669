use std::collections::{BTreeMap, BTreeSet};

use super::stratify::stratify;
use super::{
    AggKind, ArithOp, CmpOp, Const, DatalogError, Expr, HeadArg, Instance, Literal, Program, RelationDecl, Rule, Term,
    Tuple,
};

#[derive(Clone, Debug)]
enum Slot {
    Var(usize),
    Const(Const),
}

#[derive(Clone, Debug)]
enum Pat {
    /// Must equal a bound variable or a constant.
    Eq(Slot),
    Bind(usize),
    Any,
}

#[derive(Clone, Debug)]
enum CExpr {
    Slot(Slot),
    Bin(Box<CExpr>, ArithOp, Box<CExpr>),
}

#[derive(Clone, Debug)]
enum Step {
    Scan { rel: String, pats: Vec<Pat>, atom: usize },
    Neg { rel: String, pats: Vec<Pat> },
    Filter(CExpr, CmpOp, CExpr),
    Assign(usize, CExpr),
}

#[derive(Clone, Debug)]
struct Plan {
    head_rel: String,
    head: Vec<Option<Slot>>,
    agg: Option<(AggKind, Vec<Slot>)>,
    steps: Vec<Step>,
    nvars: usize,
    /// Relation of each positive atom, by atom index.
    atoms: Vec<String>,
}

struct Planner<'a> {
    vars: BTreeMap<String, usize>,
    bound: BTreeSet<usize>,
    rule: &'a Rule,
}

impl Planner<'_> {
    fn var(&mut self, name: &str) -> usize {
        let n = self.vars.len();
        *self.vars.entry(name.to_string()).or_insert(n)
    }

    fn is_bound(&self, name: &str) -> bool {
        self.vars.get(name).is_some_and(|v| self.bound.contains(v))
    }

    fn unsafe_var(&self, var: &str) -> DatalogError {
        DatalogError::Unsafe {
            line: self.rule.span.line,
            col: self.rule.span.col,
            var: var.to_string(),
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<CExpr, DatalogError> {
        Ok(match e {
            Expr::Term(Term::Var(v)) => CExpr::Slot(Slot::Var(self.var(v))),
            Expr::Term(Term::Const(c)) => CExpr::Slot(Slot::Const(c.clone())),
            Expr::Term(Term::Wild) => return Err(self.unsafe_var("_")),
            Expr::Bin(a, op, b) => CExpr::Bin(Box::new(self.expr(a)?), *op, Box::new(self.expr(b)?)),
        })
    }

    /// Pattern for an atom; binds fresh variables only when `binding`.
    fn pats(&mut self, terms: &[Term], binding: bool) -> Vec<Pat> {
        let mut out = Vec::new();
        for t in terms {
            out.push(match t {
                Term::Wild => Pat::Any,
                Term::Const(c) => Pat::Eq(Slot::Const(c.clone())),
                Term::Var(v) => {
                    let idx = self.var(v);
                    if self.bound.contains(&idx) {
                        Pat::Eq(Slot::Var(idx))
                    } else if binding {
                        self.bound.insert(idx);
                        Pat::Bind(idx)
                    } else {
                        Pat::Any
                    }
                }
            });
        }
        out
    }

    /// Tries to place a non-scan literal; `None` if not yet bound enough.
    fn place(&mut self, lit: &Literal) -> Result<Option<Step>, DatalogError> {
        match lit {
            Literal::Neg(a) => {
                if a.vars().all(|v| self.is_bound(v)) {
                    let pats = self.pats(&a.terms, false);
                    Ok(Some(Step::Neg {
                        rel: a.rel.clone(),
                        pats,
                    }))
                } else {
                    Ok(None)
                }
            }
            Literal::Cmp(l, op, r) => {
                let (mut lv, mut rv) = (Vec::new(), Vec::new());
                l.vars(&mut lv);
                r.vars(&mut rv);
                let lb = lv.iter().all(|v| self.is_bound(v));
                let rb = rv.iter().all(|v| self.is_bound(v));
                if lb && rb {
                    return Ok(Some(Step::Filter(self.expr(l)?, *op, self.expr(r)?)));
                }
                if *op == CmpOp::Eq {
                    let lone = |e: &Expr| match e {
                        Expr::Term(Term::Var(v)) => Some(v.clone()),
                        _ => None,
                    };
                    let target = if rb {
                        lone(l).map(|v| (v, r))
                    } else if lb {
                        lone(r).map(|v| (v, l))
                    } else {
                        None
                    };
                    if let Some((v, src)) = target {
                        let e = self.expr(src)?;
                        let idx = self.var(&v);
                        self.bound.insert(idx);
                        return Ok(Some(Step::Assign(idx, e)));
                    }
                }
                Ok(None)
            }
            Literal::Pos(_) => unreachable!(),
        }
    }
}

fn check_atom(rule: &Rule, rel: &str, arity: usize, decls: &[RelationDecl]) -> Result<(), DatalogError> {
    let (line, col) = (rule.span.line, rule.span.col);
    match decls.iter().find(|d| d.name == rel) {
        None => Err(DatalogError::Undeclared {
            line,
            col,
            rel: rel.to_string(),
        }),
        Some(d) if d.arity != arity => Err(DatalogError::Arity {
            line,
            col,
            rel: rel.to_string(),
            expected: d.arity,
            got: arity,
        }),
        Some(_) => Ok(()),
    }
}

fn plan(rule: &Rule, decls: &[RelationDecl]) -> Result<Plan, DatalogError> {
    let (line, col) = (rule.span.line, rule.span.col);
    check_atom(rule, &rule.head.rel, rule.head.args.len(), decls)?;
    for lit in &rule.body {
        if let Some(a) = lit.atom() {
            check_atom(rule, &a.rel, a.terms.len(), decls)?;
        }
    }
    let aggs = rule.head.args.iter().filter(|a| matches!(a, HeadArg::Agg(..))).count();
    if aggs > 1 {
        return Err(DatalogError::Aggregate {
            line,
            col,
            msg: "at most one aggregate per head".into(),
        });
    }
    let mut p = Planner {
        vars: BTreeMap::new(),
        bound: BTreeSet::new(),
        rule,
    };
    let mut steps = Vec::new();
    let mut pending: Vec<&Literal> = rule.body.iter().filter(|l| !matches!(l, Literal::Pos(_))).collect();
    let mut atoms = Vec::new();
    let flush = |p: &mut Planner, pending: &mut Vec<&Literal>, steps: &mut Vec<Step>| -> Result<(), DatalogError> {
        loop {
            let mut progressed = false;
            let mut i = 0;
            while i < pending.len() {
                if let Some(step) = p.place(pending[i])? {
                    steps.push(step);
                    pending.remove(i);
                    progressed = true;
                } else {
                    i += 1;
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    };
    flush(&mut p, &mut pending, &mut steps)?;
    for lit in &rule.body {
        if let Literal::Pos(a) = lit {
            let pats = p.pats(&a.terms, true);
            steps.push(Step::Scan {
                rel: a.rel.clone(),
                pats,
                atom: atoms.len(),
            });
            atoms.push(a.rel.clone());
            flush(&mut p, &mut pending, &mut steps)?;
        }
    }
    if let Some(lit) = pending.first() {
        let mut vars = Vec::new();
        match lit {
            Literal::Neg(a) => vars.extend(a.vars().map(str::to_string)),
            Literal::Cmp(l, _, r) => {
                l.vars(&mut vars);
                r.vars(&mut vars);
            }
            Literal::Pos(_) => {}
        }
        let var = vars.into_iter().find(|v| !p.is_bound(v)).unwrap_or_default();
        return Err(p.unsafe_var(&var));
    }
    let slot = |p: &mut Planner, t: &Term| -> Result<Slot, DatalogError> {
        match t {
            Term::Var(v) if p.is_bound(v) => Ok(Slot::Var(p.var(v))),
            Term::Var(v) => Err(p.unsafe_var(v)),
            Term::Const(c) => Ok(Slot::Const(c.clone())),
            Term::Wild => Err(p.unsafe_var("_")),
        }
    };
    let mut head = Vec::new();
    let mut agg = None;
    for a in &rule.head.args {
        match a {
            HeadArg::Term(t) => head.push(Some(slot(&mut p, t)?)),
            HeadArg::Agg(kind, ts) => {
                if ts.iter().any(|t| matches!(t, Term::Wild)) {
                    return Err(DatalogError::Aggregate {
                        line,
                        col,
                        msg: "wildcard inside aggregate".into(),
                    });
                }
                if *kind == AggKind::Sum && ts.is_empty() {
                    return Err(DatalogError::Aggregate {
                        line,
                        col,
                        msg: "sum needs an argument".into(),
                    });
                }
                let slots = ts.iter().map(|t| slot(&mut p, t)).collect::<Result<Vec<_>, _>>()?;
                agg = Some((*kind, slots));
                head.push(None);
            }
        }
    }
    Ok(Plan {
        head_rel: rule.head.rel.clone(),
        head,
        agg,
        steps,
        nvars: p.vars.len(),
        atoms,
    })
}

/// Checks that every relation is declared with the right arity and that
/// the rule is safe.
pub(crate) fn check_rule(rule: &Rule, decls: &[RelationDecl]) -> Result<(), DatalogError> {
    plan(rule, decls).map(|_| ())
}

type Env = Vec<Option<Const>>;

fn slot_value<'a>(s: &'a Slot, env: &'a Env) -> &'a Const {
    match s {
        Slot::Var(v) => env[*v].as_ref().expect("planner binds before use"),
        Slot::Const(c) => c,
    }
}

fn eval_expr(e: &CExpr, env: &Env) -> Option<Const> {
    match e {
        CExpr::Slot(s) => Some(slot_value(s, env).clone()),
        CExpr::Bin(a, op, b) => {
            let x = eval_expr(a, env)?.as_int()?;
            let y = eval_expr(b, env)?.as_int()?;
            let v = match op {
                ArithOp::Add => x.checked_add(y),
                ArithOp::Sub => x.checked_sub(y),
                ArithOp::Mul => x.checked_mul(y),
            }?;
            Some(Const::Int(v))
        }
    }
}

fn compare(a: &Const, op: CmpOp, b: &Const) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    }
}

fn matches(pats: &[Pat], t: &Tuple, env: &Env) -> bool {
    pats.iter().zip(t).all(|(p, c)| match p {
        Pat::Eq(s) => slot_value(s, env) == c,
        Pat::Bind(_) | Pat::Any => true,
    })
}

/// Which source each scan reads.
#[derive(Clone, Copy)]
struct Sources<'a> {
    full: &'a Instance,
    delta: Option<(usize, &'a Instance)>,
}

fn run<F: FnMut(&Env)>(plan: &Plan, src: Sources, i: usize, env: &mut Env, emit: &mut F) {
    let Some(step) = plan.steps.get(i) else {
        emit(env);
        return;
    };
    match step {
        Step::Scan { rel, pats, atom } => {
            let inst = match src.delta {
                Some((d, delta)) if d == *atom => delta,
                _ => src.full,
            };
            let Some(set) = inst.get(rel) else { return };
            let prefix: Tuple = pats
                .iter()
                .map_while(|p| match p {
                    Pat::Eq(s) => Some(slot_value(s, env).clone()),
                    _ => None,
                })
                .collect();
            let iter: Box<dyn Iterator<Item = &Tuple>> = if prefix.is_empty() {
                Box::new(set.iter())
            } else {
                let pl = prefix.len();
                Box::new(set.range(prefix.clone()..).take_while(move |t| t[..pl] == prefix[..]))
            };
            for t in iter {
                // Positions are processed left to right, so a variable
                // repeated inside the atom is bound before it is compared.
                let mut fresh = Vec::new();
                let mut ok = true;
                for (p, c) in pats.iter().zip(t) {
                    match p {
                        Pat::Bind(v) => {
                            env[*v] = Some(c.clone());
                            fresh.push(*v);
                        }
                        Pat::Eq(s) if slot_value(s, env) != c => {
                            ok = false;
                            break;
                        }
                        _ => {}
                    }
                }
                if ok {
                    run(plan, src, i + 1, env, emit);
                }
                for v in fresh {
                    env[v] = None;
                }
            }
        }
        Step::Neg { rel, pats } => {
            let hit = src
                .full
                .get(rel)
                .is_some_and(|set| set.iter().any(|t| matches(pats, t, env)));
            if !hit {
                run(plan, src, i + 1, env, emit);
            }
        }
        Step::Filter(a, op, b) => {
            if let (Some(x), Some(y)) = (eval_expr(a, env), eval_expr(b, env)) {
                if compare(&x, *op, &y) {
                    run(plan, src, i + 1, env, emit);
                }
            }
        }
        Step::Assign(v, e) => {
            if let Some(x) = eval_expr(e, env) {
                env[*v] = Some(x);
                run(plan, src, i + 1, env, emit);
                env[*v] = None;
            }
        }
    }
}

/// Whether every nullary literal of the body holds. An ungrouped aggregate
/// with arguments yields its neutral value over an empty body only then;
/// `count<>` counts the nullary literals themselves.
fn guards_hold(plan: &Plan, full: &Instance) -> bool {
    plan.steps.iter().all(|s| match s {
        Step::Scan { rel, pats, .. } if pats.is_empty() => full.contains(rel, &Tuple::from(vec![])),
        Step::Neg { rel, pats } if pats.is_empty() => !full.contains(rel, &Tuple::from(vec![])),
        _ => true,
    })
}

/// Evaluates one rule and returns its head tuples.
fn fire(plan: &Plan, src: Sources) -> BTreeSet<Tuple> {
    let mut env: Env = vec![None; plan.nvars];
    let mut out = BTreeSet::new();
    match &plan.agg {
        None => {
            run(plan, src, 0, &mut env, &mut |env| {
                out.insert(
                    plan.head
                        .iter()
                        .map(|s| slot_value(s.as_ref().unwrap(), env).clone())
                        .collect(),
                );
            });
        }
        Some((kind, slots)) => {
            let mut groups: BTreeMap<Tuple, BTreeSet<Tuple>> = BTreeMap::new();
            run(plan, src, 0, &mut env, &mut |env| {
                let key: Tuple = plan.head.iter().flatten().map(|s| slot_value(s, env).clone()).collect();
                let val: Tuple = slots.iter().map(|s| slot_value(s, env).clone()).collect();
                groups.entry(key).or_default().insert(val);
            });
            let ungrouped = plan.head.iter().flatten().all(|s| matches!(s, Slot::Const(_)));
            if groups.is_empty() && ungrouped && (slots.is_empty() || guards_hold(plan, src.full)) {
                let key = plan
                    .head
                    .iter()
                    .flatten()
                    .map(|s| slot_value(s, &env).clone())
                    .collect();
                groups.insert(key, BTreeSet::new());
            }
            for (key, vals) in groups {
                let value = match kind {
                    AggKind::Count | AggKind::FsCount => vals.len() as i64,
                    AggKind::Sum => vals.iter().filter_map(|v| v[0].as_int()).fold(0i64, i64::wrapping_add),
                };
                let mut key = key.into_iter();
                out.insert(
                    plan.head
                        .iter()
                        .map(|s| match s {
                            Some(_) => key.next().unwrap(),
                            None => Const::Int(value),
                        })
                        .collect(),
                );
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Stratum {
    rels: BTreeSet<String>,
    /// COUNT/SUM rules, evaluated once when the stratum starts.
    once: Vec<Plan>,
    /// FS_COUNT rules, re-evaluated in full every iteration.
    full: Vec<Plan>,
    /// Plain rules, evaluated incrementally.
    plain: Vec<Plan>,
}

/// A validated, stratified program ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledProgram {
    program: Program,
    strata: Vec<Stratum>,
}

impl CompiledProgram {
    pub fn new(program: Program) -> Result<CompiledProgram, DatalogError> {
        program.validate()?;
        let order = stratify(&program)?;
        let mut strata: Vec<Stratum> = order
            .into_iter()
            .map(|rels| Stratum {
                rels,
                once: vec![],
                full: vec![],
                plain: vec![],
            })
            .collect();
        let index: BTreeMap<String, usize> = strata
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.rels.iter().map(move |r| (r.clone(), i)))
            .collect();
        for rule in &program.rules {
            let p = plan(rule, &program.decls)?;
            let s = &mut strata[index[&rule.head.rel]];
            match rule.aggregate() {
                Some(AggKind::FsCount) => s.full.push(p),
                Some(_) => s.once.push(p),
                None => s.plain.push(p),
            }
        }
        Ok(CompiledProgram { program, strata })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    /// Derived relations grouped by stratum, lowest first.
    pub fn strata(&self) -> Vec<BTreeSet<String>> {
        self.strata.iter().map(|s| s.rels.clone()).collect()
    }

    /// Semi-naive evaluation. Returns the input together with every derived fact.
    pub fn evaluate(&self, edb: &Instance) -> Instance {
        self.eval(edb, true)
    }

    /// Naive evaluation; same result as `evaluate`.
    pub fn evaluate_naive(&self, edb: &Instance) -> Instance {
        self.eval(edb, false)
    }

    fn eval(&self, edb: &Instance, semi_naive: bool) -> Instance {
        let mut inst = edb.clone();
        for s in &self.strata {
            let start = Sources {
                full: &inst,
                delta: None,
            };
            let mut fresh = Instance::new();
            for p in &s.once {
                for t in fire(p, start) {
                    fresh.insert(&p.head_rel, t);
                }
            }
            inst.extend_from(&fresh);
            let mut delta: Option<Instance> = None;
            loop {
                let mut new = Instance::new();
                let src = Sources {
                    full: &inst,
                    delta: None,
                };
                for p in &s.full {
                    add_new(&mut new, &inst, &p.head_rel, fire(p, src));
                }
                for p in &s.plain {
                    match (&delta, semi_naive) {
                        (Some(d), true) => {
                            for (k, rel) in p.atoms.iter().enumerate() {
                                if s.rels.contains(rel) && d.get(rel).is_some() {
                                    let src = Sources {
                                        full: &inst,
                                        delta: Some((k, d)),
                                    };
                                    add_new(&mut new, &inst, &p.head_rel, fire(p, src));
                                }
                            }
                        }
                        _ => add_new(&mut new, &inst, &p.head_rel, fire(p, src)),
                    }
                }
                if new.is_empty() {
                    break;
                }
                inst.extend_from(&new);
                delta = Some(new);
            }
        }
        inst
    }
}

fn add_new(new: &mut Instance, inst: &Instance, rel: &str, tuples: BTreeSet<Tuple>) {
    for t in tuples {
        if !inst.contains(rel, &t) {
            new.insert(rel, t);
        }
    }
}

/// Compiles and evaluates `program` on `edb` (semi-naive).
pub fn evaluate(program: &Program, edb: &Instance) -> Result<Instance, DatalogError> {
    Ok(CompiledProgram::new(program.clone())?.evaluate(edb))
}

/// Compiles and evaluates `program` on `edb` (naive).
pub fn evaluate_naive(program: &Program, edb: &Instance) -> Result<Instance, DatalogError> {
    Ok(CompiledProgram::new(program.clone())?.evaluate_naive(edb))
}

#[cfg(test)]
mod test {
    use super::*;
    use crate::datalog::{parse_facts, parse_program};

    fn facts(text: &str) -> Instance {
        Instance::from_facts(parse_facts(text).unwrap().into_iter().map(|f| f.0))
    }

    fn rel(inst: &Instance, r: &str) -> Instance {
        inst.restrict(|n| n == r)
    }

    #[test]
    fn join_on_shared_variable() {
        let p = parse_program("decl R/2. decl S/2. decl Q/2. Q(x, z) <- R(x, y), S(y, z).").unwrap();
        let out = evaluate(&p, &facts("R(a, b). R(b, c). S(b, d). S(c, e).")).unwrap();
        assert_eq!(rel(&out, "Q"), facts("Q(a, d). Q(b, e)."));
    }

    #[test]
    fn emptiness_query() {
        let p = parse_program("decl R/1. decl NE/0. decl T/0. NE() <- R(_). T() <- not NE().").unwrap();
        assert_eq!(rel(&evaluate(&p, &Instance::new()).unwrap(), "T"), facts("T()."));
        assert!(rel(&evaluate(&p, &facts("R(a).")).unwrap(), "T").is_empty());
    }

    #[test]
    fn negation_of_derived_relation() {
        let p = parse_program(
            "decl E/2. decl CS/1. decl Q/2.
             CS(x) <- E(x, y), E(y, x).
             Q(x, y) <- E(x, y), not CS(x).",
        )
        .unwrap();
        let out = evaluate(&p, &facts("E(a, b). E(b, a). E(a, c). E(c, d).")).unwrap();
        assert_eq!(rel(&out, "Q"), facts("Q(c, d)."));
    }

    #[test]
    fn unsafe_rule_is_rejected() {
        let err = parse_program("decl R/1. decl Q/2. Q(x, y) <- R(x).").unwrap_err();
        assert!(matches!(err, DatalogError::Unsafe { var, .. } if var == "y"));
        let err = parse_program("decl R/1. decl Q/1. Q(x) <- not R(x).").unwrap_err();
        assert!(matches!(err, DatalogError::Unsafe { .. }));
    }

    #[test]
    fn undeclared_and_arity_errors() {
        assert!(matches!(
            parse_program("decl Q/1. Q(x) <- R(x).").unwrap_err(),
            DatalogError::Undeclared { rel, .. } if rel == "R"
        ));
        assert!(matches!(
            parse_program("decl R/2. decl Q/1. Q(x) <- R(x).").unwrap_err(),
            DatalogError::Arity {
                expected: 2,
                got: 1,
                ..
            }
        ));
    }

    #[test]
    fn transitive_closure() {
        let p = parse_program("decl E/2. decl T/2. T(x, y) <- E(x, y). T(x, z) <- T(x, y), E(y, z).").unwrap();
        let out = evaluate(&p, &facts("E(1, 2). E(2, 3). E(3, 4).")).unwrap();
        assert_eq!(rel(&out, "T").len(), 6);
        assert_eq!(out, evaluate_naive(&p, &facts("E(1, 2). E(2, 3). E(3, 4).")).unwrap());
    }

    #[test]
    fn aggregates() {
        let p = parse_program(
            "decl R/2. decl C/1. decl G/2. decl S/1. decl Z/1.
             C(count<x>) <- R(x, _).
             G(x, count<y>) <- R(x, y).
             S(sum<y>) <- R(_, y).
             Z(count<x>) <- R(x, x).",
        )
        .unwrap();
        let out = evaluate(&p, &facts("R(a, 1). R(a, 2). R(b, 2).")).unwrap();
        assert_eq!(rel(&out, "C"), facts("C(2)."));
        assert_eq!(rel(&out, "G"), facts("G(a, 2). G(b, 1)."));
        assert_eq!(rel(&out, "S"), facts("S(3)."));
        assert_eq!(rel(&out, "Z"), facts("Z(0)."));
    }

    #[test]
    fn nullary_literals_guard_the_neutral_value() {
        let p = parse_program(
            "decl R/1. decl G/0. decl H/0. decl C/1. decl N/1.
             C(count<x>) <- R(x), G().
             N(count<>) <- H().",
        )
        .unwrap();
        let out = evaluate(&p, &Instance::new()).unwrap();
        assert!(rel(&out, "C").is_empty());
        assert_eq!(rel(&out, "N"), facts("N(0)."));
        let out = evaluate(&p, &facts("G(). H().")).unwrap();
        assert_eq!(rel(&out, "C"), facts("C(0)."));
        assert_eq!(rel(&out, "N"), facts("N(1)."));
    }

    #[test]
    fn fs_count_keeps_earlier_counts() {
        let p = parse_program(
            "decl E/2. decl T/2. decl N/1.
             T(x, y) <- E(x, y). T(x, z) <- T(x, y), E(y, z).
             N(fs_count<x, y>) <- T(x, y).",
        )
        .unwrap();
        let out = evaluate(&p, &facts("E(1, 2). E(2, 3).")).unwrap();
        let counts: BTreeSet<i64> = out.get("N").unwrap().iter().map(|t| t[0].as_int().unwrap()).collect();
        assert!(counts.contains(&3));
        assert!(counts.iter().all(|&c| c <= 3));
    }

    #[test]
    fn arithmetic_assignment() {
        let p = parse_program("decl T/1. decl N/1. N(s) <- T(t), s = t + 1, s > 2.").unwrap();
        let out = evaluate(&p, &facts("T(1). T(2). T(x).")).unwrap();
        assert_eq!(rel(&out, "N"), facts("N(3)."));
    }

    #[test]
    fn bound_prefix_scan() {
        let p = parse_program("decl E/2. decl Q/1. Q(y) <- E(\"b\", y).").unwrap();
        let out = evaluate(&p, &facts("E(a, 1). E(b, 2). E(b, 3). E(c, 4).")).unwrap();
        assert_eq!(rel(&out, "Q"), facts("Q(2). Q(3)."));
    }
}
