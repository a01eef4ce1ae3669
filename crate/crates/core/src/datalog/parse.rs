use super::{
    AggKind, ArithOp, Atom, CmpOp, Const, DatalogError, Expr, Fact, Head, HeadArg, Key, Literal, RelationDecl, Span,
    Term,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Arrow,
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    At,
    Not,
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, DatalogError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| DatalogError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        let next = chars.get(i + 1).copied();
        let mut adv = 1;
        let tok = match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => None,
            '%' | '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '.' => Some(Tok::Dot),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '@' => Some(Tok::At),
            '¬' => Some(Tok::Not),
            '=' => Some(Tok::Cmp(CmpOp::Eq)),
            '<' if next == Some('-') => {
                adv = 2;
                Some(Tok::Arrow)
            }
            ':' if next == Some('-') => {
                adv = 2;
                Some(Tok::Arrow)
            }
            '<' if next == Some('=') => {
                adv = 2;
                Some(Tok::Cmp(CmpOp::Le))
            }
            '>' if next == Some('=') => {
                adv = 2;
                Some(Tok::Cmp(CmpOp::Ge))
            }
            '!' if next == Some('=') => {
                adv = 2;
                Some(Tok::Cmp(CmpOp::Ne))
            }
            '<' => Some(Tok::Cmp(CmpOp::Lt)),
            '>' => Some(Tok::Cmp(CmpOp::Gt)),
            '!' => Some(Tok::Not),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => return Err(err(line, col, "unterminated string".into())),
                        Some('"') => break,
                        Some('\\') => {
                            if let Some(&e) = chars.get(j + 1) {
                                s.push(e);
                            }
                            j += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                adv = j + 1 - i;
                Some(Tok::Str(s))
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v = s
                    .parse::<i64>()
                    .map_err(|_| err(line, col, format!("integer out of range: {s}")))?;
                adv = j - i;
                Some(Tok::Int(v))
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '\'' || chars[j] == '′')
                {
                    j += 1;
                }
                let s: String = chars[i..j].iter().map(|&c| if c == '′' { '\'' } else { c }).collect();
                adv = j - i;
                if s == "not" {
                    Some(Tok::Not)
                } else {
                    Some(Tok::Ident(s))
                }
            }
            other => return Err(err(line, col, format!("unexpected character {other:?}"))),
        };
        if let Some(t) = tok {
            out.push((t, span));
        }
        i += adv;
        col += adv;
    }
    Ok(out)
}

/// How bare identifiers in term position are read.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Rule,
    Fact,
}

/// A head as written; role suffixes such as `_emt` are resolved by callers.
#[derive(Clone, Debug)]
pub(crate) struct RawHead {
    pub rel: String,
    pub args: Vec<HeadArg>,
}

impl RawHead {
    pub fn into_head(self) -> Head {
        Head {
            rel: self.rel,
            args: self.args,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Item {
    Decl(RelationDecl),
    Rule(RawHead, Vec<Literal>, Span),
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Document {
    /// Each item with the section header in force, if any.
    pub items: Vec<(Option<(String, Span)>, Item)>,
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    mode: Mode,
    end: Span,
}

impl Parser {
    fn new(text: &str, mode: Mode) -> Result<Parser, DatalogError> {
        let toks = lex(text)?;
        let line = text.lines().count().max(1);
        Ok(Parser {
            toks,
            pos: 0,
            mode,
            end: Span { line, col: 1 },
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off).map(|(t, _)| t)
    }

    fn span(&self) -> Span {
        self.toks.get(self.pos).map(|(_, s)| *s).unwrap_or(self.end)
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T, DatalogError> {
        let s = self.span();
        Err(DatalogError::Syntax {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), DatalogError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, DatalogError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(format!("expected {what}")),
        }
    }

    fn document(&mut self) -> Result<Document, DatalogError> {
        let mut doc = Document::default();
        let mut section: Option<(String, Span)> = None;
        while self.peek().is_some() {
            if self.peek() == Some(&Tok::At) {
                let span = self.span();
                self.pos += 1;
                section = Some((self.ident("section name")?, span));
                continue;
            }
            let is_decl = matches!(self.peek(), Some(Tok::Ident(s)) if s == "decl")
                && matches!(self.peek_at(1), Some(Tok::Ident(_)))
                && self.peek_at(2) == Some(&Tok::Slash);
            let item = if is_decl { self.decl()? } else { self.statement()? };
            doc.items.push((section.clone(), item));
        }
        Ok(doc)
    }

    fn decl(&mut self) -> Result<Item, DatalogError> {
        self.pos += 1;
        let name = self.ident("relation name")?;
        self.expect(Tok::Slash, "'/'")?;
        let arity = match self.bump() {
            Some(Tok::Int(n)) if n >= 0 => n as usize,
            _ => {
                self.pos -= 1;
                return self.error("expected arity");
            }
        };
        let mut key = Key::Absent;
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "key") {
            self.pos += 1;
            self.expect(Tok::Cmp(CmpOp::Eq), "'='")?;
            key = match self.bump() {
                Some(Tok::Int(k)) if k >= 1 && (k as usize) <= arity => Key::Finite(k as usize),
                Some(Tok::Ident(s)) if s == "inf" => Key::Inf,
                _ => {
                    self.pos -= 1;
                    return self.error("key must be an integer between 1 and the arity, or inf");
                }
            };
        }
        self.expect(Tok::Dot, "'.'")?;
        Ok(Item::Decl(RelationDecl { name, arity, key }))
    }

    fn statement(&mut self) -> Result<Item, DatalogError> {
        let span = self.span();
        let head = self.head()?;
        let mut body = Vec::new();
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            loop {
                body.push(self.literal()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Dot, "',' or '.'")?;
        Ok(Item::Rule(head, body, span))
    }

    fn head(&mut self) -> Result<RawHead, DatalogError> {
        let rel = self.ident("relation name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.head_arg()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(RawHead { rel, args })
    }

    fn head_arg(&mut self) -> Result<HeadArg, DatalogError> {
        let kind = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Ident(s)), Some(Tok::Cmp(CmpOp::Lt))) => match s.as_str() {
                "count" => Some(AggKind::Count),
                "sum" => Some(AggKind::Sum),
                "fs_count" => Some(AggKind::FsCount),
                _ => None,
            },
            _ => None,
        };
        let Some(kind) = kind else {
            return Ok(HeadArg::Term(self.term()?));
        };
        self.pos += 2;
        let mut terms = Vec::new();
        let tupled = self.peek() == Some(&Tok::LParen);
        if tupled {
            self.pos += 1;
        }
        let close = if tupled { Tok::RParen } else { Tok::Cmp(CmpOp::Gt) };
        if self.peek() != Some(&close) {
            loop {
                terms.push(self.term()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        if tupled {
            self.expect(Tok::RParen, "')'")?;
        }
        self.expect(Tok::Cmp(CmpOp::Gt), "'>'")?;
        Ok(HeadArg::Agg(kind, terms))
    }

    fn term(&mut self) -> Result<Term, DatalogError> {
        match self.bump() {
            Some(Tok::Ident(s)) if s == "_" && self.mode == Mode::Rule => Ok(Term::Wild),
            Some(Tok::Ident(s)) => Ok(match self.mode {
                Mode::Rule => Term::Var(s),
                Mode::Fact => Term::Const(Const::sym(&s)),
            }),
            Some(Tok::Int(v)) => Ok(Term::Const(Const::Int(v))),
            Some(Tok::Minus) => match self.bump() {
                Some(Tok::Int(v)) => Ok(Term::Const(Const::Int(-v))),
                _ => {
                    self.pos -= 1;
                    self.error("expected integer after '-'")
                }
            },
            Some(Tok::Str(s)) => Ok(Term::Const(Const::sym(&s))),
            _ => {
                self.pos -= 1;
                self.error("expected a term")
            }
        }
    }

    fn atom(&mut self) -> Result<Atom, DatalogError> {
        let rel = self.ident("relation name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut terms = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                terms.push(self.term()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(Atom { rel, terms })
    }

    fn literal(&mut self) -> Result<Literal, DatalogError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(Literal::Neg(self.atom()?));
        }
        if matches!(self.peek(), Some(Tok::Ident(_))) && self.peek_at(1) == Some(&Tok::LParen) {
            return Ok(Literal::Pos(self.atom()?));
        }
        let lhs = self.expr()?;
        let op = match self.bump() {
            Some(Tok::Cmp(op)) => op,
            _ => {
                self.pos -= 1;
                return self.error("expected a comparison operator");
            }
        };
        let rhs = self.expr()?;
        Ok(Literal::Cmp(lhs, op, rhs))
    }

    fn expr(&mut self) -> Result<Expr, DatalogError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => ArithOp::Add,
                Some(Tok::Minus) => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Bin(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, DatalogError> {
        let mut lhs = self.primary()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.primary()?;
            lhs = Expr::Bin(Box::new(lhs), ArithOp::Mul, Box::new(rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, DatalogError> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(e);
        }
        Ok(Expr::Term(self.term()?))
    }
}

/// Parses rule-mode text into declarations and rules, tagged by section.
pub(crate) fn parse_document(text: &str) -> Result<Document, DatalogError> {
    Parser::new(text, Mode::Rule)?.document()
}

/// Parses a fact file: ground atoms, each terminated by '.'.
pub fn parse_facts(text: &str) -> Result<Vec<(Fact, Span)>, DatalogError> {
    let mut p = Parser::new(text, Mode::Fact)?;
    let mut out = Vec::new();
    while p.peek().is_some() {
        let span = p.span();
        let atom = p.atom()?;
        p.expect(Tok::Dot, "'.'")?;
        out.push((ground(atom), span));
    }
    Ok(out)
}

fn ground(atom: Atom) -> Fact {
    let args = atom
        .terms
        .into_iter()
        .map(|t| match t {
            Term::Const(c) => c,
            // Fact mode never produces variables or wildcards.
            _ => unreachable!(),
        })
        .collect();
    Fact { rel: atom.rel, args }
}

/// Parses a comma-separated list of ground atoms, as used in config files.
pub fn parse_atoms(text: &str) -> Result<Vec<Fact>, DatalogError> {
    let mut p = Parser::new(text, Mode::Fact)?;
    let mut out = Vec::new();
    while p.peek().is_some() {
        out.push(ground(p.atom()?));
        match p.peek() {
            Some(Tok::Comma) | Some(Tok::Dot) => p.pos += 1,
            None => {}
            _ => return p.error("expected ',' between facts"),
        }
    }
    Ok(out)
}

/// Parses a single constant as written in a fact file.
pub fn parse_constant(text: &str) -> Result<Const, DatalogError> {
    let mut p = Parser::new(text, Mode::Fact)?;
    let t = p.term()?;
    if p.peek().is_some() {
        return p.error("trailing input after constant");
    }
    match t {
        Term::Const(c) => Ok(c),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod test {
    use super::*;

    #[test]
    fn lexes_primes_and_arrows() {
        let toks: Vec<Tok> = lex("S'(u) <- R(u), x <= 3").unwrap().into_iter().map(|t| t.0).collect();
        assert_eq!(toks[0], Tok::Ident("S'".into()));
        assert!(toks.contains(&Tok::Arrow));
        assert!(toks.contains(&Tok::Cmp(CmpOp::Le)));
    }

    #[test]
    fn parses_aggregate_heads() {
        let doc = parse_document("P(u, v, count<(u, v)>) <- R(u, v).\nC(fs_count<u>) <- N(u).").unwrap();
        assert_eq!(doc.items.len(), 2);
        match &doc.items[0].1 {
            Item::Rule(h, _, _) => assert_eq!(h.args.len(), 3),
            _ => panic!(),
        }
    }

    #[test]
    fn reports_line_and_column() {
        let err = parse_document("R(u) <- T(u).\nQ(u <- T(u).").unwrap_err();
        match err {
            DatalogError::Syntax { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn facts_read_identifiers_as_constants() {
        let facts = parse_facts("R(a, b).\nT(\"x y\", -3).").unwrap();
        assert_eq!(facts[0].0.args, vec![Const::sym("a"), Const::sym("b")]);
        assert_eq!(facts[1].0.args, vec![Const::sym("x y"), Const::Int(-3)]);
    }
}
