//! Hand-written lexer and recursive-descent parser for `.adl` programs.

use std::collections::BTreeMap;

use super::ast::{Atom, Claim, CmpOp, Literal, Rule, RuleSet, Term, Value};
use super::LangError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Int(i128),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Turnstile,
    Plus,
    Minus,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Turnstile => "`:-`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> LangError {
    LangError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, LangError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: start_line,
                column: start_col,
            })
        };
        match c {
            _ if c.is_whitespace() => bump!(),
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '(' => {
                push(&mut out, Tok::LParen);
                bump!();
            }
            ')' => {
                push(&mut out, Tok::RParen);
                bump!();
            }
            ',' => {
                push(&mut out, Tok::Comma);
                bump!();
            }
            '.' => {
                push(&mut out, Tok::Dot);
                bump!();
            }
            '+' => {
                push(&mut out, Tok::Plus);
                bump!();
            }
            '-' => {
                push(&mut out, Tok::Minus);
                bump!();
            }
            ':' => {
                if chars.get(i + 1) == Some(&'-') {
                    push(&mut out, Tok::Turnstile);
                    bump!();
                    bump!();
                } else {
                    return Err(syntax(line, col, "expected `:-`"));
                }
            }
            '<' | '>' | '=' | '!' => {
                let next_eq = chars.get(i + 1) == Some(&'=');
                let op = match (c, next_eq) {
                    ('<', true) => CmpOp::Le,
                    ('<', false) => CmpOp::Lt,
                    ('>', true) => CmpOp::Ge,
                    ('>', false) => CmpOp::Gt,
                    ('!', true) => CmpOp::Ne,
                    ('=', _) => CmpOp::Eq,
                    _ => return Err(syntax(line, col, "expected `!=`")),
                };
                push(&mut out, Tok::Cmp(op));
                bump!();
                if next_eq && c != '=' {
                    bump!();
                }
            }
            '\'' | '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(start_line, start_col, "unterminated string")),
                        Some(&q) if q == c => {
                            bump!();
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            bump!();
                        }
                    }
                }
                push(&mut out, Tok::Str(s));
            }
            _ if c.is_ascii_digit() => {
                let mut s = String::new();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    bump!();
                }
                let v: i128 = s
                    .parse()
                    .map_err(|_| syntax(start_line, start_col, "integer literal too large"))?;
                push(&mut out, Tok::Int(v));
            }
            _ if c.is_ascii_alphabetic() => {
                let mut s = String::new();
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    s.push(chars[i]);
                    bump!();
                }
                let tok = if c.is_ascii_uppercase() {
                    Tok::Var(s)
                } else {
                    Tok::Ident(s)
                };
                push(&mut out, tok);
            }
            _ => return Err(syntax(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> LangError {
        let t = &self.toks[self.pos];
        syntax(t.line, t.column, message)
    }

    fn unexpected(&self, wanted: &str) -> LangError {
        self.error_here(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn is_attests(&self, k: usize) -> bool {
        matches!(self.peek_at(k), Tok::Ident(s) if s == "attests")
    }

    fn int_literal(&mut self, negative: bool) -> Result<i64, LangError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                let v = if negative { -v } else { v };
                let v = i64::try_from(v).map_err(|_| self.error_here("integer out of 64-bit range"))?;
                self.next();
                Ok(v)
            }
            _ => Err(self.unexpected("an integer")),
        }
    }

    /// Atom argument: variable or constant.
    fn arg(&mut self) -> Result<Term, LangError> {
        match self.peek().clone() {
            Tok::Var(v) => {
                self.next();
                Ok(Term::Var(v))
            }
            Tok::Ident(s) => {
                self.next();
                Ok(Term::Const(Value::Sym(s)))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Term::Const(Value::Str(s)))
            }
            Tok::Int(_) => Ok(Term::Const(Value::Int(self.int_literal(false)?))),
            Tok::Minus => {
                self.next();
                Ok(Term::Const(Value::Int(self.int_literal(true)?)))
            }
            _ => Err(self.unexpected("a term")),
        }
    }

    /// Comparison operand: an argument or `Var + int` / `Var - int`.
    fn operand(&mut self) -> Result<Term, LangError> {
        let t = self.arg()?;
        if let Term::Var(v) = &t {
            match self.peek() {
                Tok::Plus => {
                    self.next();
                    let neg = if *self.peek() == Tok::Minus {
                        self.next();
                        true
                    } else {
                        false
                    };
                    return Ok(Term::Sum(v.clone(), self.int_literal(neg)?));
                }
                Tok::Minus => {
                    self.next();
                    return Ok(Term::Sum(v.clone(), self.int_literal(true)?));
                }
                _ => {}
            }
        }
        Ok(t)
    }

    fn atom(&mut self) -> Result<Atom, LangError> {
        let predicate = match self.peek().clone() {
            Tok::Ident(s) if s == "not" || s == "attests" => {
                return Err(self.error_here(format!("`{s}` is reserved")))
            }
            Tok::Ident(s) => {
                self.next();
                s
            }
            _ => return Err(self.unexpected("a predicate name")),
        };
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.next();
            loop {
                args.push(self.arg()?);
                match self.peek() {
                    Tok::Comma => {
                        self.next();
                    }
                    Tok::RParen => {
                        self.next();
                        break;
                    }
                    _ => return Err(self.unexpected("`,` or `)`")),
                }
            }
        }
        Ok(Atom { predicate, args })
    }

    fn principal(&mut self) -> Result<Term, LangError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.next();
                Ok(Term::Const(Value::Str(s)))
            }
            Tok::Var(v) => {
                self.next();
                Ok(Term::Var(v))
            }
            _ => Err(self.unexpected("a principal")),
        }
    }

    fn claim(&mut self) -> Result<Claim, LangError> {
        if matches!(self.peek(), Tok::Str(_) | Tok::Var(_)) && self.is_attests(1) {
            let p = self.principal()?;
            self.next();
            Ok(Claim::attested(p, self.atom()?))
        } else {
            Ok(Claim::plain(self.atom()?))
        }
    }

    fn literal(&mut self) -> Result<Literal, LangError> {
        if matches!(self.peek(), Tok::Ident(s) if s == "not") {
            self.next();
            return Ok(Literal::Neg(self.claim()?));
        }
        let is_claim = match self.peek() {
            Tok::Str(_) | Tok::Var(_) => self.is_attests(1),
            Tok::Ident(_) => !matches!(self.peek_at(1), Tok::Cmp(_)),
            _ => false,
        };
        if is_claim {
            return Ok(Literal::Pos(self.claim()?));
        }
        let lhs = self.operand()?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            _ => return Err(self.unexpected("a comparison operator")),
        };
        self.next();
        let rhs = self.operand()?;
        Ok(Literal::Cmp(lhs, op, rhs))
    }

    fn program(&mut self) -> Result<RuleSet, LangError> {
        let mut rs = RuleSet::default();
        while *self.peek() != Tok::Eof {
            let start = self.toks[self.pos].clone();
            let head = self.claim()?;
            match self.peek() {
                Tok::Dot => {
                    self.next();
                    if !head.is_ground() {
                        return Err(syntax(start.line, start.column, format!("fact `{head}` is not ground")));
                    }
                    rs.facts.push(head);
                }
                Tok::Turnstile => {
                    self.next();
                    let mut body = vec![self.literal()?];
                    loop {
                        match self.peek() {
                            Tok::Comma => {
                                self.next();
                                body.push(self.literal()?);
                            }
                            Tok::Dot => {
                                self.next();
                                break;
                            }
                            _ => return Err(self.unexpected("`,` or `.`")),
                        }
                    }
                    rs.rules.push(Rule {
                        id: rs.rules.len(),
                        head,
                        body,
                    });
                }
                _ => return Err(self.unexpected("`:-` or `.`")),
            }
        }
        Ok(rs)
    }
}

/// Parses program text into a rule set, preserving rule order.
pub fn parse_spec(text: &str) -> Result<RuleSet, LangError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let rs = p.program()?;
    check_arities(&rs)?;
    Ok(rs)
}

/// Parses a single ground atom such as `request(a,'b',3)`.
pub fn parse_ground_atom(text: &str) -> Result<Atom, LangError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let atom = p.atom()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("end of input"));
    }
    if !atom.is_ground() {
        return Err(syntax(1, 1, format!("`{atom}` is not ground")));
    }
    Ok(atom)
}

pub(crate) fn check_arities(rs: &RuleSet) -> Result<(), LangError> {
    let mut arity: BTreeMap<&str, usize> = BTreeMap::new();
    let claims = rs.facts.iter().chain(rs.rules.iter().flat_map(|r| {
        std::iter::once(&r.head).chain(r.body.iter().filter_map(Literal::claim))
    }));
    for c in claims {
        let n = c.atom.args.len();
        match arity.get(c.predicate()) {
            Some(&expected) if expected != n => {
                return Err(LangError::Arity {
                    predicate: c.predicate().to_string(),
                    expected,
                    found: n,
                })
            }
            Some(_) => {}
            None => {
                arity.insert(c.predicate(), n);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_rule_two() {
        let rs = parse_spec(
            r"'SB' attests booking(Id,T,C) :- 'SB' attests postRequest('\booking_request',Id,T,C).",
        )
        .unwrap();
        assert_eq!(rs.rules.len(), 1);
        let head = &rs.rules[0].head;
        assert_eq!(head.principal, Some(Term::str("SB")));
        assert_eq!(head.atom.predicate, "booking");
        assert_eq!(head.atom.args.len(), 3);
        let Literal::Pos(body) = &rs.rules[0].body[0] else {
            panic!("expected positive literal")
        };
        assert_eq!(body.atom.args[0], Term::str(r"\booking_request"));
    }

    #[test]
    fn empty_program() {
        let rs = parse_spec("").unwrap();
        assert!(rs.rules.is_empty() && rs.facts.is_empty());
        assert_eq!(parse_spec("  % only a comment\n").unwrap(), RuleSet::default());
    }

    #[test]
    fn dangling_comma() {
        match parse_spec("p(X) :- q(X,).") {
            Err(LangError::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 13)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch() {
        let err = parse_spec("p(X) :- q(X). r(X) :- q(X, X).").unwrap_err();
        assert!(matches!(err, LangError::Arity { ref predicate, expected: 1, found: 2 } if predicate == "q"));
    }

    #[test]
    fn comparisons_and_sums() {
        let rs = parse_spec("d(I) :- b(I,T1), r(I,T2), T2 > T1 + 50, T2 != T1 - 3, T1 >= -2.").unwrap();
        let body = &rs.rules[0].body;
        assert_eq!(body[2], Literal::Cmp(Term::var("T2"), CmpOp::Gt, Term::Sum("T1".into(), 50)));
        assert_eq!(body[3], Literal::Cmp(Term::var("T2"), CmpOp::Ne, Term::Sum("T1".into(), -3)));
        assert_eq!(body[4], Literal::Cmp(Term::var("T1"), CmpOp::Ge, Term::int(-2)));
    }

    #[test]
    fn negation_and_zero_arity() {
        let rs = parse_spec("p :- not q. q :- r.\n r.").unwrap();
        assert_eq!(rs.rules[0].body[0], Literal::Neg(Claim::plain(Atom::new("q", vec![]))));
        assert_eq!(rs.facts.len(), 1);
    }

    #[test]
    fn non_ground_fact_rejected() {
        assert!(matches!(parse_spec("p(X)."), Err(LangError::Syntax { .. })));
    }

    #[test]
    fn ground_atom() {
        let a = parse_ground_atom("request(a,'b c',-3)").unwrap();
        assert_eq!(a.args, vec![Term::sym("a"), Term::str("b c"), Term::int(-3)]);
        assert!(parse_ground_atom("request(X)").is_err());
    }

    #[test]
    fn sum_outside_comparison_is_syntax_error() {
        assert!(parse_spec("p(X + 1) :- q(X).").is_err());
    }

    #[test]
    fn out_of_range_integer() {
        assert!(parse_spec("p(99999999999999999999).").is_err());
        let rs = parse_spec("p(-9223372036854775808).").unwrap();
        assert_eq!(rs.facts[0].atom.args[0], Term::int(i64::MIN));
    }
}
