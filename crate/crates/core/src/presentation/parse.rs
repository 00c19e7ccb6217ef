//! Line-oriented presentation source.
//!
//! ```text
//! name <ident>                                   # optional
//! structure group|algebra|lie|custom
//! monoidal cartesian|tensor                      # optional, default cartesian
//! scalar <name> = <float>
//! generator <name> arity <in>-><out> [invertible [<inverse name>]]
//! relation [<label>:] <expr> = <expr>
//! ```
//!
//! Expressions, loosest binding first: `*` composes (right operand applied
//! first), `x` is the block product, `+` adds maps, and a number or scalar
//! name in front of an atom scales it. Atoms are generators, inverse names,
//! `inv(g)`, `id`, `id^k`, `place(g, i, m)`, `[a, b]` (the commutator
//! `a*b + -1 b*a`) and parenthesized expressions. `#` starts a comment.

use std::collections::BTreeMap;

use super::{Coef, GeneratorDecl, Presentation, PresentationError, RelExpr, RelationEq, StructureKind};
use crate::presentation::{Arity, Monoidal};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Int(usize),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Star,
    Plus,
    Caret,
    Eq,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> PresentationError {
    PresentationError::Syntax { line, col, msg: msg.into() }
}

/// `offset` is the 0-based character column where `text` starts in its line.
fn lex(text: &str, line: usize, offset: usize) -> Result<Vec<Token>, PresentationError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = offset + i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            '*' => Some(Tok::Star),
            '+' => Some(Tok::Plus),
            '^' => Some(Tok::Caret),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, col });
            i += 1;
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || c == '.'
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        if starts_number {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let tok = if s.chars().all(|d| d.is_ascii_digit()) {
                Tok::Int(s.parse().map_err(|_| syntax(line, col, format!("integer `{s}` out of range")))?)
            } else {
                Tok::Num(s.parse().map_err(|_| syntax(line, col, format!("malformed number `{s}`")))?)
            };
            out.push(Token { tok, col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
            continue;
        }
        return Err(syntax(line, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
    end_col: usize,
    pres: &'a Presentation,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, msg: impl Into<String>) -> PresentationError {
        syntax(self.line, self.col(), msg)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), PresentationError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn is_product_op(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == "x")
    }

    fn expr(&mut self) -> Result<RelExpr, PresentationError> {
        let mut acc = self.term()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            acc = acc.after(self.term()?);
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<RelExpr, PresentationError> {
        let mut acc = self.sum()?;
        while self.is_product_op() {
            self.pos += 1;
            acc = acc.times(self.sum()?);
        }
        Ok(acc)
    }

    fn sum(&mut self) -> Result<RelExpr, PresentationError> {
        let mut acc = self.unary()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            acc = acc.plus(self.unary()?);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<RelExpr, PresentationError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(self.unary()?.scaled(Coef::Value(v)))
            }
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(self.unary()?.scaled(Coef::Value(v as f64)))
            }
            Some(Tok::Ident(name)) if self.pres.scalars.contains_key(&name) => {
                self.pos += 1;
                Ok(self.unary()?.scaled(Coef::Symbol(name)))
            }
            _ => self.primary(),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), PresentationError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok((s, col))
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<usize, PresentationError> {
        match self.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn generator_name(&mut self) -> Result<String, PresentationError> {
        let (name, col) = self.ident("a generator name")?;
        if self.pres.generator(&name).is_none() {
            return Err(PresentationError::UndeclaredSymbol { line: self.line, col, name });
        }
        Ok(name)
    }

    fn primary(&mut self) -> Result<RelExpr, PresentationError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::LBracket) => {
                self.pos += 1;
                let a = self.expr()?;
                self.expect(Tok::Comma, "`,` in commutator")?;
                let b = self.expr()?;
                self.expect(Tok::RBracket, "`]`")?;
                let ab = a.clone().after(b.clone());
                let ba = b.after(a);
                Ok(ab.plus(ba.scaled(Coef::Value(-1.0))))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "id" => {
                        if self.peek() == Some(&Tok::Caret) {
                            self.pos += 1;
                            let k = self.int("a block count after `^`")?;
                            if k == 0 {
                                return Err(syntax(self.line, col, "id^0 is not allowed"));
                            }
                            Ok(RelExpr::Identity(k))
                        } else {
                            Ok(RelExpr::Identity(1))
                        }
                    }
                    "inv" => {
                        self.expect(Tok::LParen, "`(` after inv")?;
                        let g = self.generator_name()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(RelExpr::InvGen(g))
                    }
                    "place" => {
                        self.expect(Tok::LParen, "`(` after place")?;
                        let g = self.generator_name()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let i = self.int("a strand position")?;
                        self.expect(Tok::Comma, "`,`")?;
                        let m = self.int("a strand count")?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(RelExpr::Place { name: g, i, m })
                    }
                    "x" => Err(syntax(self.line, col, "unexpected product operator `x`")),
                    _ => {
                        if self.pres.generator(&name).is_some() {
                            Ok(RelExpr::Gen(name))
                        } else if let Some(g) = self.pres.inverse_of(&name) {
                            Ok(RelExpr::InvGen(g.name.clone()))
                        } else {
                            Err(PresentationError::UndeclaredSymbol { line: self.line, col, name })
                        }
                    }
                }
            }
            Some(_) => Err(self.err("expected an expression")),
            None => Err(self.err("unexpected end of line")),
        }
    }
}

fn parse_kind(word: &str, line: usize, col: usize) -> Result<StructureKind, PresentationError> {
    match word {
        "group" => Ok(StructureKind::Group),
        "algebra" | "associative-algebra" => Ok(StructureKind::Algebra),
        "lie" | "lie-algebra" => Ok(StructureKind::Lie),
        "custom" => Ok(StructureKind::Custom),
        other => Err(syntax(line, col, format!("unknown structure `{other}`"))),
    }
}

fn parse_arity(word: &str, line: usize, col: usize) -> Result<Arity, PresentationError> {
    let bad = || syntax(line, col, format!("arity `{word}` must look like <in>-><out>"));
    let (a, b) = word.split_once("->").ok_or_else(bad)?;
    Ok(Arity::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Column (1-based) of the first character of `needle` inside `line`.
fn col_of(line: &str, needle: &str) -> usize {
    line.find(needle).map_or(1, |b| line[..b].chars().count() + 1)
}

/// Parses and validates presentation source text.
pub fn parse_presentation(text: &str) -> Result<Presentation, PresentationError> {
    let mut pres = Presentation {
        name: "presentation".to_string(),
        kind: StructureKind::Custom,
        monoidal: Monoidal::Cartesian,
        generators: Vec::new(),
        relations: Vec::new(),
        scalars: BTreeMap::new(),
    };
    let mut saw_structure = false;
    let mut relation_lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (keyword, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        let rest_col = col_of(line, rest);
        match keyword {
            "name" => pres.name = rest.to_string(),
            "structure" => {
                pres.kind = parse_kind(rest, lineno, rest_col)?;
                saw_structure = true;
            }
            "monoidal" => {
                pres.monoidal = match rest {
                    "cartesian" => Monoidal::Cartesian,
                    "tensor" => Monoidal::Tensor,
                    other => return Err(syntax(lineno, rest_col, format!("unknown monoidal mode `{other}`"))),
                }
            }
            "scalar" => {
                let (name, value) = rest
                    .split_once('=')
                    .ok_or_else(|| syntax(lineno, rest_col, "expected `scalar <name> = <float>`"))?;
                let name = name.trim();
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| syntax(lineno, col_of(line, value.trim()), format!("malformed number `{}`", value.trim())))?;
                if pres.scalars.insert(name.to_string(), v).is_some() {
                    return Err(syntax(lineno, rest_col, format!("scalar `{name}` declared twice")));
                }
            }
            "generator" => {
                let words: Vec<&str> = rest.split_whitespace().collect();
                if words.len() < 3 || words[1] != "arity" {
                    return Err(syntax(lineno, rest_col, "expected `generator <name> arity <in>-><out> [invertible [<inverse>]]`"));
                }
                let arity = parse_arity(words[2], lineno, col_of(line, words[2]))?;
                let mut decl = GeneratorDecl { name: words[0].to_string(), arity, inverse: None };
                match words.get(3) {
                    None => {}
                    Some(&"invertible") => {
                        let inv = words.get(4).map_or_else(|| format!("{}_inv", words[0]), |s| s.to_string());
                        if words.len() > 5 {
                            return Err(syntax(lineno, col_of(line, words[5]), "trailing tokens after inverse name"));
                        }
                        decl.inverse = Some(inv);
                    }
                    Some(other) => return Err(syntax(lineno, col_of(line, other), format!("unexpected `{other}`"))),
                }
                if pres.generator(&decl.name).is_some() {
                    return Err(syntax(lineno, rest_col, format!("generator `{}` declared twice", decl.name)));
                }
                pres.generators.push(decl);
            }
            "relation" => relation_lines.push((lineno, line.to_string(), rest.to_string())),
            other => return Err(syntax(lineno, col_of(line, other), format!("unknown directive `{other}`"))),
        }
    }
    if !saw_structure {
        return Err(syntax(1, 1, "missing `structure` line"));
    }

    for (lineno, line, rest) in relation_lines {
        let (label, body) = match rest.split_once(':') {
            Some((l, b)) => (l.trim().to_string(), b.to_string()),
            None => (rest.trim().to_string(), rest.clone()),
        };
        let offset = col_of(&line, &body) - 1;
        let toks = lex(&body, lineno, offset)?;
        let end_col = offset + body.chars().count() + 1;
        let mut p = ExprParser { toks, pos: 0, line: lineno, end_col, pres: &pres };
        let lhs = p.expr()?;
        p.expect(Tok::Eq, "`=` between the two sides")?;
        let rhs = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing input after relation"));
        }
        pres.relations.push(RelationEq { label, lhs, rhs });
    }

    pres.validate()?;
    Ok(pres)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BRAID_B3: &str = "
        name braid_b3
        structure group
        generator f arity 2->2 invertible g   # the crossing and its paired inverse
        relation R3: place(f,1,3) * place(f,2,3) * place(f,1,3) = place(f,2,3) * place(f,1,3) * place(f,2,3)
        relation R2a: f * g = id^2
        relation R2b: g * f = id^2
    ";

    #[test]
    fn parses_braid_source() {
        let p = parse_presentation(BRAID_B3).unwrap();
        assert_eq!(p.generators.len(), 1);
        assert!(p.generators[0].invertible());
        assert_eq!(p.network_names().len(), 2);
        assert_eq!(p.relations.len(), 3);
        assert_eq!(p.relations[1].lhs, RelExpr::gen("f").after(RelExpr::inv("f")));
    }

    #[test]
    fn undeclared_symbol_is_named() {
        let err = parse_presentation("structure group\ngenerator s arity 1->1\nrelation s * t = t * s\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3, column 14: undeclared symbol t");
    }

    #[test]
    fn scalar_multiple_binds_to_symbol() {
        let p = parse_presentation("structure algebra\nscalar delta = 1.0\ngenerator U arity 2->2\nrelation U * U = delta U\n").unwrap();
        assert_eq!(p.relations[0].rhs, RelExpr::gen("U").scaled(Coef::Symbol("delta".into())));
        assert_eq!(p.scalar("delta"), Some(1.0));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let err = parse_presentation("structure group\ngenerator f arity 2->2\nrelation bad: f = id\n").unwrap_err();
        assert!(matches!(err, PresentationError::ArityMismatch { ref label, .. } if label == "bad"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_presentation("structure group\ngenerator f arity 2->2\nrelation f * = f\n").unwrap_err();
        assert_eq!(err, PresentationError::Syntax { line: 3, col: 14, msg: "expected an expression".into() });
        let err = parse_presentation("structure group\ngenerator f arity 2-2\n").unwrap_err();
        assert!(matches!(err, PresentationError::Syntax { line: 2, col: 19, .. }), "{err:?}");
    }

    #[test]
    fn needs_structure_and_relations() {
        assert!(parse_presentation("generator f arity 1->1\n").is_err());
        assert!(parse_presentation("structure group\ngenerator f arity 1->1\n").is_err());
        assert!(parse_presentation("structure custom\ngenerator f arity 1->1\n").is_ok());
    }

    #[test]
    fn commutator_desugars() {
        let p = parse_presentation("structure lie\ngenerator a arity 1->1\ngenerator b arity 1->1\nrelation [a, b] = 0 a\n").unwrap();
        let expect = RelExpr::gen("a")
            .after(RelExpr::gen("b"))
            .plus(RelExpr::gen("b").after(RelExpr::gen("a")).scaled(Coef::Value(-1.0)));
        assert_eq!(p.relations[0].lhs, expect);
    }

    #[test]
    fn unlabeled_relation_uses_its_text() {
        let p = parse_presentation("structure group\ngenerator f arity 1->1\nrelation f * f = id\n").unwrap();
        assert_eq!(p.relations[0].label, "f * f = id");
    }

    #[test]
    fn builtins_roundtrip_through_source() {
        use crate::presentation::{builtin, Builtin};
        let params = BTreeMap::from([("delta".to_string(), 1.0)]);
        for b in Builtin::ALL {
            let p = builtin(b, &params).unwrap();
            let back = parse_presentation(&p.to_source()).unwrap();
            assert_eq!(back, p, "{}", p.to_source());
        }
    }

    /// Well-typed expression on `k` blocks over generators `a: 1->1`, `b: 2->2` (invertible), scalar `c`.
    fn expr_strategy(k: usize, depth: u32) -> BoxedStrategy<RelExpr> {
        let mut leaves: Vec<BoxedStrategy<RelExpr>> = vec![Just(RelExpr::Identity(k)).boxed()];
        if k == 1 {
            leaves.push(Just(RelExpr::gen("a")).boxed());
        }
        if k == 2 {
            leaves.push(Just(RelExpr::gen("b")).boxed());
            leaves.push(Just(RelExpr::inv("b")).boxed());
        }
        if k >= 2 {
            leaves.push((1..k).prop_map(move |i| RelExpr::place("b", i, k)).boxed());
        }
        let leaf = proptest::strategy::Union::new(leaves).boxed();
        if depth == 0 {
            return leaf;
        }
        let sub = move || expr_strategy(k, depth - 1);
        let mut branches: Vec<BoxedStrategy<RelExpr>> = vec![
            leaf,
            (sub(), sub()).prop_map(|(a, b)| a.after(b)).boxed(),
            (sub(), sub()).prop_map(|(a, b)| a.plus(b)).boxed(),
            (sub(), -4.0f64..4.0).prop_map(|(a, v)| a.scaled(Coef::Value(v))).boxed(),
            sub().prop_map(|a| a.scaled(Coef::Symbol("c".into()))).boxed(),
        ];
        if k >= 2 {
            branches.push(
                (1..k)
                    .prop_flat_map(move |j| (expr_strategy(j, depth - 1), expr_strategy(k - j, depth - 1)))
                    .prop_map(|(a, b)| a.times(b))
                    .boxed(),
            );
        }
        proptest::strategy::Union::new(branches).boxed()
    }

    fn relation_strategy() -> impl Strategy<Value = Presentation> {
        (1usize..4)
            .prop_flat_map(|k| (expr_strategy(k, 3), expr_strategy(k, 3)))
            .prop_map(|(lhs, rhs)| Presentation {
                name: "random".into(),
                kind: StructureKind::Algebra,
                monoidal: Monoidal::Cartesian,
                generators: vec![GeneratorDecl::new("a", 1, 1), GeneratorDecl::new("b", 2, 2).invertible_as("binv")],
                relations: vec![RelationEq::new("r", lhs, rhs)],
                scalars: BTreeMap::from([("c".to_string(), 0.25)]),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn source_roundtrip(p in relation_strategy()) {
            prop_assert!(p.validate().is_ok());
            let back = parse_presentation(&p.to_source()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
