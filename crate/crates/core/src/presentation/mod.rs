//! Finite presentations: generators, relations between maps built from them,
//! and the built-in systems.

mod builtin;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

pub use builtin::{builtin, rt_labels, Builtin};
pub use parse::parse_presentation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresentationError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}, column {col}: undeclared symbol {name}")]
    UndeclaredSymbol { line: usize, col: usize, name: String },
    #[error("relation `{label}`: {msg}")]
    ArityMismatch { label: String, msg: String },
    #[error("invalid presentation: {0}")]
    Invalid(String),
    #[error("unknown builtin `{0}` (expected braid, temperley_lieb, yang_baxter or rt_system)")]
    UnknownBuiltin(String),
    #[error("builtin `{builtin}` requires scalar `{name}`")]
    MissingScalar { builtin: String, name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Group,
    Algebra,
    Lie,
    Custom,
}

impl StructureKind {
    pub fn keyword(self) -> &'static str {
        match self {
            StructureKind::Group => "group",
            StructureKind::Algebra => "algebra",
            StructureKind::Lie => "lie",
            StructureKind::Custom => "custom",
        }
    }
}

/// How maps on several blocks are juxtaposed.
///
/// `Cartesian`: a width-`k·n` vector is `k` concatenated blocks and the block
/// product acts on disjoint coordinate ranges. `Tensor`: a `k`-block space is
/// `V^{⊗k}` of width `n^k` (zero blocks is the scalar field, width 1) and the
/// block product of linear maps is the Kronecker product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monoidal {
    #[default]
    Cartesian,
    Tensor,
}

impl Monoidal {
    /// Vector width of `blocks` copies of a `block_dim`-dimensional space.
    pub fn width(self, blocks: usize, block_dim: usize) -> usize {
        match self {
            Monoidal::Cartesian => blocks * block_dim,
            Monoidal::Tensor => block_dim.pow(blocks as u32),
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Monoidal::Cartesian => "cartesian",
            Monoidal::Tensor => "tensor",
        }
    }
}

/// Input and output block counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arity {
    pub inputs: usize,
    pub outputs: usize,
}

impl Arity {
    pub const fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.inputs, self.outputs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDecl {
    pub name: String,
    pub arity: Arity,
    /// Name of the paired inverse network, present iff the generator is invertible.
    pub inverse: Option<String>,
}

impl GeneratorDecl {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self { name: name.into(), arity: Arity::new(inputs, outputs), inverse: None }
    }

    pub fn invertible_as(mut self, inverse: impl Into<String>) -> Self {
        self.inverse = Some(inverse.into());
        self
    }

    pub fn invertible(&self) -> bool {
        self.inverse.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coef {
    Value(f64),
    Symbol(String),
}

/// Expression over generator maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RelExpr {
    Gen(String),
    /// The paired inverse network of an invertible generator.
    InvGen(String),
    /// Identity on `k` blocks.
    Identity(usize),
    /// `Compose(a, b)` applies `b` first, then `a`.
    Compose(Box<RelExpr>, Box<RelExpr>),
    /// Block-parallel juxtaposition, left operand on the leading blocks.
    Product(Box<RelExpr>, Box<RelExpr>),
    Scale(Coef, Box<RelExpr>),
    Sum(Box<RelExpr>, Box<RelExpr>),
    /// A 2→2 generator on strands `i, i+1` (1-based) of `m`, identity elsewhere.
    Place { name: String, i: usize, m: usize },
}

impl RelExpr {
    pub fn gen(name: &str) -> Self {
        RelExpr::Gen(name.to_string())
    }

    pub fn inv(name: &str) -> Self {
        RelExpr::InvGen(name.to_string())
    }

    pub fn id(k: usize) -> Self {
        RelExpr::Identity(k)
    }

    pub fn place(name: &str, i: usize, m: usize) -> Self {
        RelExpr::Place { name: name.to_string(), i, m }
    }

    /// `self ∘ other`: `other` is applied first.
    pub fn after(self, other: RelExpr) -> Self {
        RelExpr::Compose(Box::new(self), Box::new(other))
    }

    pub fn times(self, right: RelExpr) -> Self {
        RelExpr::Product(Box::new(self), Box::new(right))
    }

    pub fn plus(self, other: RelExpr) -> Self {
        RelExpr::Sum(Box::new(self), Box::new(other))
    }

    pub fn scaled(self, c: Coef) -> Self {
        RelExpr::Scale(c, Box::new(self))
    }

    /// Composition of a list, first element applied last (`a * b * c`).
    pub fn compose_all(mut items: Vec<RelExpr>) -> Self {
        assert!(!items.is_empty(), "empty composition");
        let mut acc = items.remove(0);
        for e in items {
            acc = acc.after(e);
        }
        acc
    }

    /// Block product of a list, left to right.
    pub fn product_all(mut items: Vec<RelExpr>) -> Self {
        assert!(!items.is_empty(), "empty product");
        let mut acc = items.remove(0);
        for e in items {
            acc = acc.times(e);
        }
        acc
    }

    /// `Place(g, i, m)` as an explicit product, omitting empty identity factors.
    pub fn desugar_place(name: &str, i: usize, m: usize) -> Self {
        let mut parts = Vec::new();
        if i > 1 {
            parts.push(RelExpr::Identity(i - 1));
        }
        parts.push(RelExpr::gen(name));
        if m > i + 1 {
            parts.push(RelExpr::Identity(m - i - 1));
        }
        RelExpr::product_all(parts)
    }

    /// Pre-order visit of every node.
    pub fn visit_symbols(&self, f: &mut impl FnMut(&RelExpr)) {
        f(self);
        match self {
            RelExpr::Compose(a, b) | RelExpr::Product(a, b) | RelExpr::Sum(a, b) => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
            RelExpr::Scale(_, e) => e.visit_symbols(f),
            RelExpr::Gen(_) | RelExpr::InvGen(_) | RelExpr::Identity(_) | RelExpr::Place { .. } => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationEq {
    pub label: String,
    pub lhs: RelExpr,
    pub rhs: RelExpr,
}

impl RelationEq {
    pub fn new(label: impl Into<String>, lhs: RelExpr, rhs: RelExpr) -> Self {
        Self { label: label.into(), lhs, rhs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    pub name: String,
    pub kind: StructureKind,
    pub monoidal: Monoidal,
    pub generators: Vec<GeneratorDecl>,
    pub relations: Vec<RelationEq>,
    pub scalars: BTreeMap<String, f64>,
}

const RESERVED: &[&str] = &["x", "id", "inv", "place"];

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Presentation {
    pub fn generator(&self, name: &str) -> Option<&GeneratorDecl> {
        self.generators.iter().find(|g| g.name == name)
    }

    /// The generator whose paired inverse is called `name`.
    pub fn inverse_of(&self, name: &str) -> Option<&GeneratorDecl> {
        self.generators.iter().find(|g| g.inverse.as_deref() == Some(name))
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    /// Every network the presentation needs: generators, then paired inverses.
    pub fn network_names(&self) -> Vec<(String, Arity)> {
        let mut out: Vec<(String, Arity)> = self.generators.iter().map(|g| (g.name.clone(), g.arity)).collect();
        for g in &self.generators {
            if let Some(inv) = &g.inverse {
                out.push((inv.clone(), Arity::new(g.arity.outputs, g.arity.inputs)));
            }
        }
        out
    }

    pub fn coef_value(&self, c: &Coef) -> Option<f64> {
        match c {
            Coef::Value(v) => Some(*v),
            Coef::Symbol(s) => self.scalar(s),
        }
    }

    /// Block arity of an expression, checking every composition constraint.
    pub fn arity_of(&self, e: &RelExpr) -> Result<Arity, String> {
        match e {
            RelExpr::Gen(name) => match (self.generator(name), self.inverse_of(name)) {
                (Some(g), _) => Ok(g.arity),
                (None, Some(g)) => Ok(Arity::new(g.arity.outputs, g.arity.inputs)),
                (None, None) => Err(format!("undeclared symbol {name}")),
            },
            RelExpr::InvGen(name) => {
                let g = self.generator(name).ok_or_else(|| format!("undeclared symbol {name}"))?;
                if !g.invertible() {
                    return Err(format!("generator {name} is not invertible"));
                }
                Ok(Arity::new(g.arity.outputs, g.arity.inputs))
            }
            RelExpr::Identity(k) => Ok(Arity::new(*k, *k)),
            RelExpr::Compose(a, b) => {
                let (aa, ba) = (self.arity_of(a)?, self.arity_of(b)?);
                if ba.outputs != aa.inputs {
                    return Err(format!(
                        "composition needs {} output blocks to feed {} input blocks",
                        ba.outputs, aa.inputs
                    ));
                }
                Ok(Arity::new(ba.inputs, aa.outputs))
            }
            RelExpr::Product(a, b) => {
                let (aa, ba) = (self.arity_of(a)?, self.arity_of(b)?);
                Ok(Arity::new(aa.inputs + ba.inputs, aa.outputs + ba.outputs))
            }
            RelExpr::Sum(a, b) => {
                let (aa, ba) = (self.arity_of(a)?, self.arity_of(b)?);
                if aa != ba {
                    return Err(format!("sum of maps with arities {aa} and {ba}"));
                }
                Ok(aa)
            }
            RelExpr::Scale(c, e) => {
                if let Coef::Symbol(s) = c {
                    if self.scalar(s).is_none() {
                        return Err(format!("undeclared symbol {s}"));
                    }
                }
                self.arity_of(e)
            }
            RelExpr::Place { name, i, m } => {
                let g = self.generator(name).ok_or_else(|| format!("undeclared symbol {name}"))?;
                if g.arity != Arity::new(2, 2) {
                    return Err(format!("place({name}, ..) needs a 2->2 generator, {name} is {}", g.arity));
                }
                if *i < 1 || i + 1 > *m {
                    return Err(format!("place({name}, {i}, {m}) needs 1 <= i <= m-1"));
                }
                Ok(Arity::new(*m, *m))
            }
        }
    }

    /// Arity shared by both sides of a relation.
    pub fn relation_arity(&self, rel: &RelationEq) -> Result<Arity, PresentationError> {
        let err = |msg: String| PresentationError::ArityMismatch { label: rel.label.clone(), msg };
        let l = self.arity_of(&rel.lhs).map_err(err)?;
        let r = self.arity_of(&rel.rhs).map_err(err)?;
        if l != r {
            return Err(err(format!("left side is {l} but right side is {r}")));
        }
        Ok(l)
    }

    /// Checks every structural invariant. Parsed and built-in presentations
    /// both go through here.
    pub fn validate(&self) -> Result<(), PresentationError> {
        let invalid = |m: String| Err(PresentationError::Invalid(m));
        if !is_identifier(&self.name) {
            return invalid(format!("presentation name `{}` is not an identifier", self.name));
        }
        let mut names = BTreeSet::new();
        for g in &self.generators {
            for n in std::iter::once(&g.name).chain(g.inverse.iter()) {
                if !is_identifier(n) || RESERVED.contains(&n.as_str()) {
                    return invalid(format!("`{n}` cannot be used as a generator name"));
                }
                if !names.insert(n.clone()) || self.scalars.contains_key(n) {
                    return invalid(format!("symbol `{n}` declared twice"));
                }
            }
            if g.arity.inputs == 0 && g.arity.outputs == 0 {
                return invalid(format!("generator {} has arity 0->0", g.name));
            }
            if self.monoidal == Monoidal::Cartesian && (g.arity.inputs == 0 || g.arity.outputs == 0) {
                return invalid(format!(
                    "generator {} has zero blocks on one side, which needs `monoidal tensor`",
                    g.name
                ));
            }
        }
        for (name, v) in &self.scalars {
            if !is_identifier(name) || RESERVED.contains(&name.as_str()) {
                return invalid(format!("`{name}` cannot be used as a scalar name"));
            }
            if !v.is_finite() {
                return invalid(format!("scalar {name} is not finite"));
            }
        }
        if self.kind != StructureKind::Custom && self.relations.is_empty() {
            return invalid(format!("a {} presentation needs at least one relation", self.kind.keyword()));
        }
        let mut labels = BTreeSet::new();
        for rel in &self.relations {
            if rel.label.trim().is_empty() || rel.label.contains([':', '\n']) {
                return invalid(format!("relation label `{}` must be non-empty without `:` or newlines", rel.label));
            }
            if !labels.insert(rel.label.as_str()) {
                return invalid(format!("relation label `{}` used twice", rel.label));
            }
            self.relation_arity(rel)?;
        }
        Ok(())
    }

    /// Renders the presentation in the text grammar accepted by
    /// [`parse_presentation`].
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "structure {}", self.kind.keyword());
        if self.monoidal != Monoidal::Cartesian {
            let _ = writeln!(out, "monoidal {}", self.monoidal.keyword());
        }
        for (name, v) in &self.scalars {
            let _ = writeln!(out, "scalar {name} = {v:?}");
        }
        for g in &self.generators {
            let _ = write!(out, "generator {} arity {}", g.name, g.arity);
            if let Some(inv) = &g.inverse {
                let _ = write!(out, " invertible {inv}");
            }
            out.push('\n');
        }
        for r in &self.relations {
            let _ = writeln!(out, "relation {}: {} = {}", r.label, render(&r.lhs, 0), render(&r.rhs, 0));
        }
        out
    }
}

/// Binding strength: 0 compose, 1 product, 2 sum, 3 scale, 4 primary.
fn precedence(e: &RelExpr) -> u8 {
    match e {
        RelExpr::Compose(..) => 0,
        RelExpr::Product(..) => 1,
        RelExpr::Sum(..) => 2,
        RelExpr::Scale(..) => 3,
        _ => 4,
    }
}

fn render(e: &RelExpr, min: u8) -> String {
    let body = match e {
        RelExpr::Gen(n) => n.clone(),
        RelExpr::InvGen(n) => format!("inv({n})"),
        RelExpr::Identity(1) => "id".to_string(),
        RelExpr::Identity(k) => format!("id^{k}"),
        RelExpr::Place { name, i, m } => format!("place({name}, {i}, {m})"),
        RelExpr::Compose(a, b) => format!("{} * {}", render(a, 0), render(b, 1)),
        RelExpr::Product(a, b) => format!("{} x {}", render(a, 1), render(b, 2)),
        RelExpr::Sum(a, b) => format!("{} + {}", render(a, 2), render(b, 3)),
        RelExpr::Scale(c, e) => {
            let c = match c {
                Coef::Value(v) => format!("{v:?}"),
                Coef::Symbol(s) => s.clone(),
            };
            format!("{c} {}", render(e, 3))
        }
    };
    if precedence(e) < min {
        format!("({body})")
    } else {
        body
    }
}

impl fmt::Display for RelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self, 0))
    }
}
