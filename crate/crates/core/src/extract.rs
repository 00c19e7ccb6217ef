//! Linear and affine networks collapsed to explicit matrices, and exact
//! matrix-level relation checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::netcore::{GeneratorNet, Regime, Tensor2};
use crate::presentation::{Coef, Monoidal, Presentation, RelExpr, RelationEq};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("network `{0}` is nonlinear and has no matrix form")]
    Nonlinear(String),
    #[error("no matrix for generator `{0}`")]
    Missing(String),
    #[error("matrix for `{0}` is singular, cannot form its inverse")]
    Singular(String),
    #[error("`{name}` is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    Shape { name: String, rows: usize, cols: usize, want_rows: usize, want_cols: usize },
    #[error("affine offset on `{0}` has no meaning under the tensor product")]
    AffineTensor(String),
    #[error("{0}")]
    Arity(String),
    #[error("unbound scalar `{0}`")]
    UnboundScalar(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// `x ↦ M x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap<T> {
    pub matrix: Tensor2<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn linear(matrix: Tensor2<T>) -> Self {
        let offset = vec![T::zero(); matrix.rows()];
        Self { matrix, offset }
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(Tensor2::identity(n))
    }

    pub fn is_linear(&self) -> bool {
        self.offset.iter().all(|v| *v == T::zero())
    }

    /// `self ∘ inner`
    pub fn compose(&self, inner: &Self) -> Self {
        let mut offset = self.offset.clone();
        for (r, o) in offset.iter_mut().enumerate() {
            *o += self.matrix.row(r).iter().zip(&inner.offset).map(|(&a, &b)| a * b).sum::<T>();
        }
        Self { matrix: self.matrix.matmul(&inner.matrix), offset }
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = self.matrix.inverse()?;
        let c = Tensor2::from_vec(self.offset.len(), 1, self.offset.clone());
        let offset = inv.matmul(&c).scale(-T::one()).into_data();
        Some(Self { matrix: inv, offset })
    }

    /// Applies the map to each row of `x`.
    pub fn apply(&self, x: &Tensor2<T>) -> Tensor2<T> {
        let mut y = x.matmul_nt(&self.matrix);
        for r in 0..y.rows() {
            for (c, &o) in self.offset.iter().enumerate() {
                y.set(r, c, y.get(r, c) + o);
            }
        }
        y
    }

    /// `sqrt(‖ΔM‖_F² + ‖Δc‖²)`; the plain Frobenius distance for linear maps.
    pub fn distance(&self, other: &Self) -> T {
        let dm = self.matrix.sub(&other.matrix).sum_squares();
        let dc: T = self.offset.iter().zip(&other.offset).map(|(&a, &b)| (a - b) * (a - b)).sum();
        (dm + dc).sqrt()
    }
}

/// Collapses a linear or affine network: `M = W_L ⋯ W_1`, with each bias
/// pushed through the later layers.
pub fn collapse<T: Scalar>(net: &GeneratorNet<T>) -> Result<AffineMap<T>, ExtractError> {
    if net.regime() == Regime::Nonlinear {
        return Err(ExtractError::Nonlinear(net.name().to_string()));
    }
    let mut acc = AffineMap::identity(net.in_width());
    for p in net.params() {
        let offset = match &p.bias {
            Some(b) => b.data().to_vec(),
            None => vec![T::zero(); p.weight.rows()],
        };
        acc = AffineMap { matrix: p.weight.clone(), offset }.compose(&acc);
    }
    Ok(acc)
}

/// Matrices for the generators of a presentation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRep<T> {
    pub block_dim: usize,
    pub maps: BTreeMap<String, AffineMap<T>>,
}

impl<T: Scalar> LinearRep<T> {
    pub fn new(block_dim: usize) -> Self {
        Self { block_dim, maps: BTreeMap::new() }
    }

    pub fn from_nets(block_dim: usize, nets: &[GeneratorNet<T>]) -> Result<Self, ExtractError> {
        let mut rep = Self::new(block_dim);
        for n in nets {
            rep.maps.insert(n.name().to_string(), collapse(n)?);
        }
        Ok(rep)
    }

    pub fn insert(&mut self, name: impl Into<String>, map: AffineMap<T>) {
        self.maps.insert(name.into(), map);
    }

    /// The map of `name`, falling back to the inverse of its partner when
    /// `name` is a declared inverse that has no matrix of its own.
    fn resolve(&self, pres: &Presentation, name: &str) -> Result<AffineMap<T>, ExtractError> {
        if let Some(m) = self.maps.get(name) {
            return Ok(m.clone());
        }
        match pres.inverse_of(name) {
            Some(g) => {
                let base = self.maps.get(&g.name).ok_or_else(|| ExtractError::Missing(g.name.clone()))?;
                base.inverse().ok_or_else(|| ExtractError::Singular(g.name.clone()))
            }
            None => Err(ExtractError::Missing(name.to_string())),
        }
    }

    /// Checks each available map against its declared arity.
    pub fn check_shapes(&self, pres: &Presentation) -> Result<(), ExtractError> {
        for (name, arity) in pres.network_names() {
            if let Some(m) = self.maps.get(&name) {
                let want_rows = pres.monoidal.width(arity.outputs, self.block_dim);
                let want_cols = pres.monoidal.width(arity.inputs, self.block_dim);
                if m.matrix.shape() != (want_rows, want_cols) || m.offset.len() != want_rows {
                    return Err(ExtractError::Shape {
                        name,
                        rows: m.matrix.rows(),
                        cols: m.matrix.cols(),
                        want_rows,
                        want_cols,
                    });
                }
                if pres.monoidal == Monoidal::Tensor && !m.is_linear() {
                    return Err(ExtractError::AffineTensor(name));
                }
            }
        }
        Ok(())
    }

    /// The map denoted by an expression.
    pub fn expr_map(&self, pres: &Presentation, e: &RelExpr) -> Result<AffineMap<T>, ExtractError> {
        Ok(match e {
            RelExpr::Gen(name) => self.resolve(pres, name)?,
            RelExpr::InvGen(name) => {
                let g = pres.generator(name).ok_or_else(|| ExtractError::Missing(name.clone()))?;
                match &g.inverse {
                    Some(inv) => self.resolve(pres, inv)?,
                    None => return Err(ExtractError::Arity(format!("generator {name} is not invertible"))),
                }
            }
            RelExpr::Identity(k) => AffineMap::identity(pres.monoidal.width(*k, self.block_dim)),
            RelExpr::Compose(a, b) => {
                pres.arity_of(e).map_err(ExtractError::Arity)?;
                self.expr_map(pres, a)?.compose(&self.expr_map(pres, b)?)
            }
            RelExpr::Product(a, b) => {
                let (ma, mb) = (self.expr_map(pres, a)?, self.expr_map(pres, b)?);
                match pres.monoidal {
                    Monoidal::Cartesian => AffineMap {
                        matrix: ma.matrix.direct_sum(&mb.matrix),
                        offset: ma.offset.iter().chain(&mb.offset).copied().collect(),
                    },
                    Monoidal::Tensor => AffineMap::linear(ma.matrix.kron(&mb.matrix)),
                }
            }
            RelExpr::Scale(c, inner) => {
                let v = pres.coef_value(c).ok_or_else(|| match c {
                    Coef::Symbol(s) => ExtractError::UnboundScalar(s.clone()),
                    Coef::Value(_) => unreachable!("literal coefficients are always bound"),
                })?;
                let m = self.expr_map(pres, inner)?;
                AffineMap { matrix: m.matrix.scale(T::of(v)), offset: m.offset.iter().map(|&o| o * T::of(v)).collect() }
            }
            RelExpr::Sum(a, b) => {
                pres.arity_of(e).map_err(ExtractError::Arity)?;
                let (ma, mb) = (self.expr_map(pres, a)?, self.expr_map(pres, b)?);
                AffineMap {
                    matrix: ma.matrix.add(&mb.matrix),
                    offset: ma.offset.iter().zip(&mb.offset).map(|(&x, &y)| x + y).collect(),
                }
            }
            RelExpr::Place { name, i, m } => {
                pres.arity_of(e).map_err(ExtractError::Arity)?;
                self.expr_map(pres, &RelExpr::desugar_place(name, *i, *m))?
            }
        })
    }

    /// Both sides of a relation as maps.
    pub fn relation_maps(&self, pres: &Presentation, rel: &RelationEq) -> Result<(AffineMap<T>, AffineMap<T>), ExtractError> {
        pres.relation_arity(rel).map_err(|e| ExtractError::Arity(e.to_string()))?;
        Ok((self.expr_map(pres, &rel.lhs)?, self.expr_map(pres, &rel.rhs)?))
    }
}

/// Exact residual `‖lhs − rhs‖_F` for every relation, in order.
pub fn verify_matrix_relations<T: Scalar>(
    rep: &LinearRep<T>,
    pres: &Presentation,
) -> Result<Vec<(String, T)>, ExtractError> {
    rep.check_shapes(pres)?;
    pres.relations
        .iter()
        .map(|rel| {
            let (l, r) = rep.relation_maps(pres, rel)?;
            Ok((rel.label.clone(), l.distance(&r)))
        })
        .collect()
}

/// Sampled residual `mean ‖(lhs − rhs) x‖²` computed through matrices.
pub fn sampled_matrix_residual<T: Scalar>(lhs: &AffineMap<T>, rhs: &AffineMap<T>, points: &Tensor2<T>) -> T {
    let d = lhs.apply(points).sub(&rhs.apply(points));
    d.sum_squares() / T::of(points.rows() as f64)
}

/// Degeneracy checks for every square map: distance to the identity and
/// distance of its square to the identity.
pub fn degeneracy_probes<T: Scalar>(rep: &LinearRep<T>) -> Vec<(String, T)> {
    let mut out = Vec::new();
    for (name, m) in &rep.maps {
        let (r, c) = m.matrix.shape();
        if r != c {
            continue;
        }
        let id = AffineMap::identity(r);
        out.push((format!("{name} = id"), m.distance(&id)));
        out.push((format!("{name}∘{name} = id"), m.compose(m).distance(&id)));
    }
    out
}

/// Text form: an optional `block_dim <n>` line, then for each map a
/// `matrix <name> <rows> <cols>` header followed by its rows, and optionally
/// `offset <name>` followed by one line of values. `#` starts a comment.
pub fn write_matrices<T: Scalar>(rep: &LinearRep<T>) -> String {
    let mut s = format!("block_dim {}\n", rep.block_dim);
    let line = |vals: &[T]| vals.iter().map(|v| format!("{:.16e}", v.as_f64())).collect::<Vec<_>>().join(" ");
    for (name, m) in &rep.maps {
        let _ = writeln!(s, "matrix {name} {} {}", m.matrix.rows(), m.matrix.cols());
        for r in 0..m.matrix.rows() {
            let _ = writeln!(s, "{}", line(m.matrix.row(r)));
        }
        if !m.is_linear() {
            let _ = writeln!(s, "offset {name}\n{}", line(&m.offset));
        }
    }
    s
}

fn parse_row<T: Scalar>(text: &str, line: usize, want: usize) -> Result<Vec<T>, ExtractError> {
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map(T::of).map_err(|_| ExtractError::Format { line, msg: format!("bad number `{t}`") }))
        .collect::<Result<Vec<T>, _>>()?;
    if vals.len() != want {
        return Err(ExtractError::Format { line, msg: format!("expected {want} values, found {}", vals.len()) });
    }
    Ok(vals)
}

/// Parses the text form. Without a `block_dim` line, `default_block_dim` is used.
pub fn read_matrices<T: Scalar>(text: &str, default_block_dim: Option<usize>) -> Result<LinearRep<T>, ExtractError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut block_dim = None;
    let mut maps: BTreeMap<String, AffineMap<T>> = BTreeMap::new();
    while let Some((no, l)) = lines.next() {
        let words: Vec<&str> = l.split_whitespace().collect();
        let bad = |msg: &str| ExtractError::Format { line: no, msg: msg.to_string() };
        match words.as_slice() {
            ["block_dim", n] => block_dim = Some(n.parse::<usize>().map_err(|_| bad("bad block_dim"))?),
            ["matrix", name, r, c] => {
                let rows: usize = r.parse().map_err(|_| bad("bad row count"))?;
                let cols: usize = c.parse().map_err(|_| bad("bad column count"))?;
                if rows == 0 || cols == 0 {
                    return Err(bad("matrix dimensions must be positive"));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rno, rl) = lines.next().ok_or_else(|| bad("matrix ends early"))?;
                    data.extend(parse_row::<T>(rl, rno, cols)?);
                }
                if maps.insert(name.to_string(), AffineMap::linear(Tensor2::from_vec(rows, cols, data))).is_some() {
                    return Err(bad(&format!("duplicate matrix `{name}`")));
                }
            }
            ["offset", name] => {
                let m = maps.get_mut(*name).ok_or_else(|| bad(&format!("offset for unknown matrix `{name}`")))?;
                let (rno, rl) = lines.next().ok_or_else(|| bad("offset line missing"))?;
                m.offset = parse_row(rl, rno, m.matrix.rows())?;
            }
            _ => return Err(bad(&format!("unrecognized line `{l}`"))),
        }
    }
    let block_dim = block_dim.or(default_block_dim).ok_or(ExtractError::Format { line: 0, msg: "no block_dim given".into() })?;
    Ok(LinearRep { block_dim, maps })
}

pub fn load_matrices<T: Scalar>(path: &Path, default_block_dim: Option<usize>) -> Result<LinearRep<T>, ExtractError> {
    read_matrices(&std::fs::read_to_string(path)?, default_block_dim)
}
