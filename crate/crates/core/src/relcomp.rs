//! Compiles relation expressions into maps over generator networks and
//! assembles the relation loss.
//!
//! A relation `lhs = rhs` on `k` input blocks becomes the residual
//! `mean_x ‖lhs(x) − rhs(x)‖²` over points `x` drawn uniformly from a box.
//! The total loss is the weighted sum of residuals over relations.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rayon::prelude::*;

use crate::netcore::{default_architecture, BoundNet, GeneratorNet, GradTape, Gradients, NetError, Regime, Tensor2, Var};
use crate::presentation::{Arity, Coef, Monoidal, Presentation, PresentationError, RelExpr, RelationEq};
use crate::rng;
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum CompileError {
    #[error("no network named `{0}`")]
    MissingNet(String),
    #[error("network `{net}` maps width {got_in}->{got_out}, the presentation needs {want_in}->{want_out}")]
    ArityMismatch { net: String, want_in: usize, want_out: usize, got_in: usize, got_out: usize },
    #[error("network `{net}` has block_dim {got}, expected {want}")]
    BlockDim { net: String, want: usize, got: usize },
    #[error("unbound scalar `{0}`")]
    UnboundScalar(String),
    #[error("point width {got} does not match relation input width {want}")]
    WidthMismatch { want: usize, got: usize },
    #[error(transparent)]
    Presentation(#[from] PresentationError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// The networks realizing a presentation, in a fixed slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSet<T> {
    monoidal: Monoidal,
    block_dim: usize,
    nets: Vec<GeneratorNet<T>>,
}

impl<T: Scalar> NetSet<T> {
    pub fn new(monoidal: Monoidal, block_dim: usize, nets: Vec<GeneratorNet<T>>) -> Self {
        Self { monoidal, block_dim, nets }
    }

    /// Fresh networks with the default architecture for every generator and
    /// paired inverse. Each network's initialization stream is derived from
    /// `seed` and the network name.
    pub fn init(pres: &Presentation, block_dim: usize, regime: Regime, seed: u64) -> Result<Self, CompileError> {
        let nets = pres
            .network_names()
            .into_iter()
            .map(|(name, arity)| {
                let w_in = pres.monoidal.width(arity.inputs, block_dim);
                let w_out = pres.monoidal.width(arity.outputs, block_dim);
                let seed = rng::derive_seed(seed, &format!("init/{name}"));
                GeneratorNet::new(
                    name,
                    block_dim,
                    arity.inputs,
                    arity.outputs,
                    &default_architecture(w_in, w_out),
                    regime,
                    seed,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(pres.monoidal, block_dim, nets))
    }

    pub fn monoidal(&self) -> Monoidal {
        self.monoidal
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn nets(&self) -> &[GeneratorNet<T>] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [GeneratorNet<T>] {
        &mut self.nets
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.nets.iter().position(|n| n.name() == name)
    }

    pub fn get(&self, name: &str) -> Option<&GeneratorNet<T>> {
        self.nets.iter().find(|n| n.name() == name)
    }

    pub fn width(&self, blocks: usize) -> usize {
        self.monoidal.width(blocks, self.block_dim)
    }

    pub fn bind(&self, tape: &mut GradTape<T>) -> Vec<BoundNet> {
        self.nets.iter().enumerate().map(|(slot, n)| n.bind(tape, slot)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(GeneratorNet::param_count).sum()
    }

    /// Checks that every network the presentation needs exists with the
    /// right widths.
    pub fn check_against(&self, pres: &Presentation) -> Result<(), CompileError> {
        for (name, arity) in pres.network_names() {
            let net = self.get(&name).ok_or_else(|| CompileError::MissingNet(name.clone()))?;
            if net.block_dim() != self.block_dim {
                return Err(CompileError::BlockDim { net: name, want: self.block_dim, got: net.block_dim() });
            }
            let (want_in, want_out) = (self.width(arity.inputs), self.width(arity.outputs));
            if net.in_width() != want_in || net.out_width() != want_out {
                return Err(CompileError::ArityMismatch {
                    net: name,
                    want_in,
                    want_out,
                    got_in: net.in_width(),
                    got_out: net.out_width(),
                });
            }
        }
        Ok(())
    }
}

/// Expression with net slots resolved, scalars bound and placements expanded.
#[derive(Clone, Debug, PartialEq)]
enum Plan {
    Net(usize),
    Identity,
    /// `outer ∘ inner`
    Compose(Box<Plan>, Box<Plan>),
    Product { left: Box<Plan>, right: Box<Plan>, left_in: usize, left_out: usize, right_in: usize, right_out: usize },
    Scale(f64, Box<Plan>),
    Sum(Box<Plan>, Box<Plan>),
}

impl Plan {
    fn is_identity(&self) -> bool {
        matches!(self, Plan::Identity)
    }
}

struct Planner<'a, T> {
    pres: &'a Presentation,
    nets: &'a NetSet<T>,
}

impl<T: Scalar> Planner<'_, T> {
    fn net_slot(&self, name: &str) -> Result<usize, CompileError> {
        self.nets.slot(name).ok_or_else(|| CompileError::MissingNet(name.to_string()))
    }

    fn arity(&self, e: &RelExpr) -> Result<Arity, CompileError> {
        self.pres
            .arity_of(e)
            .map_err(|msg| CompileError::Presentation(PresentationError::ArityMismatch { label: e.to_string(), msg }))
    }

    fn plan(&self, e: &RelExpr) -> Result<Plan, CompileError> {
        Ok(match e {
            RelExpr::Gen(name) => Plan::Net(self.net_slot(name)?),
            RelExpr::InvGen(name) => {
                let g = self.pres.generator(name).ok_or_else(|| CompileError::MissingNet(name.clone()))?;
                let inv = g.inverse.as_deref().ok_or_else(|| {
                    CompileError::Presentation(PresentationError::Invalid(format!("generator {name} is not invertible")))
                })?;
                Plan::Net(self.net_slot(inv)?)
            }
            RelExpr::Identity(_) => Plan::Identity,
            RelExpr::Compose(a, b) => {
                self.arity(e)?;
                let (pa, pb) = (self.plan(a)?, self.plan(b)?);
                match (pa.is_identity(), pb.is_identity()) {
                    (true, _) => pb,
                    (_, true) => pa,
                    _ => Plan::Compose(Box::new(pa), Box::new(pb)),
                }
            }
            RelExpr::Product(a, b) => {
                let (aa, ba) = (self.arity(a)?, self.arity(b)?);
                let (pa, pb) = (self.plan(a)?, self.plan(b)?);
                if pa.is_identity() && pb.is_identity() {
                    Plan::Identity
                } else {
                    Plan::Product {
                        left: Box::new(pa),
                        right: Box::new(pb),
                        left_in: self.nets.width(aa.inputs),
                        left_out: self.nets.width(aa.outputs),
                        right_in: self.nets.width(ba.inputs),
                        right_out: self.nets.width(ba.outputs),
                    }
                }
            }
            RelExpr::Scale(c, inner) => {
                let v = self.pres.coef_value(c).ok_or_else(|| match c {
                    Coef::Symbol(s) => CompileError::UnboundScalar(s.clone()),
                    Coef::Value(_) => unreachable!("literal coefficients are always bound"),
                })?;
                Plan::Scale(v, Box::new(self.plan(inner)?))
            }
            RelExpr::Sum(a, b) => {
                self.arity(e)?;
                Plan::Sum(Box::new(self.plan(a)?), Box::new(self.plan(b)?))
            }
            RelExpr::Place { name, i, m } => {
                self.arity(e)?;
                self.plan(&RelExpr::desugar_place(name, *i, *m))?
            }
        })
    }
}

/// A relation expression compiled against a set of networks.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledMap {
    plan: Plan,
    pub arity: Arity,
    pub in_width: usize,
    pub out_width: usize,
}

/// One relation ready for residual evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledRelation {
    pub label: String,
    pub lhs: CompiledMap,
    pub rhs: CompiledMap,
    pub in_blocks: usize,
}

impl CompiledRelation {
    pub fn in_width(&self) -> usize {
        self.lhs.in_width
    }
}

/// Compiles a single expression.
pub fn compile_expr<T: Scalar>(pres: &Presentation, nets: &NetSet<T>, e: &RelExpr) -> Result<CompiledMap, CompileError> {
    let planner = Planner { pres, nets };
    let arity = planner.arity(e)?;
    Ok(CompiledMap {
        plan: planner.plan(e)?,
        arity,
        in_width: nets.width(arity.inputs),
        out_width: nets.width(arity.outputs),
    })
}

pub fn compile_relation<T: Scalar>(
    pres: &Presentation,
    nets: &NetSet<T>,
    rel: &RelationEq,
) -> Result<CompiledRelation, CompileError> {
    let arity = pres.relation_arity(rel)?;
    Ok(CompiledRelation {
        label: rel.label.clone(),
        lhs: compile_expr(pres, nets, &rel.lhs)?,
        rhs: compile_expr(pres, nets, &rel.rhs)?,
        in_blocks: arity.inputs,
    })
}

/// One compiled relation per relation of `pres`, in order.
pub fn compile<T: Scalar>(pres: &Presentation, nets: &NetSet<T>) -> Result<Vec<CompiledRelation>, CompileError> {
    if nets.monoidal() != pres.monoidal {
        return Err(CompileError::Presentation(PresentationError::Invalid(format!(
            "networks were built for the {} product, the presentation uses {}",
            nets.monoidal().keyword(),
            pres.monoidal.keyword()
        ))));
    }
    nets.check_against(pres)?;
    pres.relations.iter().map(|r| compile_relation(pres, nets, r)).collect()
}

fn eval_plan<T: Scalar>(
    plan: &Plan,
    monoidal: Monoidal,
    nets: &NetSet<T>,
    bound: &[BoundNet],
    tape: &mut GradTape<T>,
    x: Var,
) -> Result<Var, CompileError> {
    Ok(match plan {
        Plan::Net(slot) => nets.nets[*slot].forward_on(tape, &bound[*slot], x)?,
        Plan::Identity => x,
        Plan::Compose(outer, inner) => {
            let mid = eval_plan(inner, monoidal, nets, bound, tape, x)?;
            eval_plan(outer, monoidal, nets, bound, tape, mid)?
        }
        Plan::Scale(c, inner) => {
            let y = eval_plan(inner, monoidal, nets, bound, tape, x)?;
            tape.scale(y, T::of(*c))
        }
        Plan::Sum(a, b) => {
            let ya = eval_plan(a, monoidal, nets, bound, tape, x)?;
            let yb = eval_plan(b, monoidal, nets, bound, tape, x)?;
            tape.add(ya, yb)
        }
        Plan::Product { left, right, left_in, left_out, right_in, right_out } => match monoidal {
            Monoidal::Cartesian => {
                let xl = tape.slice_cols(x, 0, *left_in);
                let xr = tape.slice_cols(x, *left_in, *right_in);
                let yl = eval_plan(left, monoidal, nets, bound, tape, xl)?;
                let yr = eval_plan(right, monoidal, nets, bound, tape, xr)?;
                tape.concat_cols(yl, yr)
            }
            Monoidal::Tensor => {
                // (L ⊗ R) = (L ⊗ id) ∘ (id ⊗ R); each factor acts on one
                // axis of the per-sample `left × right` index grid.
                let batch = tape.value(x).rows();
                let mut h = x;
                if !right.is_identity() {
                    let rows = tape.reshape(h, batch * left_in, *right_in);
                    let y = eval_plan(right, monoidal, nets, bound, tape, rows)?;
                    h = tape.reshape(y, batch, left_in * right_out);
                }
                if !left.is_identity() {
                    let swapped = tape.swap_inner(h, *left_in, *right_out);
                    let rows = tape.reshape(swapped, batch * right_out, *left_in);
                    let y = eval_plan(left, monoidal, nets, bound, tape, rows)?;
                    let back = tape.reshape(y, batch, right_out * left_out);
                    h = tape.swap_inner(back, *right_out, *left_out);
                }
                h
            }
        },
    })
}

impl CompiledMap {
    /// Records the map on a tape whose networks are already bound.
    pub fn record<T: Scalar>(
        &self,
        nets: &NetSet<T>,
        bound: &[BoundNet],
        tape: &mut GradTape<T>,
        x: Var,
    ) -> Result<Var, CompileError> {
        let got = tape.value(x).cols();
        if got != self.in_width {
            return Err(CompileError::WidthMismatch { want: self.in_width, got });
        }
        eval_plan(&self.plan, nets.monoidal(), nets, bound, tape, x)
    }

    /// Evaluates the map on a batch.
    pub fn apply<T: Scalar>(&self, nets: &NetSet<T>, x: &Tensor2<T>) -> Result<Tensor2<T>, CompileError> {
        let mut tape = GradTape::new();
        let bound = nets.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.record(nets, &bound, &mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl CompiledRelation {
    /// Records `mean ‖lhs(x) − rhs(x)‖²` and returns the `1 × 1` node.
    pub fn record_residual<T: Scalar>(
        &self,
        nets: &NetSet<T>,
        bound: &[BoundNet],
        tape: &mut GradTape<T>,
        points: &Tensor2<T>,
    ) -> Result<Var, CompileError> {
        if points.cols() != self.in_width() {
            return Err(CompileError::WidthMismatch { want: self.in_width(), got: points.cols() });
        }
        let x = tape.constant(points.clone());
        let l = self.lhs.record(nets, bound, tape, x)?;
        let r = self.rhs.record(nets, bound, tape, x)?;
        let d = tape.sub(l, r);
        Ok(tape.mean_squared_rows(d))
    }
}

/// Uniform sampling box `[low, high]^width`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleDomain {
    pub low: f64,
    pub high: f64,
    pub width: usize,
}

impl SampleDomain {
    pub fn new(low: f64, high: f64, width: usize) -> Self {
        assert!(low < high, "sample domain needs low < high");
        assert!(width >= 1, "sample domain needs a positive width");
        Self { low, high, width }
    }

    /// Box for `blocks` copies of a `block_dim`-dimensional space.
    pub fn for_blocks(low: f64, high: f64, blocks: usize, block_dim: usize, monoidal: Monoidal) -> Self {
        Self::new(low, high, monoidal.width(blocks, block_dim))
    }
}

/// `count` i.i.d. uniform points, one per row.
pub fn sample<T: Scalar, R: Rng + ?Sized>(domain: &SampleDomain, count: usize, rng: &mut R) -> Tensor2<T> {
    assert!(count >= 1, "sample count must be positive");
    let dist = Uniform::new_inclusive(domain.low, domain.high);
    let data = (0..count * domain.width).map(|_| T::of(dist.sample(rng))).collect();
    Tensor2::from_vec(count, domain.width, data)
}

/// Mean over points of the squared mismatch between the two sides.
pub fn relation_residual<T: Scalar>(
    rel: &CompiledRelation,
    nets: &NetSet<T>,
    points: &Tensor2<T>,
) -> Result<T, CompileError> {
    let mut tape = GradTape::new();
    let bound = nets.bind(&mut tape);
    let r = rel.record_residual(nets, &bound, &mut tape, points)?;
    Ok(tape.scalar(r))
}

/// Value, per-relation residuals and parameter gradients of the weighted loss.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub value: T,
    pub residuals: Vec<T>,
    pub grads: Gradients<T>,
}

/// Records the whole weighted loss on one tape.
pub fn record_total_loss<T: Scalar>(
    rels: &[CompiledRelation],
    nets: &NetSet<T>,
    bound: &[BoundNet],
    tape: &mut GradTape<T>,
    points: &[Tensor2<T>],
    weights: &[f64],
) -> Result<(Var, Vec<Var>), CompileError> {
    assert_eq!(rels.len(), points.len(), "one point batch per relation");
    assert_eq!(rels.len(), weights.len(), "one weight per relation");
    let mut terms = Vec::with_capacity(rels.len());
    let mut residuals = Vec::with_capacity(rels.len());
    for ((rel, pts), &w) in rels.iter().zip(points).zip(weights) {
        let r = rel.record_residual(nets, bound, tape, pts)?;
        residuals.push(r);
        terms.push((r, T::of(w)));
    }
    Ok((tape.weighted_sum(terms), residuals))
}

/// Weighted sum of relation residuals with gradients.
///
/// Each relation is differentiated on its own tape; with `parallel` the
/// relations are spread over the current rayon pool. Gradients are summed in
/// relation order either way, so the result does not depend on scheduling.
pub fn total_loss<T: Scalar>(
    rels: &[CompiledRelation],
    nets: &NetSet<T>,
    points: &[Tensor2<T>],
    weights: &[f64],
    parallel: bool,
) -> Result<LossEval<T>, CompileError> {
    assert_eq!(rels.len(), points.len(), "one point batch per relation");
    assert_eq!(rels.len(), weights.len(), "one weight per relation");
    let one = |i: usize| -> Result<(T, Gradients<T>), CompileError> {
        let mut tape = GradTape::new();
        let bound = nets.bind(&mut tape);
        let r = rels[i].record_residual(nets, &bound, &mut tape, &points[i])?;
        let value = tape.scalar(r);
        Ok((value, tape.backward(r, T::of(weights[i]))))
    };
    let parts: Vec<Result<(T, Gradients<T>), CompileError>> = if parallel {
        (0..rels.len()).into_par_iter().map(one).collect()
    } else {
        (0..rels.len()).map(one).collect()
    };
    let mut value = T::zero();
    let mut residuals = Vec::with_capacity(rels.len());
    let mut grads: Gradients<T> = BTreeMap::new();
    for (part, &w) in parts.into_iter().zip(weights) {
        let (r, g) = part?;
        value += T::of(w) * r;
        residuals.push(r);
        for (k, t) in g {
            match grads.get_mut(&k) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(k, t);
                }
            }
        }
    }
    Ok(LossEval { value, residuals, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{layer_specs, LayerParams};
    use crate::presentation::{builtin, parse_presentation, Builtin};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_net(name: &str, block_dim: usize, inb: usize, outb: usize, m: Tensor2<f64>) -> GeneratorNet<f64> {
        let (r, c) = m.shape();
        let layers = layer_specs(&[c, r], Regime::Linear).unwrap();
        GeneratorNet::from_parts(name, block_dim, inb, outb, Regime::Linear, layers, vec![LayerParams { weight: m, bias: None }])
            .unwrap()
    }

    fn swap2() -> Tensor2<f64> {
        Tensor2::from_f64_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    #[test]
    fn swap_is_an_involution() {
        let pres = parse_presentation("structure group\ngenerator f arity 2->2 invertible g\nrelation f * inv(f) = id^2\n").unwrap();
        let nets = NetSet::new(Monoidal::Cartesian, 1, vec![linear_net("f", 1, 2, 2, swap2()), linear_net("g", 1, 2, 2, swap2())]);
        let rels = compile(&pres, &nets).unwrap();
        let pts = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 2), 64, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(relation_residual(&rels[0], &nets, &pts).unwrap(), 0.0);
    }

    #[test]
    fn zero_map_satisfies_idempotent_relation() {
        let pres = builtin(Builtin::TemperleyLieb, &BTreeMap::from([("delta".into(), 1.0)])).unwrap();
        let nets = NetSet::new(Monoidal::Cartesian, 1, vec![linear_net("U", 1, 2, 2, Tensor2::zeros(2, 2))]);
        let rels = compile(&pres, &nets).unwrap();
        let pts = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 2), 16, &mut ChaCha8Rng::seed_from_u64(2));
        let lhs = rels[2].lhs.apply(&nets, &pts).unwrap();
        let rhs = rels[2].rhs.apply(&nets, &pts).unwrap();
        assert_eq!(lhs.max_abs(), 0.0);
        assert_eq!(rhs.max_abs(), 0.0);
    }

    #[test]
    fn identity_versus_zero_residual() {
        let pres = parse_presentation("structure group\ngenerator z arity 1->1\nrelation id = z\n").unwrap();
        let nets = NetSet::new(Monoidal::Cartesian, 1, vec![linear_net("z", 1, 1, 1, Tensor2::zeros(1, 1))]);
        let rels = compile(&pres, &nets).unwrap();
        let pts = Tensor2::from_f64_rows(&[&[0.5], &[-0.5]]);
        assert_eq!(relation_residual(&rels[0], &nets, &pts).unwrap(), 0.25);
    }

    #[test]
    fn yang_baxter_compiles_on_three_blocks() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 0).unwrap();
        let rels = compile(&pres, &nets).unwrap();
        assert_eq!(rels[2].in_blocks, 3);
        assert_eq!(rels[2].in_width(), 3);
        // (f x id) * (id x f) * (f x id): the outermost factor has the net on the left.
        let mut plan = &rels[2].lhs.plan;
        while let Plan::Compose(outer, _) = plan {
            plan = outer;
        }
        match plan {
            Plan::Product { left, right, .. } => {
                assert_eq!(**left, Plan::Net(0));
                assert!(right.is_identity());
            }
            other => panic!("unexpected plan {other:?}"),
        }
    }

    #[test]
    fn missing_net_and_width_errors() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let nets = NetSet::new(Monoidal::Cartesian, 1, vec![linear_net("f", 1, 2, 2, swap2())]);
        assert!(matches!(compile(&pres, &nets), Err(CompileError::MissingNet(n)) if n == "g"));
        let nets = NetSet::new(
            Monoidal::Cartesian,
            1,
            vec![linear_net("f", 1, 2, 2, swap2()), linear_net("g", 1, 2, 2, Tensor2::identity(3).slice_cols(0, 2))],
        );
        assert!(matches!(compile(&pres, &nets), Err(CompileError::ArityMismatch { .. })));
        let nets = NetSet::<f64>::init(&pres, 1, Regime::Linear, 0).unwrap();
        let rels = compile(&pres, &nets).unwrap();
        assert!(matches!(
            relation_residual(&rels[0], &nets, &Tensor2::zeros(4, 3)),
            Err(CompileError::WidthMismatch { want: 2, got: 3 })
        ));
    }

    #[test]
    fn tensor_product_matches_kronecker() {
        // Linear R on V⊗V and n: V⊗V → F with dim V = 2; check (id ⊗ n)(R ⊗ id) against kron matrices.
        let pres = builtin(Builtin::RtSystem, &BTreeMap::new()).unwrap();
        let nets = NetSet::<f64>::init(&pres, 2, Regime::Linear, 11).unwrap();
        let rels = compile(&pres, &nets).unwrap();
        let r = crate::extract::collapse(nets.get("R").unwrap()).unwrap().matrix;
        let n = crate::extract::collapse(nets.get("n").unwrap()).unwrap().matrix;
        let i2 = Tensor2::identity(2);
        let lhs_m = i2.kron(&n).matmul(&r.kron(&i2));
        let pts = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 8), 5, &mut ChaCha8Rng::seed_from_u64(3));
        let via_nets = rels[4].lhs.apply(&nets, &pts).unwrap();
        let via_mats = pts.matmul_nt(&lhs_m);
        assert!(via_nets.sub(&via_mats).max_abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let d = SampleDomain::new(-1.0, 1.0, 2);
        let a = sample::<f64, _>(&d, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample::<f64, _>(&d, 4, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let d3 = SampleDomain::for_blocks(0.0, 1.0, 3, 2, Monoidal::Cartesian);
        assert_eq!(sample::<f64, _>(&d3, 1, &mut ChaCha8Rng::seed_from_u64(0)).cols(), 6);
    }

    #[test]
    fn sample_mean_converges() {
        let d = SampleDomain::new(0.0, 1.0, 3);
        let pts = sample::<f64, _>(&d, 10_000, &mut ChaCha8Rng::seed_from_u64(5));
        for c in 0..3 {
            let mean: f64 = (0..10_000).map(|r| pts.get(r, c)).sum::<f64>() / 10_000.0;
            assert!((mean - 0.5).abs() < 0.05, "column {c} mean {mean}");
        }
    }

    #[test]
    fn total_loss_is_weighted_sum_and_parallel_agrees() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let nets = NetSet::<f64>::init(&pres, 1, Regime::Nonlinear, 4).unwrap();
        let rels = compile(&pres, &nets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<_> = rels.iter().map(|r| sample(&SampleDomain::new(-1.0, 1.0, r.in_width()), 32, &mut rng)).collect();
        let single: Vec<f64> = rels.iter().zip(&pts).map(|(r, p)| relation_residual(r, &nets, p).unwrap()).collect();
        let seq = total_loss(&rels, &nets, &pts, &[1.0, 1.0, 1.0], false).unwrap();
        let par = total_loss(&rels, &nets, &pts, &[1.0, 1.0, 1.0], true).unwrap();
        assert_eq!(seq.residuals, single);
        assert_eq!(seq.value, single.iter().sum::<f64>());
        assert_eq!(seq.value, par.value);
        assert_eq!(seq.grads, par.grads);
        let weighted = total_loss(&rels, &nets, &pts, &[2.0, 0.5, 1.0], false).unwrap();
        assert!((weighted.value - (2.0 * single[0] + 0.5 * single[1] + single[2])).abs() < 1e-15);

        // Single-tape recording gives the same gradients.
        let mut tape = GradTape::new();
        let bound = nets.bind(&mut tape);
        let (loss, _) = record_total_loss(&rels, &nets, &bound, &mut tape, &pts, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tape.scalar(loss), seq.value);
        let g = tape.backward(loss, 1.0);
        for (k, t) in &g {
            assert!(t.sub(&seq.grads[k]).max_abs() < 1e-14);
        }
    }

    #[test]
    fn residual_is_symmetric_in_sides() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let nets = NetSet::<f64>::init(&pres, 1, Regime::Nonlinear, 6).unwrap();
        let mut flipped = pres.clone();
        for r in &mut flipped.relations {
            std::mem::swap(&mut r.lhs, &mut r.rhs);
        }
        let a = compile(&pres, &nets).unwrap();
        let b = compile(&flipped, &nets).unwrap();
        let pts = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 3), 50, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(relation_residual(&a[2], &nets, &pts).unwrap(), relation_residual(&b[2], &nets, &pts).unwrap());
    }

    #[test]
    fn identity_padding_leaves_residual_unchanged() {
        let pres = builtin(Builtin::Braid, &BTreeMap::new()).unwrap();
        let nets = NetSet::<f64>::init(&pres, 1, Regime::Nonlinear, 2).unwrap();
        let base = &pres.relations[2];
        let mut padded = pres.clone();
        padded.relations = vec![RelationEq::new(
            "padded",
            RelExpr::id(1).times(base.lhs.clone()).times(RelExpr::id(2)),
            RelExpr::id(1).times(base.rhs.clone()).times(RelExpr::id(2)),
        )];
        let r0 = compile_relation(&pres, &nets, base).unwrap();
        let r1 = compile_relation(&padded, &nets, &padded.relations[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 3), 40, &mut rng);
        let pad_l = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 1), 40, &mut rng);
        let pad_r = sample::<f64, _>(&SampleDomain::new(-1.0, 1.0, 2), 40, &mut rng);
        let wide = Tensor2::concat_cols(&Tensor2::concat_cols(&pad_l, &pts), &pad_r);
        let a = relation_residual(&r0, &nets, &pts).unwrap();
        let b = relation_residual(&r1, &nets, &wide).unwrap();
        assert!((a - b).abs() <= 1e-15 * a.max(1.0));
    }
}
