//! Sliced link diagrams and their bracket under trained crossing, cap and cup maps.
//!
//! Slices are listed bottom to top. A slice is a row of primitives laid side
//! by side; `cup` opens two strands, `cap` closes two, `cross`/`cross_inv`
//! braid two and `strand` passes one through. The bracket composes the
//! slice maps starting from the one-dimensional empty input.

use std::fmt;

use crate::extract::{ExtractError, LinearRep};
use crate::netcore::Tensor2;
use crate::presentation::{rt_labels, Presentation, RelExpr};
use crate::relcomp::{compile_expr, CompileError, NetSet};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Cup,
    Cap,
    Cross,
    CrossInv,
    Strand,
}

impl Primitive {
    pub fn token(self) -> &'static str {
        match self {
            Primitive::Cup => "cup",
            Primitive::Cap => "cap",
            Primitive::Cross => "cross",
            Primitive::CrossInv => "cross_inv",
            Primitive::Strand => "strand",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        [Primitive::Cup, Primitive::Cap, Primitive::Cross, Primitive::CrossInv, Primitive::Strand]
            .into_iter()
            .find(|p| p.token() == t)
    }

    pub fn inputs(self) -> usize {
        match self {
            Primitive::Cup => 0,
            Primitive::Strand => 1,
            Primitive::Cap | Primitive::Cross | Primitive::CrossInv => 2,
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            Primitive::Cap => 0,
            Primitive::Strand => 1,
            Primitive::Cup | Primitive::Cross | Primitive::CrossInv => 2,
        }
    }

    fn expr(self) -> RelExpr {
        match self {
            Primitive::Cup => RelExpr::gen("u"),
            Primitive::Cap => RelExpr::gen("n"),
            Primitive::Cross => RelExpr::gen("R"),
            Primitive::CrossInv => RelExpr::inv("R"),
            Primitive::Strand => RelExpr::id(1),
        }
    }
}

pub type Slice = Vec<Primitive>;

fn slice_inputs(s: &[Primitive]) -> usize {
    s.iter().map(|p| p.inputs()).sum()
}

fn slice_outputs(s: &[Primitive]) -> usize {
    s.iter().map(|p| p.outputs()).sum()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagramError {
    #[error("slice {slice}: unknown primitive `{token}`")]
    UnknownPrimitive { slice: usize, token: String },
    #[error("slice {slice} is empty")]
    EmptySlice { slice: usize },
    #[error("slice {slice}: takes {inputs} strands but the slice below ends with {below}")]
    StrandMismatch { slice: usize, inputs: usize, below: usize },
    #[error("diagram has no slices")]
    Empty,
    #[error("diagram is not closed: {inputs} strands enter at the bottom, {outputs} leave at the top")]
    Open { inputs: usize, outputs: usize },
    #[error("move {0} does not apply anywhere in the diagram")]
    NotApplicable(&'static str),
}

/// A chain of slices whose strand counts agree at every seam.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SlicedDiagram {
    slices: Vec<Slice>,
}

impl SlicedDiagram {
    pub fn new(slices: Vec<Slice>) -> Result<Self, DiagramError> {
        if slices.is_empty() {
            return Err(DiagramError::Empty);
        }
        for (i, s) in slices.iter().enumerate() {
            if s.is_empty() {
                return Err(DiagramError::EmptySlice { slice: i + 1 });
            }
            if i > 0 {
                let below = slice_outputs(&slices[i - 1]);
                if slice_inputs(s) != below {
                    return Err(DiagramError::StrandMismatch { slice: i + 1, inputs: slice_inputs(s), below });
                }
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn inputs(&self) -> usize {
        slice_inputs(&self.slices[0])
    }

    pub fn outputs(&self) -> usize {
        slice_outputs(self.slices.last().expect("non-empty"))
    }

    pub fn is_closed(&self) -> bool {
        self.inputs() == 0 && self.outputs() == 0
    }

    /// The diagram as a single expression over `u`, `n`, `R` and `inv(R)`.
    pub fn to_expr(&self) -> RelExpr {
        RelExpr::compose_all(
            self.slices.iter().rev().map(|s| RelExpr::product_all(s.iter().map(|p| p.expr()).collect())).collect(),
        )
    }

    /// One slice per line, bottom first.
    pub fn to_text(&self) -> String {
        self.slices.iter().map(|s| slice_text(s) + "\n").collect()
    }
}

fn slice_text(s: &[Primitive]) -> String {
    s.iter().map(|p| p.token()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for SlicedDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.slices.iter().map(|s| slice_text(s)).collect();
        f.write_str(&parts.join(" / "))
    }
}

/// Parses slices separated by newlines or `/`, bottom first. `#` starts a comment.
pub fn parse_diagram(text: &str) -> Result<SlicedDiagram, DiagramError> {
    let mut slices = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        for part in line.split('/') {
            let index = slices.len() + 1;
            let slice = part
                .split_whitespace()
                .map(|t| Primitive::from_token(t).ok_or_else(|| DiagramError::UnknownPrimitive { slice: index, token: t.into() }))
                .collect::<Result<Slice, _>>()?;
            slices.push(slice);
        }
    }
    SlicedDiagram::new(slices)
}

#[derive(Debug, thiserror::Error)]
pub enum BracketError {
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Output of the composed diagram map on the empty input; one entry for a closed diagram.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketValue {
    pub value: Vec<f64>,
}

impl BracketValue {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

fn require_closed(d: &SlicedDiagram) -> Result<(), DiagramError> {
    if d.is_closed() {
        Ok(())
    } else {
        Err(DiagramError::Open { inputs: d.inputs(), outputs: d.outputs() })
    }
}

/// Bracket through the networks. `pres` supplies the arities of `R`, `n`
/// and `u` and must use the tensor product.
pub fn evaluate_bracket<T: Scalar>(d: &SlicedDiagram, pres: &Presentation, nets: &NetSet<T>) -> Result<BracketValue, BracketError> {
    require_closed(d)?;
    nets.check_against(pres)?;
    let map = compile_expr(pres, nets, &d.to_expr())?;
    let y = map.apply(nets, &Tensor2::from_vec(1, 1, vec![T::one()]))?;
    Ok(BracketValue { value: y.data().iter().map(|v| v.as_f64()).collect() })
}

/// Bracket through explicit matrices.
pub fn evaluate_bracket_matrices<T: Scalar>(
    d: &SlicedDiagram,
    pres: &Presentation,
    rep: &LinearRep<T>,
) -> Result<BracketValue, BracketError> {
    require_closed(d)?;
    let m = rep.expr_map(pres, &d.to_expr())?;
    let mut value: Vec<f64> = (0..m.matrix.rows()).map(|r| m.matrix.get(r, 0).as_f64()).collect();
    for (v, o) in value.iter_mut().zip(&m.offset) {
        *v += o.as_f64();
    }
    Ok(BracketValue { value })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    R2Insert,
    R3Exchange,
    SlideNPastR,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::R2Insert, Move::R3Exchange, Move::SlideNPastR];

    pub fn name(self) -> &'static str {
        match self {
            Move::R2Insert => "R2_insert",
            Move::R3Exchange => "R3_exchange",
            Move::SlideNPastR => "slide_n_past_R",
        }
    }

    /// Label of the trained relation that makes the move an identity.
    pub fn relation_label(self) -> &'static str {
        match self {
            Move::R2Insert => rt_labels::INVERSE_THEN_CROSSING,
            Move::R3Exchange => rt_labels::YANG_BAXTER,
            Move::SlideNPastR => rt_labels::SLIDE,
        }
    }
}

impl std::str::FromStr for Move {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Move::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown move `{s}`"))
    }
}

/// For a slice of strands plus exactly one other primitive, that primitive
/// and the index of its first input strand.
fn single(s: &[Primitive]) -> Option<(Primitive, usize)> {
    let mut found = None;
    let mut pos = 0;
    for &p in s {
        if p != Primitive::Strand {
            if found.is_some() {
                return None;
            }
            found = Some((p, pos));
        }
        pos += p.inputs();
    }
    found
}

/// `width` input strands with `p` starting at strand `at`.
fn placed(p: Primitive, at: usize, width: usize) -> Slice {
    let mut s = vec![Primitive::Strand; at];
    s.push(p);
    s.extend(std::iter::repeat(Primitive::Strand).take(width - at - p.inputs()));
    s
}

/// Applies `mv` at its first applicable location.
pub fn move_perturb(d: &SlicedDiagram, mv: Move) -> Result<SlicedDiagram, DiagramError> {
    let slices = d.slices();
    let mut out = slices.to_vec();
    match mv {
        Move::R2Insert => {
            let k = slices.iter().position(|s| slice_outputs(s) >= 2).ok_or(DiagramError::NotApplicable(mv.name()))?;
            let w = slice_outputs(&slices[k]);
            out.insert(k + 1, placed(Primitive::Cross, 0, w));
            out.insert(k + 2, placed(Primitive::CrossInv, 0, w));
        }
        Move::R3Exchange => {
            let k = (0..slices.len().saturating_sub(2))
                .find_map(|k| {
                    let (a, b, c) = (single(&slices[k])?, single(&slices[k + 1])?, single(&slices[k + 2])?);
                    let w = slice_inputs(&slices[k]);
                    let all_cross = [a.0, b.0, c.0].iter().all(|&p| p == Primitive::Cross);
                    (all_cross && a.1 == c.1 && a.1.abs_diff(b.1) == 1).then_some((k, a.1, b.1, w))
                })
                .ok_or(DiagramError::NotApplicable(mv.name()))?;
            let (k, outer, middle, w) = k;
            out[k] = placed(Primitive::Cross, middle, w);
            out[k + 1] = placed(Primitive::Cross, outer, w);
            out[k + 2] = placed(Primitive::Cross, middle, w);
        }
        Move::SlideNPastR => {
            // cross at p then cap at p+1  <->  cross at p+1 then cap at p
            let (k, replacement) = (0..slices.len().saturating_sub(1))
                .find_map(|k| {
                    let (a, b) = (single(&slices[k])?, single(&slices[k + 1])?);
                    let w = slice_inputs(&slices[k]);
                    if a.0 != Primitive::Cross || b.0 != Primitive::Cap {
                        return None;
                    }
                    if b.1 == a.1 + 1 && a.1 + 3 <= w {
                        Some((k, [placed(Primitive::Cross, a.1 + 1, w), placed(Primitive::Cap, a.1, w)]))
                    } else if a.1 == b.1 + 1 {
                        Some((k, [placed(Primitive::Cross, b.1, w), placed(Primitive::Cap, b.1 + 1, w)]))
                    } else {
                        None
                    }
                })
                .ok_or(DiagramError::NotApplicable(mv.name()))?;
            let [lo, hi] = replacement;
            out[k] = lo;
            out[k + 1] = hi;
        }
    }
    SlicedDiagram::new(out)
}

/// Bracket of a move-perturbed diagram next to the original.
#[derive(Clone, Debug, PartialEq)]
pub struct MoveCheck {
    pub mv: Move,
    pub diagram: SlicedDiagram,
    pub value: f64,
    pub delta: f64,
}

/// Evaluates every applicable move. Moves that apply nowhere are skipped.
pub fn check_moves<T: Scalar>(
    d: &SlicedDiagram,
    pres: &Presentation,
    nets: &NetSet<T>,
) -> Result<(f64, Vec<MoveCheck>), BracketError> {
    let base = evaluate_bracket(d, pres, nets)?.scalar();
    let mut checks = Vec::new();
    for mv in Move::ALL {
        let Ok(moved) = move_perturb(d, mv) else { continue };
        let value = evaluate_bracket(&moved, pres, nets)?.scalar();
        checks.push(MoveCheck { mv, diagram: moved, value, delta: (value - base).abs() });
    }
    Ok((base, checks))
}

pub const UNKNOT: &str = "cup / cap";
pub const HOPF: &str = "cup cup / strand cross strand / strand cross strand / strand strand cap / cap";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::AffineMap;
    use crate::netcore::Regime;
    use crate::presentation::{builtin, Builtin};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn rt() -> Presentation {
        builtin(Builtin::RtSystem, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn unknot_parses() {
        let d = parse_diagram(UNKNOT).unwrap();
        assert_eq!(d.slices().len(), 2);
        assert!(d.is_closed());
        let kink = parse_diagram("cup\ncross # kink\ncap\n").unwrap();
        assert_eq!(kink.to_string(), "cup / cross / cap");
    }

    #[test]
    fn malformed_diagrams_name_the_slice() {
        assert_eq!(
            parse_diagram("cup / strand cup strand / cross_inv strand / cap").unwrap_err(),
            DiagramError::StrandMismatch { slice: 3, inputs: 3, below: 4 }
        );
        assert_eq!(
            parse_diagram("cup / twist / cap").unwrap_err(),
            DiagramError::UnknownPrimitive { slice: 2, token: "twist".into() }
        );
        assert_eq!(parse_diagram("# nothing\n").unwrap_err(), DiagramError::Empty);
        assert_eq!(parse_diagram("cup / / cap").unwrap_err(), DiagramError::EmptySlice { slice: 2 });
    }

    #[test]
    fn r2_insert_on_unknot() {
        let d = move_perturb(&parse_diagram(UNKNOT).unwrap(), Move::R2Insert).unwrap();
        assert_eq!(d.to_string(), "cup / cross / cross_inv / cap");
    }

    #[test]
    fn r3_exchange_swaps_pattern() {
        let d = parse_diagram("cup strand strand strand / cross strand / strand cross / cross strand / cap cap").unwrap_err();
        assert!(matches!(d, DiagramError::StrandMismatch { .. }));
        let d = parse_diagram("cup cup / cross strand strand / strand cross strand / cross strand strand / cap cap").unwrap();
        let e = move_perturb(&d, Move::R3Exchange).unwrap();
        assert_eq!(
            e.to_string(),
            "cup cup / strand cross strand / cross strand strand / strand cross strand / cap cap"
        );
        assert_eq!(move_perturb(&e, Move::R3Exchange).unwrap(), d);
        assert_eq!(
            move_perturb(&parse_diagram(UNKNOT).unwrap(), Move::R3Exchange).unwrap_err(),
            DiagramError::NotApplicable("R3_exchange")
        );
    }

    #[test]
    fn slide_on_hopf() {
        let d = parse_diagram(HOPF).unwrap();
        let s = move_perturb(&d, Move::SlideNPastR).unwrap();
        assert_eq!(s.to_string(), "cup cup / strand cross strand / strand strand cross / strand cap strand / cap");
        assert_eq!(move_perturb(&s, Move::SlideNPastR).unwrap(), d);
    }

    #[test]
    fn open_diagrams_do_not_evaluate() {
        let d = parse_diagram("cup / cross").unwrap();
        let nets = NetSet::<f64>::init(&rt(), 2, Regime::Linear, 0).unwrap();
        assert!(matches!(
            evaluate_bracket(&d, &rt(), &nets),
            Err(BracketError::Diagram(DiagramError::Open { inputs: 0, outputs: 2 }))
        ));
    }

    #[test]
    fn one_dimensional_maps_multiply() {
        // dim V = 1: every map is a number and the bracket is their product.
        let mut rep = LinearRep::<f64>::new(1);
        rep.insert("R", AffineMap::linear(Tensor2::from_vec(1, 1, vec![3.0])));
        rep.insert("n", AffineMap::linear(Tensor2::from_vec(1, 1, vec![0.5])));
        rep.insert("u", AffineMap::linear(Tensor2::from_vec(1, 1, vec![5.0])));
        let hopf = parse_diagram(HOPF).unwrap();
        // two cups, two crossings, two caps
        let want = 5.0 * 5.0 * 3.0 * 3.0 * 0.5 * 0.5;
        assert_eq!(evaluate_bracket_matrices(&hopf, &rt(), &rep).unwrap().scalar(), want);
        let r2 = move_perturb(&hopf, Move::R2Insert).unwrap();
        assert_eq!(evaluate_bracket_matrices(&r2, &rt(), &rep).unwrap().scalar(), want);
    }

    #[test]
    fn networks_agree_with_matrices() {
        let pres = rt();
        let nets = NetSet::<f64>::init(&pres, 2, Regime::Linear, 7).unwrap();
        let rep = LinearRep::from_nets(2, nets.nets()).unwrap();
        for text in [UNKNOT, HOPF, "cup / cross / cross_inv / cap"] {
            let d = parse_diagram(text).unwrap();
            let a = evaluate_bracket(&d, &pres, &nets).unwrap().scalar();
            let b = evaluate_bracket_matrices(&d, &pres, &rep).unwrap().scalar();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{text}: {a} vs {b}");
        }
    }

    #[test]
    fn swap_crossing_with_standard_cap() {
        // R = flip, n = ⟨e_i, e_i⟩ pairing, u = Σ e_i ⊗ e_i: an exact solution
        // with unknot value dim V and Hopf value (dim V)².
        let mut rep = LinearRep::<f64>::new(2);
        let mut flip = Tensor2::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                flip.set(j * 2 + i, i * 2 + j, 1.0);
            }
        }
        rep.insert("R", AffineMap::linear(flip));
        rep.insert("n", AffineMap::linear(Tensor2::from_vec(1, 4, vec![1.0, 0.0, 0.0, 1.0])));
        rep.insert("u", AffineMap::linear(Tensor2::from_vec(4, 1, vec![1.0, 0.0, 0.0, 1.0])));
        let pres = rt();
        let res = crate::extract::verify_matrix_relations(&rep, &pres).unwrap();
        assert!(res.iter().all(|(_, r)| *r == 0.0), "{res:?}");
        let value = |t: &str| evaluate_bracket_matrices(&parse_diagram(t).unwrap(), &pres, &rep).unwrap().scalar();
        assert_eq!(value(UNKNOT), 2.0);
        assert_eq!(value(HOPF), 4.0);
        assert_eq!(value("cup cup / cap cap"), 4.0);
    }

    #[test]
    fn strand_slice_changes_nothing() {
        let pres = rt();
        let nets = NetSet::<f64>::init(&pres, 2, Regime::Nonlinear, 1).unwrap();
        let d = parse_diagram(HOPF).unwrap();
        let mut slices = d.slices().to_vec();
        slices.insert(2, vec![Primitive::Strand; 4]);
        let padded = SlicedDiagram::new(slices).unwrap();
        assert_eq!(evaluate_bracket(&d, &pres, &nets).unwrap(), evaluate_bracket(&padded, &pres, &nets).unwrap());
    }

    fn arb_closed() -> impl Strategy<Value = SlicedDiagram> {
        // Random walks in strand count: open with cups, act, close with caps.
        prop::collection::vec((0usize..4, 0usize..8), 1..8).prop_map(|ops| {
            let mut slices: Vec<Slice> = vec![vec![Primitive::Cup]];
            let mut w = 2;
            for (kind, at) in ops {
                let s = match kind {
                    0 if w < 6 => {
                        let at = at % (w + 1);
                        let mut s = vec![Primitive::Strand; w];
                        s.insert(at, Primitive::Cup);
                        s
                    }
                    1 if w >= 4 => placed(Primitive::Cap, at % (w - 1), w),
                    2 => placed(Primitive::Cross, at % (w - 1), w),
                    _ => placed(Primitive::CrossInv, at % (w - 1), w),
                };
                w = slice_outputs(&s);
                slices.push(s);
            }
            while w > 0 {
                slices.push(placed(Primitive::Cap, 0, w));
                w -= 2;
            }
            SlicedDiagram::new(slices).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn moves_preserve_strand_bookkeeping(d in arb_closed()) {
            prop_assert_eq!(parse_diagram(&d.to_text()).unwrap(), d.clone());
            for mv in Move::ALL {
                if let Ok(e) = move_perturb(&d, mv) {
                    prop_assert!(e.is_closed());
                    prop_assert_eq!(SlicedDiagram::new(e.slices().to_vec()).unwrap(), e);
                }
            }
        }

        #[test]
        fn moves_are_exact_for_the_flip_solution(d in arb_closed()) {
            let mut rep = LinearRep::<f64>::new(2);
            let mut flip = Tensor2::zeros(4, 4);
            for i in 0..2 {
                for j in 0..2 {
                    flip.set(j * 2 + i, i * 2 + j, 1.0);
                }
            }
            rep.insert("R", AffineMap::linear(flip));
            rep.insert("n", AffineMap::linear(Tensor2::from_vec(1, 4, vec![1.0, 0.0, 0.0, 1.0])));
            rep.insert("u", AffineMap::linear(Tensor2::from_vec(4, 1, vec![1.0, 0.0, 0.0, 1.0])));
            let pres = rt();
            let base = evaluate_bracket_matrices(&d, &pres, &rep).unwrap().scalar();
            for mv in Move::ALL {
                if let Ok(e) = move_perturb(&d, mv) {
                    prop_assert_eq!(evaluate_bracket_matrices(&e, &pres, &rep).unwrap().scalar(), base);
                }
            }
        }
    }
}
