//! Reverse-mode differentiation over batched matrix operations.
//!
//! A [`GradTape`] records every intermediate value of one forward pass.
//! [`GradTape::backward`] consumes the tape, so a recorded pass can be
//! differentiated at most once.

use std::collections::BTreeMap;

use super::tensor::Tensor2;
use crate::Scalar;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf { key: Option<usize> },
    /// `x · wᵀ`
    Linear { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Tanh { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { left: Var, right: Var },
    Reshape { x: Var },
    SwapInner { x: Var, a: usize, b: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, c: T },
    MeanSquaredRows { x: Var },
    WeightedSum { terms: Vec<(Var, T)> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor2<T>,
}

#[derive(Clone, Debug, Default)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients keyed by the `key` passed to [`GradTape::param`].
pub type Gradients<T> = BTreeMap<usize, Tensor2<T>>;

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, value: Tensor2<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor2<T>) -> Var {
        self.push(Op::Leaf { key: None }, value)
    }

    /// A trainable leaf whose gradient is reported under `key`.
    pub fn param(&mut self, key: usize, value: Tensor2<T>) -> Var {
        self.push(Op::Leaf { key: Some(key) }, value)
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let value = self.value(x).matmul_nt(self.value(w));
        self.push(Op::Linear { x, w }, value)
    }

    /// Adds a `1 × cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        let xv = self.value(x);
        assert_eq!(bias.shape(), (1, xv.cols()), "bias shape mismatch");
        let mut value = xv.clone();
        let cols = value.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bias.data()[i % cols];
        }
        self.push(Op::AddBias { x, b }, value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh { x }, value)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_cols(start, len);
        self.push(Op::SliceCols { x, start }, value)
    }

    pub fn concat_cols(&mut self, left: Var, right: Var) -> Var {
        let value = Tensor2::concat_cols(self.value(left), self.value(right));
        self.push(Op::ConcatCols { left, right }, value)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(x).clone().reshaped(rows, cols);
        self.push(Op::Reshape { x }, value)
    }

    /// Per-row transpose of an `a × b` block into `b × a`.
    pub fn swap_inner(&mut self, x: Var, a: usize, b: usize) -> Var {
        let value = self.value(x).swap_inner(a, b);
        self.push(Op::SwapInner { x, a, b }, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(Op::Sub { a, b }, value)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).scale(c);
        self.push(Op::Scale { x, c }, value)
    }

    /// `1 × 1` mean over rows of the squared row norm.
    pub fn mean_squared_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = T::of(xv.rows().max(1) as f64);
        let value = Tensor2::from_vec(1, 1, vec![xv.sum_squares() / rows]);
        self.push(Op::MeanSquaredRows { x }, value)
    }

    /// `1 × 1` weighted sum of `1 × 1` values, added in the given order.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, T)>) -> Var {
        let mut acc = T::zero();
        for &(v, w) in &terms {
            let val = self.value(v);
            assert_eq!(val.shape(), (1, 1), "weighted_sum expects scalars");
            acc += w * val.data()[0];
        }
        self.push(Op::WeightedSum { terms }, Tensor2::from_vec(1, 1, vec![acc]))
    }

    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "not a scalar");
        t.data()[0]
    }

    /// Differentiates the `1 × 1` value `output` with respect to every keyed
    /// leaf, scaling by `seed`. Leaves that do not influence `output` get a
    /// zero gradient.
    pub fn backward(self, output: Var, seed: T) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor2<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor2::from_vec(1, 1, vec![seed]));

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor2<T>>, g: Tensor2<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        let mut out = Gradients::new();
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Leaf { key: Some(key) } = node.op {
                let (r, c) = node.value.shape();
                let g = grads[idx].take().unwrap_or_else(|| Tensor2::zeros(r, c));
                match out.get_mut(&key) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        out.insert(key, g);
                    }
                }
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Linear { x, w } => {
                    let gx = g.matmul(self.value(*w));
                    let gw = g.matmul_tn(self.value(*x));
                    accumulate(&mut grads[x.0], gx);
                    accumulate(&mut grads[w.0], gw);
                }
                Op::AddBias { x, b } => {
                    let cols = g.cols();
                    let mut gb = Tensor2::zeros(1, cols);
                    for r in 0..g.rows() {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Tanh { x } => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut gx = Tensor2::zeros(src.rows(), src.cols());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        for c in 0..len {
                            gx.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ConcatCols { left, right } => {
                    let lc = self.value(*left).cols();
                    let rc = self.value(*right).cols();
                    accumulate(&mut grads[left.0], g.slice_cols(0, lc));
                    accumulate(&mut grads[right.0], g.slice_cols(lc, rc));
                }
                Op::Reshape { x } => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads[x.0], g.reshaped(r, c));
                }
                Op::SwapInner { x, a, b } => {
                    accumulate(&mut grads[x.0], g.swap_inner(*b, *a));
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads[b.0], g.scale(-T::one()));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads[x.0], g.scale(*c));
                }
                Op::MeanSquaredRows { x } => {
                    let xv = self.value(*x);
                    let factor = g.data()[0] * T::of(2.0) / T::of(xv.rows().max(1) as f64);
                    accumulate(&mut grads[x.0], xv.scale(factor));
                }
                Op::WeightedSum { terms } => {
                    let gv = g.data()[0];
                    for &(v, w) in terms {
                        accumulate(&mut grads[v.0], Tensor2::from_vec(1, 1, vec![gv * w]));
                    }
                }
            }
        }
        out
    }
}
