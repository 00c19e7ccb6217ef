use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{GradTape, Var};
use super::tensor::Tensor2;
use super::NetError;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Which family of maps a network can represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Identity activations, no biases: the net is a matrix.
    Linear,
    /// Identity activations with biases: the net is a matrix plus offset.
    Affine,
    /// `tanh` on hidden layers, identity on the last layer, no biases.
    Nonlinear,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Linear => "linear",
            Regime::Affine => "affine",
            Regime::Nonlinear => "nonlinear",
        }
    }

    fn hidden_activation(self) -> Activation {
        match self {
            Regime::Nonlinear => Activation::Tanh,
            Regime::Linear | Regime::Affine => Activation::Identity,
        }
    }

    fn uses_bias(self) -> bool {
        matches!(self, Regime::Affine)
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Regime::Linear),
            "affine" => Ok(Regime::Affine),
            "nonlinear" => Ok(Regime::Nonlinear),
            other => Err(format!("unknown regime `{other}` (expected linear, affine or nonlinear)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub use_bias: bool,
}

/// Weight (`out_dim × in_dim`) and optional `1 × out_dim` bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor2<T>,
    pub bias: Option<Tensor2<T>>,
}

/// Width chain `[in, 2·in+2, 2·in+2, 100, 50, out]` used for every built-in
/// generator. With `in == out == N` this is the square chain for a width-`N`
/// map.
pub fn default_architecture(in_width: usize, out_width: usize) -> Vec<usize> {
    assert!(in_width >= 1 && out_width >= 1, "architecture widths must be positive");
    let hidden = 2 * in_width + 2;
    vec![in_width, hidden, hidden, 100, 50, out_width]
}

/// Layer specs for a width chain under a regime.
pub fn layer_specs(widths: &[usize], regime: Regime) -> Result<Vec<LayerSpec>, NetError> {
    if widths.len() < 2 {
        return Err(NetError::InvalidLayers("a network needs at least two widths".into()));
    }
    if let Some(&w) = widths.iter().find(|&&w| w == 0) {
        return Err(NetError::InvalidLayers(format!("layer width {w} must be positive")));
    }
    let last = widths.len() - 2;
    Ok(widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            in_dim: w[0],
            out_dim: w[1],
            activation: if i == last { Activation::Identity } else { regime.hidden_activation() },
            use_bias: regime.uses_bias(),
        })
        .collect())
}

/// Uniform fan-scaled weights in `[-a, a]` with `a = sqrt(6 / (in + out))`;
/// zero biases where the layer has one.
pub fn init_params<T: Scalar>(layers: &[LayerSpec], seed: u64) -> Vec<LayerParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers
        .iter()
        .map(|l| {
            let a = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            let data = (0..l.in_dim * l.out_dim).map(|_| T::of(dist.sample(&mut rng))).collect();
            LayerParams {
                weight: Tensor2::from_vec(l.out_dim, l.in_dim, data),
                bias: l.use_bias.then(|| Tensor2::zeros(1, l.out_dim)),
            }
        })
        .collect()
}

/// A dense feed-forward network realizing one generator map.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<T> {
    name: String,
    block_dim: usize,
    in_blocks: usize,
    out_blocks: usize,
    regime: Regime,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<T>>,
}

/// Tape handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct BoundNet {
    weights: Vec<Var>,
    biases: Vec<Option<Var>>,
}

/// Gradient key for a parameter tensor: net slot, layer, and weight-or-bias.
pub fn param_key(net_slot: usize, layer: usize, is_bias: bool) -> usize {
    (net_slot << 16) | (layer << 1) | usize::from(is_bias)
}

impl<T: Scalar> GeneratorNet<T> {
    /// Randomly initialized network with the given width chain.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        block_dim: usize,
        in_blocks: usize,
        out_blocks: usize,
        widths: &[usize],
        regime: Regime,
        seed: u64,
    ) -> Result<Self, NetError> {
        let layers = layer_specs(widths, regime)?;
        let params = init_params(&layers, seed);
        Self::from_parts(name, block_dim, in_blocks, out_blocks, regime, layers, params)
    }

    pub fn from_parts(
        name: impl Into<String>,
        block_dim: usize,
        in_blocks: usize,
        out_blocks: usize,
        regime: Regime,
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams<T>>,
    ) -> Result<Self, NetError> {
        let net = Self { name: name.into(), block_dim, in_blocks, out_blocks, regime, layers, params };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.block_dim == 0 {
            return Err(NetError::InvalidLayers("block_dim must be positive".into()));
        }
        if self.layers.is_empty() || self.layers.len() != self.params.len() {
            return Err(NetError::InvalidLayers(format!("net `{}` has mismatched layers and params", self.name)));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NetError::InvalidLayers(format!(
                    "net `{}`: layer widths {} and {} do not chain",
                    self.name, pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        let last = self.layers.len() - 1;
        for (i, (spec, p)) in self.layers.iter().zip(&self.params).enumerate() {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(NetError::InvalidLayers("layer dims must be positive".into()));
            }
            if p.weight.shape() != (spec.out_dim, spec.in_dim) {
                return Err(NetError::InvalidLayers(format!("net `{}`: layer {i} weight has wrong shape", self.name)));
            }
            if spec.use_bias != p.bias.is_some() || p.bias.as_ref().is_some_and(|b| b.shape() != (1, spec.out_dim)) {
                return Err(NetError::InvalidLayers(format!("net `{}`: layer {i} bias does not match spec", self.name)));
            }
            let expected_act = if i == last { Activation::Identity } else { self.regime.hidden_activation() };
            if spec.activation != expected_act || spec.use_bias != self.regime.uses_bias() {
                return Err(NetError::RegimeViolation(format!(
                    "net `{}`: layer {i} is inconsistent with the {} regime",
                    self.name,
                    self.regime.name()
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn in_blocks(&self) -> usize {
        self.in_blocks
    }

    pub fn out_blocks(&self) -> usize {
        self.out_blocks
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_width()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.weight.data().len() + p.bias.as_ref().map_or(0, |b| b.data().len()))
            .sum()
    }

    /// Evaluates the network on a batch (one sample per row).
    pub fn forward(&self, x: &Tensor2<T>) -> Result<Tensor2<T>, NetError> {
        if x.cols() != self.in_width() {
            return Err(NetError::DimensionMismatch { net: self.name.clone(), expected: self.in_width(), got: x.cols() });
        }
        let mut h = x.clone();
        for (spec, p) in self.layers.iter().zip(&self.params) {
            h = h.matmul_nt(&p.weight);
            if let Some(b) = &p.bias {
                let cols = h.cols();
                for (i, v) in h.data_mut().iter_mut().enumerate() {
                    *v += b.data()[i % cols];
                }
            }
            if spec.activation == Activation::Tanh {
                h = h.map(|v| v.tanh());
            }
        }
        Ok(h)
    }

    /// Records this network's parameters as keyed leaves on `tape`.
    pub fn bind(&self, tape: &mut GradTape<T>, net_slot: usize) -> BoundNet {
        let mut weights = Vec::with_capacity(self.params.len());
        let mut biases = Vec::with_capacity(self.params.len());
        for (layer, p) in self.params.iter().enumerate() {
            weights.push(tape.param(param_key(net_slot, layer, false), p.weight.clone()));
            biases.push(p.bias.as_ref().map(|b| tape.param(param_key(net_slot, layer, true), b.clone())));
        }
        BoundNet { weights, biases }
    }

    /// Forward pass recorded on `tape` using previously bound parameters.
    pub fn forward_on(&self, tape: &mut GradTape<T>, bound: &BoundNet, x: Var) -> Result<Var, NetError> {
        let got = tape.value(x).cols();
        if got != self.in_width() {
            return Err(NetError::DimensionMismatch { net: self.name.clone(), expected: self.in_width(), got });
        }
        let mut h = x;
        for (i, spec) in self.layers.iter().enumerate() {
            h = tape.linear(h, bound.weights[i]);
            if let Some(b) = bound.biases[i] {
                h = tape.add_bias(h, b);
            }
            if spec.activation == Activation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Visits every parameter tensor with its gradient key.
    pub fn for_each_param_mut(&mut self, net_slot: usize, mut f: impl FnMut(usize, &mut Tensor2<T>)) {
        for (layer, p) in self.params.iter_mut().enumerate() {
            f(param_key(net_slot, layer, false), &mut p.weight);
            if let Some(b) = p.bias.as_mut() {
                f(param_key(net_slot, layer, true), b);
            }
        }
    }
}
