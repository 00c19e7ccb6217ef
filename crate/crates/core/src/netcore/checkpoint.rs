//! JSON checkpoint of trained networks.
//!
//! Floats are written with the shortest decimal that round-trips to the same
//! `f64` (never more than 17 significant digits), so save/load is bit-exact
//! for `f64` nets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{layer_specs, GeneratorNet, LayerParams, Regime};
use super::tensor::Tensor2;
use super::NetError;
use crate::presentation::Monoidal;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub regime: Regime,
    pub block_dim: usize,
    pub in_blocks: usize,
    pub out_blocks: usize,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub presentation: String,
    pub monoidal: Monoidal,
    pub block_dim: usize,
    pub nets: Vec<NetRecord>,
}

impl NetRecord {
    pub fn from_net<T: Scalar>(net: &GeneratorNet<T>) -> Self {
        Self {
            name: net.name().to_string(),
            regime: net.regime(),
            block_dim: net.block_dim(),
            in_blocks: net.in_blocks(),
            out_blocks: net.out_blocks(),
            widths: net.widths(),
            layers: net
                .params()
                .iter()
                .map(|p| LayerRecord {
                    weight: p.weight.data().iter().map(|v| v.as_f64()).collect(),
                    bias: p.bias.as_ref().map(|b| b.data().iter().map(|v| v.as_f64()).collect()),
                })
                .collect(),
        }
    }

    pub fn to_net<T: Scalar>(&self) -> Result<GeneratorNet<T>, NetError> {
        let specs = layer_specs(&self.widths, self.regime)?;
        if specs.len() != self.layers.len() {
            return Err(NetError::Checkpoint(format!("net `{}`: {} layers recorded, widths imply {}", self.name, self.layers.len(), specs.len())));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (i, (spec, rec)) in specs.iter().zip(&self.layers).enumerate() {
            if rec.weight.len() != spec.in_dim * spec.out_dim {
                return Err(NetError::Checkpoint(format!("net `{}`: layer {i} weight has {} entries", self.name, rec.weight.len())));
            }
            let weight = Tensor2::from_vec(spec.out_dim, spec.in_dim, rec.weight.iter().map(|&v| T::of(v)).collect());
            let bias = match &rec.bias {
                Some(b) if b.len() == spec.out_dim => Some(Tensor2::from_vec(1, spec.out_dim, b.iter().map(|&v| T::of(v)).collect())),
                Some(b) => {
                    return Err(NetError::Checkpoint(format!("net `{}`: layer {i} bias has {} entries", self.name, b.len())))
                }
                None => None,
            };
            params.push(LayerParams { weight, bias });
        }
        GeneratorNet::from_parts(self.name.clone(), self.block_dim, self.in_blocks, self.out_blocks, self.regime, specs, params)
    }
}

impl Checkpoint {
    pub fn new<T: Scalar>(presentation: &str, monoidal: Monoidal, block_dim: usize, nets: &[GeneratorNet<T>]) -> Self {
        Self { presentation: presentation.to_string(), monoidal, block_dim, nets: nets.iter().map(NetRecord::from_net).collect() }
    }

    pub fn nets<T: Scalar>(&self) -> Result<Vec<GeneratorNet<T>>, NetError> {
        self.nets.iter().map(NetRecord::to_net).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_json()).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
