//! Neural realizations of finitely presented algebraic structures.
//!
//! Generators of a presentation become dense networks, relations become
//! sampled residual losses, and training searches for networks that satisfy
//! every relation at once. Linear and affine solutions collapse to explicit
//! matrices that can be checked exactly, and trained crossing, cap and cup
//! maps evaluate a bracket on sliced link diagrams.

pub mod extract;
pub mod knotlab;
pub mod netcore;
pub mod presentation;
pub mod relcomp;
pub mod rng;
pub mod trainer;
mod scalar;

pub use scalar::Scalar;

pub type Tensor = netcore::Tensor2<f64>;
pub type Net = netcore::GeneratorNet<f64>;
pub type Nets = relcomp::NetSet<f64>;
pub type Rep = extract::LinearRep<f64>;
