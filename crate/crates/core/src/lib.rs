//! Persona-consistent dialogue generation in three stages: a prototype
//! generator, a consistency matcher that masks implicated words, and a
//! rewriter that re-decodes the masked prototype.
//!
//! All model math is generic over [`numerics::Scalar`]; the aliases below fix
//! it to `f64`, which is what training uses.

pub mod config;
pub mod data;
mod decoding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod matcher;
pub mod pipeline;
pub mod rewriter;
pub mod numerics;

pub use error::{GdrError, Result};

pub type Matrix = numerics::Matrix<f64>;
pub type Tensor = numerics::Tensor<f64>;
pub type ParameterStore = numerics::ParameterStore<f64>;
pub type AdamState = numerics::AdamState<f64>;
pub type Graph = numerics::Graph<f64>;
