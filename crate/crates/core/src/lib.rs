//! Transformer set encoder for classifying benchmark optimization problems
//! from Latin Hypercube samples of their landscapes.

pub mod cli;
pub mod fnsuite;
pub mod model;
pub mod sampling;
pub mod tensor;
pub mod training;
