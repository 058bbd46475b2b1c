//! Wavelength-multiplexed diffractive processors: simulation, training and
//! evaluation of layer stacks that implement a different complex-valued
//! linear transform at each illumination wavelength.
//!
//! All lengths are in units of the mean wavelength `λ_m`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod materials;
pub mod propagation;
pub mod rng;
pub mod stack;
pub mod taskgen;
pub mod training;
