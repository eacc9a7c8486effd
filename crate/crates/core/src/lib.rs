//! Desk-scale laboratory for semi-supervised GANs built around a complement
//! ("bad") generator: a (K+1)-class discriminator, the complement-generator
//! objective terms (feature matching, entropy, low-density), 2D synthetic
//! case studies, and numerical checks of the framework's propositions.

pub mod config;
pub mod datasets;
pub mod density;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use tensor::{Tape, Tensor, TensorError};
