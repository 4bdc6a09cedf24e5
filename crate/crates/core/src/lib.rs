//! Local-frame equivariant neural network interatomic potential.

pub mod bench;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod geom;
pub mod md;
pub mod model;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;
