//! Arithmetic random waves on the three-dimensional torus and the nodal
//! volumes of one, two or three independent copies.

pub mod chaos;
pub mod field;
pub mod harness;
pub mod kacrice;
pub mod lattice;
pub mod nodal;
mod nodal_tables;
