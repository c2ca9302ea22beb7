//! Finite-depth approximations of a Sobolev sphere embedding whose image
//! contains a prescribed Cantor set, with numeric certificates for every
//! quantitative step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvh;
pub mod cantor;
pub mod config;
pub mod curve;
pub mod geom;
pub mod mesh;
pub mod pipeline;
pub mod profile;
pub mod quad;
pub mod report;
pub mod surface;
pub mod tentacle;
pub mod tree;
pub mod verify;
