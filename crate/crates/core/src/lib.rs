//! Heterogeneous multiscale solver for immiscible incompressible two-phase
//! flow in porous media with rapidly oscillating permeability.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod constitutive;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod fluxrecon;
pub mod geometry;
pub mod linalg;
pub mod macrofv;
pub mod mesh;
pub mod microcell;

pub use error::{Error, Result};
pub use geometry::{Point, Tensor2};
