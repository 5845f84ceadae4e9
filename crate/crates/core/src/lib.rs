//! Averaging, graph-limit and metastability numerics for slow-fast perturbations
//! of the conservative flow `ẋ = ∇F × ∇G` on level surfaces of `F` in R³.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod geometry;
pub mod graphproc;
pub mod levelsets;
pub mod numerics;
pub mod surface;
pub mod torus;

pub use error::{Error, Result};
pub use geometry::{Mat3, NoiseMap, Perturbation, SmoothField, SurfaceSystem, Vec3, VectorFieldSpec};
