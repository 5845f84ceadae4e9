//! Generic numerical kernels: ODE stepping, interpolation, quadrature,
//! extrapolation and statistics.

pub mod extrap;
pub mod interp;
pub mod ode;
pub mod quad;
pub mod stats;

pub use interp::Pchip;
pub use ode::{hermite, Dopri5};
