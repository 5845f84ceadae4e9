//! Critical points, closed level curves and the graph of their components.

pub mod critical;
pub mod reeb;
pub mod trace;

pub use critical::{find_critical_points, refine_critical_point, tangential_gradient, CriticalKind, CriticalPoint};
pub use reeb::{Edge, ReebGraph, Vertex, VertexKind};
pub use trace::{project_to_curve, trace_level_curve, Integrand, LevelCurve, TraceOptions};
