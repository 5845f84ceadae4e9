//! Shared fixtures for the kernel benchmarks.

use slowfast::averaging::{saddle_data, EdgeCoefficients, GridSpec, SaddleData};
use slowfast::levelsets::{ReebGraph, TraceOptions};
use slowfast::SurfaceSystem;

pub struct Fixture {
    pub sys: SurfaceSystem,
    pub graph: ReebGraph,
    pub coeffs: EdgeCoefficients,
    pub saddle: SaddleData,
}

/// The asymmetric double-well sphere with its graph, coarse coefficient table and gluing data.
pub fn sphere(eps: f64, delta: f64) -> Fixture {
    let sys = SurfaceSystem::sphere_double_well(0.1).with_epsilon(eps).with_delta(delta);
    let graph = ReebGraph::build(&sys).expect("graph");
    let grid = GridSpec { uniform: 8, decades: 3 };
    let coeffs = EdgeCoefficients::tabulate(&sys, &graph, grid, &TraceOptions::default()).expect("table");
    let saddle = saddle_data(&sys, &graph).expect("saddle");
    Fixture {
        sys,
        graph,
        coeffs,
        saddle,
    }
}
