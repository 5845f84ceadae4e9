use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use slowfast::averaging::line_coefficients;
use slowfast::flow::{stream_rng, IntegratorConfig, Stepper};
use slowfast::graphproc::{GraphSimConfig, Walker};
use slowfast::levelsets::{trace_level_curve, TraceOptions};
use slowfast_bench::sphere;

fn steppers(c: &mut Criterion) {
    let fx = sphere(1e-3, 0.1);
    let cfg = IntegratorConfig::default();
    let stepper = Stepper::new(&fx.sys, &cfg);
    let x0 = fx.sys.base_point;
    c.bench_function("rk4_step", |b| b.iter(|| stepper.step(black_box(&x0)).unwrap()));
    let mut rng = stream_rng(1, 0);
    c.bench_function("sde_step", |b| b.iter(|| stepper.step_sde(black_box(&x0), &mut rng).unwrap()));
}

fn level_curves(c: &mut Criterion) {
    let fx = sphere(1e-3, 0.0);
    let opts = TraceOptions::default();
    let x0 = fx.sys.base_point;
    c.bench_function("trace_level_curve", |b| {
        b.iter(|| trace_level_curve(&fx.sys.f, fx.sys.level, &fx.sys.g, 0.5, black_box(&x0), &[], &opts).unwrap())
    });
    let (k, g) = fx.graph.classify_point(&fx.sys, &x0).unwrap();
    c.bench_function("line_coefficients", |b| {
        b.iter(|| line_coefficients(&fx.sys, &fx.graph, k, black_box(g), &opts).unwrap())
    });
}

fn graph_walk(c: &mut Criterion) {
    let fx = sphere(1e-3, 0.0);
    let start = (fx.saddle.incident[0].0, fx.saddle.g - 0.05);
    let cfg = GraphSimConfig::default().scaled_to(0.3);
    c.bench_function("walker_1000_steps", |b| {
        b.iter_batched(
            || stream_rng(2, 0),
            |mut rng| {
                let mut w = Walker::new(&fx.coeffs, &fx.graph, &fx.saddle, 0.3, cfg, start).unwrap();
                for _ in 0..1000 {
                    w.step(&mut rng).unwrap();
                }
                w.g
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, steppers, level_curves, graph_walk);
criterion_main!(benches);
