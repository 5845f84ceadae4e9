//! Time integration on `{F = z}`: the conservative flow, the deterministic
//! slow-fast flow and the Stratonovich SDE, each followed by projection onto
//! the level surface.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fast_field, tangent_basis, NoiseMap, SmoothField, SurfaceSystem, Vec3};
use crate::levelsets::ReebGraph;

/// Everything the integrators need from a problem instance.
pub trait Dynamics: Sync {
    /// The first integral `F`.
    fn potential(&self) -> &SmoothField;
    fn level(&self) -> f64;
    fn epsilon(&self) -> f64;
    fn delta(&self) -> f64;
    /// Conservative field, integrated in fast time.
    fn fast(&self, x: &Vec3) -> Vec3;
    /// Slow perturbation.
    fn slow(&self, x: &Vec3) -> Vec3;
    fn noise(&self) -> Option<&NoiseMap>;
    /// Scalar recorded with every sample.
    fn observe(&self, x: &Vec3) -> f64;
}

impl Dynamics for SurfaceSystem {
    fn potential(&self) -> &SmoothField {
        &self.f
    }
    fn level(&self) -> f64 {
        self.level
    }
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn fast(&self, x: &Vec3) -> Vec3 {
        fast_field(self, x)
    }
    fn slow(&self, x: &Vec3) -> Vec3 {
        self.perturbation.field(&self.f, x)
    }
    fn noise(&self) -> Option<&NoiseMap> {
        self.noise.as_ref()
    }
    fn observe(&self, x: &Vec3) -> f64 {
        self.g.value(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4Projected,
    HeunStratonovich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Step in fast-time units; slow-time runs use `epsilon * step`.
    pub step: f64,
    pub method: Method,
    pub tol_f: f64,
    pub max_projection_iterations: usize,
    pub seed: u64,
    /// Keep every n-th sample.
    pub record_every: usize,
    /// Depth below the saddle level at which a well entry is declared.
    pub well_depth: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            method: Method::Rk4Projected,
            tol_f: 1e-9,
            max_projection_iterations: 50,
            seed: 0,
            record_every: 1,
            well_depth: 1e-3,
        }
    }
}

impl IntegratorConfig {
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn stochastic() -> Self {
        Self {
            tol_f: 1e-6,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tol_f > 0.0) {
            return Err(Error::Config("step and tol_f must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "event", content = "edge")]
pub enum Event {
    EnteredWell(usize),
    HitBoundary,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: [f64; 3],
    pub g: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<(f64, Event)>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn final_point(&self) -> Option<Vec3> {
        self.last().map(|s| Vec3::from(s.x))
    }

    pub fn entered_well(&self) -> Option<usize> {
        self.events.iter().find_map(|(_, e)| match e {
            Event::EnteredWell(k) => Some(*k),
            _ => None,
        })
    }

    fn push(&mut self, t: f64, x: &Vec3, g: f64) {
        self.samples.push(Sample { t, x: [x[0], x[1], x[2]], g });
    }

    /// One JSON record per sample, with the events that occurred since the previous record.
    pub fn write_jsonl<W: Write>(&self, mut out: W, every: usize) -> Result<()> {
        let every = every.max(1);
        let mut ev = self.events.iter().peekable();
        let n = self.samples.len();
        for (i, s) in self.samples.iter().enumerate() {
            if i % every != 0 && i + 1 != n {
                continue;
            }
            let mut here = Vec::new();
            while let Some((t, e)) = ev.peek() {
                if *t <= s.t {
                    here.push(*e);
                    ev.next();
                } else {
                    break;
                }
            }
            let rec = serde_json::json!({ "t": s.t, "x": s.x, "g": s.g, "events": here });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }
}

/// Newton projection `x ← x - (F(x) - z) ∇F / |∇F|²`.
pub fn project_to_level(f: &SmoothField, z: f64, x: &Vec3, tol: f64, max_iter: usize) -> Result<Vec3> {
    let mut y = *x;
    let mut r = f.value(&y) - z;
    let target = (tol * 1e-3).max(1e-15 * (1.0 + z.abs()));
    for _ in 0..max_iter {
        if r.abs() <= target {
            return Ok(y);
        }
        let g = f.gradient(&y);
        let n2 = g.norm_squared();
        if !(n2 > 0.0) {
            break;
        }
        let next = y - g * (r / n2);
        let rn = f.value(&next) - z;
        if rn.abs() >= r.abs() && r.abs() <= tol {
            return Ok(y);
        }
        y = next;
        r = rn;
    }
    if r.abs() <= tol {
        Ok(y)
    } else {
        Err(Error::ProjectionFailure {
            iterations: max_iter,
            residual: r.abs(),
        })
    }
}

fn rk4<V: Fn(&Vec3) -> Vec3>(v: V, x: &Vec3, dt: f64) -> Vec3 {
    let k1 = v(x);
    let k2 = v(&(x + k1 * (dt / 2.0)));
    let k3 = v(&(x + k2 * (dt / 2.0)));
    let k4 = v(&(x + k3 * dt));
    (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn heun<V: Fn(&Vec3) -> Vec3>(v: V, x: &Vec3, dt: f64) -> Vec3 {
    let k1 = v(x);
    let k2 = v(&(x + k1 * dt));
    (k1 + k2) * (dt / 2.0)
}

fn increment<V: Fn(&Vec3) -> Vec3>(method: Method, v: V, x: &Vec3, dt: f64) -> Vec3 {
    match method {
        Method::Rk4Projected => rk4(v, x, dt),
        Method::HeunStratonovich => heun(v, x, dt),
    }
}

/// Single-step engine shared by all slow-time integrators.
pub struct Stepper<'a, D: Dynamics + ?Sized> {
    pub dynamics: &'a D,
    pub cfg: &'a IntegratorConfig,
    /// Slow-time step.
    pub dt: f64,
    noise: Option<&'a NoiseMap>,
}

impl<'a, D: Dynamics + ?Sized> Stepper<'a, D> {
    pub fn new(dynamics: &'a D, cfg: &'a IntegratorConfig) -> Self {
        Self {
            dynamics,
            cfg,
            dt: cfg.step * dynamics.epsilon(),
            noise: dynamics.noise(),
        }
    }

    fn drift(&self, x: &Vec3) -> Vec3 {
        self.dynamics.fast(x) / self.dynamics.epsilon() + self.dynamics.slow(x)
    }

    fn project(&self, x: &Vec3) -> Result<Vec3> {
        project_to_level(
            self.dynamics.potential(),
            self.dynamics.level(),
            x,
            self.cfg.tol_f,
            self.cfg.max_projection_iterations,
        )
    }

    /// Deterministic step of the slow-time system.
    pub fn step(&self, x: &Vec3) -> Result<Vec3> {
        let d = increment(self.cfg.method, |p| self.drift(p), x, self.dt);
        self.project(&(x + d))
    }

    /// Stochastic Heun step; with `delta = 0` it reproduces [`Self::step`] bit for bit.
    pub fn step_sde<R: Rng + ?Sized>(&self, x: &Vec3, rng: &mut R) -> Result<Vec3> {
        let noise = self.noise.ok_or(Error::Missing("noise map"))?;
        let f = self.dynamics.potential();
        let delta = self.dynamics.delta();
        let sq = self.dt.sqrt();
        let dw = Vec3::new(
            rng.sample::<f64, _>(StandardNormal) * sq,
            rng.sample::<f64, _>(StandardNormal) * sq,
            rng.sample::<f64, _>(StandardNormal) * sq,
        );
        let d = increment(self.cfg.method, |p| self.drift(p), x, self.dt);
        let det = x + d;
        let s0 = noise.sigma(f, x) * dw * delta;
        let pred = det + s0;
        let s1 = noise.sigma(f, &pred) * dw * delta;
        self.project(&(det + (s0 + s1) * 0.5))
    }
}

/// Event detection for slow-time runs.
#[derive(Clone, Copy, Default)]
pub struct Watch<'a> {
    pub graph: Option<&'a ReebGraph>,
    pub stop_on_well: bool,
    pub stop_on_boundary: bool,
}

impl<'a> Watch<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn wells(graph: &'a ReebGraph) -> Self {
        Self {
            graph: Some(graph),
            stop_on_well: true,
            stop_on_boundary: true,
        }
    }
}

struct EventState {
    entered: bool,
}

impl EventState {
    #[allow(clippy::too_many_arguments)]
    fn check(
        &mut self,
        sys: &SurfaceSystem,
        watch: &Watch,
        eta: f64,
        t: f64,
        x: &Vec3,
        g: f64,
        traj: &mut Trajectory,
    ) -> bool {
        if g >= sys.boundary_level {
            traj.events.push((t, Event::HitBoundary));
            return watch.stop_on_boundary;
        }
        if let (Some(graph), false) = (watch.graph, self.entered) {
            if g < graph.well_threshold() - eta {
                if let Ok((k, _)) = graph.classify_point(sys, x) {
                    if graph.is_well_edge(k) && g < graph.edge(k).hi - eta {
                        self.entered = true;
                        traj.events.push((t, Event::EnteredWell(k)));
                        return watch.stop_on_well;
                    }
                }
            }
        }
        false
    }
}

fn check_start<D: Dynamics + ?Sized>(d: &D, x: &Vec3, tol: f64) -> Result<()> {
    let r = (d.potential().value(x) - d.level()).abs();
    if r > tol {
        return Err(Error::Config(format!("start point is off the level surface by {r:e}")));
    }
    Ok(())
}

fn run_fast<D: Dynamics + ?Sized>(d: &D, x0: &Vec3, t_end: f64, cfg: &IntegratorConfig, sign: f64) -> Result<Trajectory> {
    cfg.validate()?;
    check_start(d, x0, cfg.tol_f)?;
    let mut traj = Trajectory::default();
    let mut x = *x0;
    let mut t = 0.0;
    traj.push(t, &x, d.observe(&x));
    let n = (t_end / cfg.step).ceil().max(0.0) as usize;
    for i in 0..n {
        let h = if i + 1 == n { t_end - t } else { cfg.step };
        let inc = increment(cfg.method, |p| d.fast(p) * sign, &x, h);
        x = project_to_level(d.potential(), d.level(), &(x + inc), cfg.tol_f, cfg.max_projection_iterations)?;
        t += h;
        if (i + 1) % cfg.record_every.max(1) == 0 || i + 1 == n {
            traj.push(t, &x, d.observe(&x));
        }
    }
    traj.events.push((t, Event::Stopped));
    Ok(traj)
}

/// Conservative flow `ẋ = ∇F × ∇G` in fast time.
pub fn integrate_unperturbed<D: Dynamics + ?Sized>(d: &D, x0: &Vec3, t_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    run_fast(d, x0, t_end, cfg, 1.0)
}

/// The conservative flow run backward in time.
pub fn integrate_unperturbed_reversed<D: Dynamics + ?Sized>(
    d: &D,
    x0: &Vec3,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    run_fast(d, x0, t_end, cfg, -1.0)
}

fn check_resolution(watch: &Watch, cfg: &IntegratorConfig) -> Result<()> {
    if let Some(graph) = watch.graph {
        let period = graph.shortest_period;
        let bound = period / 50.0;
        if cfg.step > bound {
            return Err(Error::StepResolution {
                step: cfg.step,
                bound,
                period,
            });
        }
    }
    Ok(())
}

/// Deterministic slow-fast flow `ẋ = ε⁻¹ ∇F×∇G + perturbation` in slow time.
pub fn integrate_slow(
    sys: &SurfaceSystem,
    x0: &Vec3,
    t_end: f64,
    cfg: &IntegratorConfig,
    watch: Watch,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_start(sys, x0, cfg.tol_f)?;
    check_resolution(&watch, cfg)?;
    let stepper = Stepper::new(sys, cfg);
    run_slow(sys, x0, t_end, cfg, watch, cfg.well_depth, |x| stepper.step(x))
}

/// Stratonovich SDE with drift `ε⁻¹ ∇F×∇G + perturbation` and noise `δ σ ∘ dW`.
pub fn integrate_sde<R: Rng + ?Sized>(
    sys: &SurfaceSystem,
    x0: &Vec3,
    t_end: f64,
    cfg: &IntegratorConfig,
    watch: Watch,
    rng: &mut R,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_start(sys, x0, cfg.tol_f)?;
    check_resolution(&watch, cfg)?;
    let stepper = Stepper::new(sys, cfg);
    run_slow(sys, x0, t_end, cfg, watch, cfg.well_depth, |x| stepper.step_sde(x, rng))
}

fn run_slow<S>(
    sys: &SurfaceSystem,
    x0: &Vec3,
    t_end: f64,
    cfg: &IntegratorConfig,
    watch: Watch,
    eta: f64,
    mut step: S,
) -> Result<Trajectory>
where
    S: FnMut(&Vec3) -> Result<Vec3>,
{
    let dt = cfg.step * sys.epsilon;
    let mut traj = Trajectory::default();
    let mut state = EventState { entered: false };
    let mut x = *x0;
    let mut t = 0.0;
    let g0 = sys.g.value(&x);
    traj.push(t, &x, g0);
    if state.check(sys, &watch, eta, t, &x, g0, &mut traj) {
        return Ok(traj);
    }
    let n = (t_end / dt).round().max(0.0) as u64;
    for i in 0..n {
        x = step(&x)?;
        t = (i + 1) as f64 * dt;
        let g = sys.g.value(&x);
        let last = i + 1 == n;
        let stop = state.check(sys, &watch, eta, t, &x, g, &mut traj);
        if stop || last || (i + 1) % cfg.record_every.max(1) as u64 == 0 {
            traj.push(t, &x, g);
        }
        if stop {
            return Ok(traj);
        }
    }
    traj.events.push((t, Event::Stopped));
    Ok(traj)
}

/// Independent random stream `index` of the master `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Length of the chord from `a` to `b` projected onto the surface, used as the
/// surface distance (exact great-circle length on spheres centered at the origin).
pub fn surface_distance(f: &SmoothField, z: f64, a: &Vec3, b: &Vec3) -> Result<f64> {
    const SEGMENTS: usize = 16;
    let mut prev = *a;
    let mut len = 0.0;
    for i in 1..=SEGMENTS {
        let s = i as f64 / SEGMENTS as f64;
        let p = project_to_level(f, z, &(a + (b - a) * s), 1e-12, 50)?;
        len += (p - prev).norm();
        prev = p;
    }
    Ok(len)
}

/// Uniform sample (with respect to area) from the surface disc of the given
/// radius around `center`.
pub fn sample_uniform_neighborhood<R: Rng + ?Sized>(
    f: &SmoothField,
    z: f64,
    center: &Vec3,
    radius: f64,
    rng: &mut R,
) -> Result<Vec3> {
    if radius <= 0.0 {
        return Ok(*center);
    }
    let n = f.gradient(center).normalize();
    let (e1, e2) = tangent_basis(&n);
    let lift = |s: f64, t: f64| -> Result<(Vec3, f64)> {
        let y = center + e1 * s + e2 * t;
        // Newton along the fixed normal
        let mut tau = 0.0;
        for _ in 0..60 {
            let x = y + n * tau;
            let r = f.value(&x) - z;
            if r.abs() < 1e-14 {
                break;
            }
            tau -= r / f.gradient(&x).dot(&n);
        }
        let x = y + n * tau;
        if (f.value(&x) - z).abs() > 1e-10 {
            return Err(Error::ProjectionFailure {
                iterations: 60,
                residual: (f.value(&x) - z).abs(),
            });
        }
        let g = f.gradient(&x);
        Ok((x, g.norm() / g.dot(&n).abs()))
    };
    let mut bound: f64 = 1.0;
    for k in 0..32 {
        let a = std::f64::consts::TAU * k as f64 / 32.0;
        bound = bound.max(lift(radius * a.cos(), radius * a.sin())?.1);
    }
    bound *= 1.5;
    let mut tries = 0usize;
    loop {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::RejectionOverflow {
                rate: 1.0 / tries as f64,
            });
        }
        let (s, t) = (rng.random_range(-radius..radius), rng.random_range(-radius..radius));
        if s * s + t * t > radius * radius {
            continue;
        }
        let (x, jac) = lift(s, t)?;
        if jac > bound {
            return Err(Error::Config("area element bound exceeded; radius too large for a graph chart".into()));
        }
        if rng.random::<f64>() * bound > jac {
            continue;
        }
        if surface_distance(f, z, center, &x)? < radius {
            return Ok(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Perturbation, VectorFieldSpec};

    fn canonical() -> SurfaceSystem {
        SurfaceSystem::sphere_double_well(0.0)
    }

    #[test]
    fn critical_point_is_stationary() {
        let sys = canonical();
        let x = Vec3::new(0.0, 0.0, -1.0);
        let tr = integrate_unperturbed(&sys, &x, 10.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(tr.final_point().unwrap(), x);
    }

    #[test]
    fn reversed_flow_returns_to_start() {
        let sys = canonical();
        let cfg = IntegratorConfig::default().with_step(0.01);
        let x0 = sys.base_point;
        let fwd = integrate_unperturbed(&sys, &x0, 3.0, &cfg).unwrap();
        let back = integrate_unperturbed_reversed(&sys, &fwd.final_point().unwrap(), 3.0, &cfg).unwrap();
        assert!((back.final_point().unwrap() - x0).norm() < 1e-6);
    }

    #[test]
    fn unperturbed_flow_conserves_both_integrals() {
        let sys = canonical();
        let cfg = IntegratorConfig::default().with_step(0.02);
        let tr = integrate_unperturbed(&sys, &sys.base_point, 20.0, &cfg).unwrap();
        let g0 = sys.g.value(&sys.base_point);
        for s in &tr.samples {
            let x = Vec3::from(s.x);
            assert!((sys.f.value(&x) - 0.5).abs() <= 1e-9);
            assert!((s.g - g0).abs() < 1e-7);
        }
    }

    #[test]
    fn delta_zero_sde_is_bitwise_slow_flow() {
        let sys = canonical().with_epsilon(1e-2).with_delta(0.0);
        let cfg = IntegratorConfig::default();
        let a = integrate_slow(&sys, &sys.base_point, 0.2, &cfg, Watch::none()).unwrap();
        let mut rng = stream_rng(1, 0);
        let b = integrate_sde(&sys, &sys.base_point, 0.2, &cfg, Watch::none(), &mut rng).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn sde_is_reproducible_and_conserves_f() {
        let sys = canonical().with_epsilon(1e-2).with_delta(0.3);
        let cfg = IntegratorConfig::stochastic();
        let run = |seed| {
            let mut rng = stream_rng(seed, 3);
            integrate_sde(&sys, &sys.base_point, 0.5, &cfg, Watch::none(), &mut rng).unwrap()
        };
        let (a, b) = (run(7), run(7));
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, run(8).samples);
        for s in &a.samples {
            assert!((sys.f.value(&Vec3::from(s.x)) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn friction_decreases_g_on_average() {
        let sys = canonical().with_epsilon(1e-3);
        let cfg = IntegratorConfig::default();
        let tr = integrate_slow(&sys, &sys.base_point, 0.5, &cfg, Watch::none()).unwrap();
        let first = tr.samples.first().unwrap().g;
        let last = tr.samples.last().unwrap().g;
        assert!(last < first - 0.1);
        // monotone up to O(ε) wiggles
        let mut max_seen = f64::NEG_INFINITY;
        for w in tr.samples.windows(200) {
            let g = w[w.len() - 1].g;
            if max_seen.is_finite() {
                assert!(g <= max_seen + 1e-3);
            }
            max_seen = max_seen.max(w[0].g);
        }
    }

    #[test]
    fn pure_noise_itô_drift_on_sphere() {
        // F = |x|²/2, no fast field, no perturbation: E[ΔX] = -δ² x Δt on the unit sphere
        let mut sys = canonical().with_delta(1.0).with_epsilon(1.0);
        sys.g = SmoothField::Constant { value: 0.0 };
        sys.perturbation = Perturbation::Damping { b: VectorFieldSpec::Zero };
        let cfg = IntegratorConfig {
            step: 1e-2,
            ..IntegratorConfig::stochastic()
        };
        let stepper = Stepper::new(&sys, &cfg);
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let mut radial = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            )
            .normalize();
            let y = stepper.step_sde(&x, &mut rng).unwrap();
            radial.push((y - x).dot(&x) / cfg.step);
        }
        let (m, se) = crate::numerics::stats::mean_se(&radial);
        assert!((m + 1.0).abs() < 3.0 * se + 0.02, "drift {m} ± {se}");
    }

    #[test]
    fn neighborhood_samples_are_on_surface_and_within_radius() {
        let sys = canonical();
        let mut rng = stream_rng(2, 0);
        for _ in 0..500 {
            let x = sample_uniform_neighborhood(&sys.f, 0.5, &sys.base_point, 0.05, &mut rng).unwrap();
            assert!((sys.f.value(&x) - 0.5).abs() < 1e-10);
            assert!(surface_distance(&sys.f, 0.5, &sys.base_point, &x).unwrap() < 0.05);
        }
        let x = sample_uniform_neighborhood(&sys.f, 0.5, &sys.base_point, 0.0, &mut rng).unwrap();
        assert_eq!(x, sys.base_point);
    }

    #[test]
    fn great_circle_distance() {
        let f = SmoothField::half_norm_squared();
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 1.0, 0.0);
        let d = surface_distance(&f, 0.5, &a, &b).unwrap();
        assert!((d - std::f64::consts::FRAC_PI_2).abs() < 1e-2);
        let c = Vec3::new(0.1f64.cos(), 0.1f64.sin(), 0.0);
        assert!((surface_distance(&f, 0.5, &a, &c).unwrap() - 0.1).abs() < 1e-6);
    }
}
