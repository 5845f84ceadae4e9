//! Parameterizations of the working surface `{F = z}`, seeding grids and
//! area quadrature over regions cut out by a level function.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{SmoothField, SurfaceChart, SurfaceSystem, Vec3};

const TAU: f64 = std::f64::consts::TAU;

/// Ray charts of a star-shaped surface (cube-sphere faces) or a tube.
#[derive(Debug, Clone, Copy)]
pub struct Atlas<'a> {
    pub f: &'a SmoothField,
    pub level: f64,
    pub chart: &'a SurfaceChart,
}

/// Sampled chart point.
#[derive(Debug, Clone, Copy)]
pub struct ChartPoint {
    pub x: Vec3,
    /// Area element `|∂x/∂u × ∂x/∂v|`.
    pub jac: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    /// Cells per side of each patch at the coarsest level.
    pub base: usize,
    /// Maximum number of bisections of a cut cell.
    pub depth: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { base: 24, depth: 6 }
    }
}

const FACES: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
    ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
    ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
];

impl<'a> Atlas<'a> {
    pub fn of(sys: &'a SurfaceSystem) -> Self {
        Self {
            f: &sys.f,
            level: sys.level,
            chart: &sys.chart,
        }
    }

    pub fn patches(&self) -> usize {
        match self.chart {
            SurfaceChart::Star { .. } => 6,
            SurfaceChart::Torus { .. } => 1,
        }
    }

    /// Parameter rectangle `(u0, u1, v0, v1)` of every patch.
    pub fn domain(&self) -> (f64, f64, f64, f64) {
        match self.chart {
            SurfaceChart::Star { .. } => (-1.0, 1.0, -1.0, 1.0),
            SurfaceChart::Torus { .. } => (0.0, TAU, 0.0, TAU),
        }
    }

    /// Solves `F(c + ρw) = z` for the first crossing `ρ > 0`.
    fn ray_root(&self, c: &Vec3, w: &Vec3) -> Result<f64> {
        let phi = |r: f64| self.f.value(&(c + w * r)) - self.level;
        if phi(0.0) >= 0.0 {
            return Err(Error::Config("chart center is not inside the level surface".into()));
        }
        let mut hi = 0.25;
        let mut lo = 0.0;
        while phi(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Config("ray does not meet the level surface".into()));
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..200 {
            let v = phi(r);
            if v.abs() <= 1e-15 * (1.0 + self.level.abs()) {
                return Ok(r);
            }
            if v < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let d = self.f.gradient(&(c + w * r)).dot(w);
            let newton = r - v / d;
            r = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * hi {
                return Ok(r);
            }
        }
        Ok(r)
    }

    /// Surface point and area element at parameters `(u, v)` of `patch`.
    pub fn map(&self, patch: usize, u: f64, v: f64) -> Result<ChartPoint> {
        match self.chart {
            SurfaceChart::Star { center } => {
                let c = Vec3::from(*center);
                let (n, e1, e2) = FACES[patch];
                let (n, e1, e2) = (Vec3::from(n), Vec3::from(e1), Vec3::from(e2));
                let w = n + e1 * u + e2 * v;
                let rho = self.ray_root(&c, &w)?;
                let x = c + w * rho;
                let gf = self.f.gradient(&x);
                let den = gf.dot(&w);
                let xu = w * (-rho * gf.dot(&e1) / den) + e1 * rho;
                let xv = w * (-rho * gf.dot(&e2) / den) + e2 * rho;
                Ok(ChartPoint {
                    x,
                    jac: xu.cross(&xv).norm(),
                })
            }
            SurfaceChart::Torus { major_radius } => {
                let (phi, th) = (u, v);
                let (sp, cp) = phi.sin_cos();
                let (st, ct) = th.sin_cos();
                let c = Vec3::new(major_radius * cp, major_radius * sp, 0.0);
                let c_phi = Vec3::new(-major_radius * sp, major_radius * cp, 0.0);
                let e = Vec3::new(ct * cp, ct * sp, st);
                let e_phi = Vec3::new(-ct * sp, ct * cp, 0.0);
                let e_th = Vec3::new(-st * cp, -st * sp, ct);
                let rho = self.ray_root(&c, &e)?;
                let x = c + e * rho;
                let gf = self.f.gradient(&x);
                let den = gf.dot(&e);
                let rho_phi = -gf.dot(&(c_phi + e_phi * rho)) / den;
                let rho_th = -rho * gf.dot(&e_th) / den;
                let xu = c_phi + e * rho_phi + e_phi * rho;
                let xv = e * rho_th + e_th * rho;
                Ok(ChartPoint {
                    x,
                    jac: xu.cross(&xv).norm(),
                })
            }
        }
    }

    /// Cell-centered grid with `n × n` points per patch.
    pub fn seed_points(&self, n: usize) -> Result<Vec<Vec3>> {
        let (u0, u1, v0, v1) = self.domain();
        let mut out = Vec::with_capacity(self.patches() * n * n);
        for p in 0..self.patches() {
            for i in 0..n {
                for j in 0..n {
                    let u = u0 + (u1 - u0) * (i as f64 + 0.5) / n as f64;
                    let v = v0 + (v1 - v0) * (j as f64 + 0.5) / n as f64;
                    out.push(self.map(p, u, v)?.x);
                }
            }
        }
        Ok(out)
    }

    /// `∬ f dm` over the whole surface.
    pub fn integrate_surface<I>(&self, integrand: I, opts: QuadratureOptions) -> Result<f64>
    where
        I: Fn(&Vec3) -> f64 + Sync,
    {
        self.integrate_region(|_| -1.0, |_| true, integrand, opts)
    }

    /// `∬ f dm` over `{phi < 0}` intersected with the cells whose label is true.
    ///
    /// The label is evaluated once per uncut cell and once per clipped leaf piece,
    /// so it must be constant on connected components of `{phi < 0}`.
    pub fn integrate_region<P, L, I>(&self, phi: P, label: L, integrand: I, opts: QuadratureOptions) -> Result<f64>
    where
        P: Fn(&Vec3) -> f64 + Sync,
        L: Fn(&Vec3) -> bool + Sync,
        I: Fn(&Vec3) -> f64 + Sync,
    {
        let bins = self.integrate_binned(&phi, &label, &integrand, opts, 1, 1)?;
        Ok(bins.iter().sum())
    }

    /// As [`Self::integrate_region`], accumulated into an `nu × nv` grid of
    /// parameter bins per patch (row-major, patch-major).  `opts.base` must be
    /// a multiple of both bin counts.
    pub fn integrate_binned<P, L, I>(
        &self,
        phi: &P,
        label: &L,
        integrand: &I,
        opts: QuadratureOptions,
        nu: usize,
        nv: usize,
    ) -> Result<Vec<f64>>
    where
        P: Fn(&Vec3) -> f64 + Sync,
        L: Fn(&Vec3) -> bool + Sync,
        I: Fn(&Vec3) -> f64 + Sync,
    {
        assert!(opts.base % nu == 0 && opts.base % nv == 0, "bins must divide the base grid");
        let (u0, u1, v0, v1) = self.domain();
        let (du, dv) = ((u1 - u0) / opts.base as f64, (v1 - v0) / opts.base as f64);
        let cells: Vec<(usize, usize, usize)> = (0..self.patches())
            .flat_map(|p| (0..opts.base).flat_map(move |i| (0..opts.base).map(move |j| (p, i, j))))
            .collect();
        let parts: Vec<Result<f64>> = cells
            .par_iter()
            .map(|&(p, i, j)| {
                let rect = Rect {
                    u0: u0 + du * i as f64,
                    v0: v0 + dv * j as f64,
                    du,
                    dv,
                };
                let cell = Cell {
                    atlas: self,
                    patch: p,
                    phi,
                    label,
                    integrand,
                    depth: opts.depth,
                };
                cell.process(rect, 0)
            })
            .collect();
        let mut bins = vec![0.0; self.patches() * nu * nv];
        for (&(p, i, j), part) in cells.iter().zip(parts) {
            let bi = i / (opts.base / nu);
            let bj = j / (opts.base / nv);
            bins[p * nu * nv + bi * nv + bj] += part?;
        }
        Ok(bins)
    }
}

#[derive(Clone, Copy)]
struct Rect {
    u0: f64,
    v0: f64,
    du: f64,
    dv: f64,
}

struct Cell<'c, 'a, P, L, I> {
    atlas: &'c Atlas<'a>,
    patch: usize,
    phi: &'c P,
    label: &'c L,
    integrand: &'c I,
    depth: usize,
}

const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

impl<P, L, I> Cell<'_, '_, P, L, I>
where
    P: Fn(&Vec3) -> f64,
    L: Fn(&Vec3) -> bool,
    I: Fn(&Vec3) -> f64,
{
    fn at(&self, r: &Rect, s: f64, t: f64) -> Result<ChartPoint> {
        self.atlas.map(self.patch, r.u0 + s * r.du, r.v0 + t * r.dv)
    }

    fn process(&self, r: Rect, level: usize) -> Result<f64> {
        const N: usize = 4;
        let mut neg = 0;
        let mut pos = 0;
        let mut corner = [0.0; 4];
        for a in 0..N {
            for b in 0..N {
                let s = a as f64 / (N - 1) as f64;
                let t = b as f64 / (N - 1) as f64;
                let v = (self.phi)(&self.at(&r, s, t)?.x);
                if v < 0.0 {
                    neg += 1;
                } else {
                    pos += 1;
                }
                match (a, b) {
                    (0, 0) => corner[0] = v,
                    (x, 0) if x == N - 1 => corner[1] = v,
                    (x, y) if x == N - 1 && y == N - 1 => corner[2] = v,
                    (0, y) if y == N - 1 => corner[3] = v,
                    _ => {}
                }
            }
        }
        if pos == 0 {
            let centre = self.at(&r, 0.5, 0.5)?;
            if !(self.label)(&centre.x) {
                return Ok(0.0);
            }
            return self.full(&r);
        }
        if neg == 0 {
            return Ok(0.0);
        }
        if level < self.depth {
            let (hu, hv) = (r.du / 2.0, r.dv / 2.0);
            let mut acc = 0.0;
            for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                acc += self.process(
                    Rect {
                        u0: r.u0 + a * hu,
                        v0: r.v0 + b * hv,
                        du: hu,
                        dv: hv,
                    },
                    level + 1,
                )?;
            }
            return Ok(acc);
        }
        self.leaf(&r, corner)
    }

    fn full(&self, r: &Rect) -> Result<f64> {
        let mut acc = 0.0;
        for (s, ws) in GAUSS3 {
            for (t, wt) in GAUSS3 {
                let p = self.at(r, s, t)?;
                acc += ws * wt * p.jac * (self.integrand)(&p.x);
            }
        }
        Ok(acc * r.du * r.dv)
    }

    fn leaf(&self, r: &Rect, corner: [f64; 4]) -> Result<f64> {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut acc = 0.0;
        for tri in [[0usize, 1, 2], [0, 2, 3]] {
            let poly = clip_triangle(
                [pts[tri[0]], pts[tri[1]], pts[tri[2]]],
                [corner[tri[0]], corner[tri[1]], corner[tri[2]]],
            );
            if poly.len() < 3 {
                continue;
            }
            let n = poly.len() as f64;
            let cx = poly.iter().map(|p| p.0).sum::<f64>() / n;
            let cy = poly.iter().map(|p| p.1).sum::<f64>() / n;
            if !(self.label)(&self.at(r, cx, cy)?.x) {
                continue;
            }
            for k in 1..poly.len() - 1 {
                let (a, b, c) = (poly[0], poly[k], poly[k + 1]);
                let area = 0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs();
                if area == 0.0 {
                    continue;
                }
                let mids = [
                    ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0),
                    ((b.0 + c.0) / 2.0, (b.1 + c.1) / 2.0),
                    ((a.0 + c.0) / 2.0, (a.1 + c.1) / 2.0),
                ];
                let mut s = 0.0;
                for m in mids {
                    let p = self.at(r, m.0, m.1)?;
                    s += p.jac * (self.integrand)(&p.x);
                }
                acc += area * s / 3.0;
            }
        }
        Ok(acc * r.du * r.dv)
    }
}

/// Part of a triangle where the linear interpolant of `vals` is negative.
fn clip_triangle(p: [(f64, f64); 3], vals: [f64; 3]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let j = (i + 1) % 3;
        let (a, b) = (vals[i], vals[j]);
        if a < 0.0 {
            out.push(p[i]);
        }
        if (a < 0.0) != (b < 0.0) {
            let t = a / (a - b);
            out.push((p[i].0 + t * (p[j].0 - p[i].0), p[i].1 + t * (p[j].1 - p[i].1)));
        }
    }
    out
}

/// Cell-centered sample of the working surface.
pub fn seed_points(sys: &SurfaceSystem, n: usize) -> Result<Vec<Vec3>> {
    Atlas::of(sys).seed_points(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sphere() -> SurfaceSystem {
        SurfaceSystem::sphere_double_well(0.0)
    }

    #[test]
    fn chart_points_lie_on_the_surface() {
        let sys = sphere();
        for x in seed_points(&sys, 7).unwrap() {
            assert!((sys.f.value(&x) - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_area_and_moments() {
        let sys = sphere();
        let atlas = Atlas::of(&sys);
        let opts = QuadratureOptions { base: 12, depth: 0 };
        let area = atlas.integrate_surface(|_| 1.0, opts).unwrap();
        assert!((area - 4.0 * PI).abs() < 1e-8, "{area}");
        let m2 = atlas.integrate_surface(|x| x[2] * x[2], opts).unwrap();
        assert!((m2 - 4.0 * PI / 3.0).abs() < 1e-8);
    }

    #[test]
    fn spherical_cap_by_clipping() {
        // cap {x₃ < -1/2}: area 2π(1 - 1/2)
        let sys = sphere();
        let atlas = Atlas::of(&sys);
        let area = atlas
            .integrate_region(|x| x[2] + 0.5, |_| true, |_| 1.0, QuadratureOptions::default())
            .unwrap();
        assert!((area - PI).abs() < 1e-6, "{area}");
        // label selects one hemisphere of the band {|x₃| < 1/2}
        let half = atlas
            .integrate_region(
                |x| x[2].abs() - 0.5,
                |x| x[0] > 0.0,
                |_| 1.0,
                QuadratureOptions::default(),
            )
            .unwrap();
        assert!((half - PI).abs() < 1e-2, "{half}");
    }

    #[test]
    fn torus_area() {
        let f = SmoothField::TorusTube { major_radius: 1.0 };
        let chart = SurfaceChart::Torus { major_radius: 1.0 };
        let atlas = Atlas {
            f: &f,
            level: 0.25,
            chart: &chart,
        };
        let area = atlas.integrate_surface(|_| 1.0, QuadratureOptions { base: 20, depth: 0 }).unwrap();
        assert!((area - 4.0 * PI * PI * 0.5).abs() < 1e-8, "{area}");
        let bins = atlas
            .integrate_binned(&|_: &Vec3| -1.0, &|_: &Vec3| true, &|_: &Vec3| 1.0, QuadratureOptions { base: 20, depth: 0 }, 4, 5)
            .unwrap();
        assert_eq!(bins.len(), 20);
        assert!((bins.iter().sum::<f64>() - area).abs() < 1e-10);
    }
}
