use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::SaddleData;
use crate::error::{Error, Result};
use crate::flow::stream_rng;

/// One leg of a star graph with constant coefficients, in the outward coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarEdge {
    pub edge: usize,
    pub beta: f64,
    pub period: f64,
    /// Outward drift per unit time.
    pub drift: f64,
}

/// Constant-coefficient model of a vertex neighborhood of radius `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarGraph {
    pub legs: Vec<StarEdge>,
    pub radius: f64,
}

impl StarGraph {
    /// Legs with the separatrix weights of a saddle, unit period and no drift.
    pub fn from_saddle(s: &SaddleData, radius: f64) -> Self {
        Self {
            legs: s
                .incident
                .iter()
                .map(|&(k, _)| StarEdge {
                    edge: k,
                    beta: s.beta[&k],
                    period: 1.0,
                    drift: 0.0,
                })
                .collect(),
            radius,
        }
    }

    pub fn q(&self) -> Vec<f64> {
        let total: f64 = self.legs.iter().map(|l| l.beta).sum();
        self.legs.iter().map(|l| l.beta / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitStudy {
    pub inner: f64,
    pub n: usize,
    /// Exit counts through the outer radius, per leg.
    pub counts: Vec<usize>,
    pub q: Vec<f64>,
    pub mean_time: f64,
    /// Number of applications of the vertex rule.
    pub passages: usize,
}

impl ExitStudy {
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }
}

/// Starts `n` walkers at the vertex and records the leg through which each leaves
/// the outer radius; inside `inner` the vertex exit law is applied.
pub fn exit_study(star: &StarGraph, delta: f64, inner: f64, n: usize, seed: u64) -> Result<ExitStudy> {
    if !(inner > 0.0 && inner < star.radius) {
        return Err(Error::Config(format!("inner radius {inner} must lie in (0, {})", star.radius)));
    }
    let q = star.q();
    let d2 = delta * delta;
    let s2: Vec<f64> = star.legs.iter().map(|l| d2 * l.beta / l.period).collect();
    let c = 0.05;
    let runs: Vec<(usize, f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut t = 0.0;
            let mut passages = 0;
            let mut leg = 0;
            let mut x = 0.0;
            loop {
                if x < inner {
                    passages += 1;
                    let u: f64 = rng.random();
                    let r = x.max(0.0) / inner;
                    let mut acc = 0.0;
                    let mut pick = q.len() - 1;
                    for (j, qj) in q.iter().enumerate() {
                        acc += qj * (1.0 - r) + if j == leg { r } else { 0.0 };
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    leg = pick;
                    x = inner;
                }
                let d = (x - inner).max(0.25 * inner).min(star.radius - x + 0.25 * inner);
                let mut dt = c * d * d / s2[leg];
                let m = star.legs[leg].drift;
                if m != 0.0 {
                    dt = dt.min(c.sqrt() * d / m.abs());
                }
                let z: f64 = rng.sample(StandardNormal);
                x += m * dt + (s2[leg] * dt).sqrt() * z;
                t += dt;
                if x >= star.radius {
                    return (leg, t, passages);
                }
            }
        })
        .collect();
    let mut counts = vec![0; star.legs.len()];
    for r in &runs {
        counts[r.0] += 1;
    }
    Ok(ExitStudy {
        inner,
        n,
        counts,
        q,
        mean_time: runs.iter().map(|r| r.1).sum::<f64>() / n as f64,
        passages: runs.iter().map(|r| r.2).sum(),
    })
}

/// Exit probabilities through the outer radius, started at the vertex, from a
/// finite-difference solution of the gluing boundary value problem.
pub fn bvp_exit_probabilities(star: &StarGraph, delta: f64, n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 3 {
        return Err(Error::Config("need at least three grid intervals".into()));
    }
    let legs = star.legs.len();
    let m = n_grid - 1;
    let dx = star.radius / n_grid as f64;
    let size = 1 + legs * m;
    let idx = |leg: usize, node: usize| if node == 0 { 0 } else { 1 + leg * m + (node - 1) };
    let mut a = DMatrix::<f64>::zeros(size, size);
    // edge coefficients of the last interior node, which multiply the boundary value
    let mut outer = vec![0.0; legs];
    for (i, l) in star.legs.iter().enumerate() {
        // gluing row: Σ β_i u_i'(0) = 0 with a second-order one-sided difference
        a[(0, 0)] += -3.0 * l.beta;
        a[(0, idx(i, 1))] += 4.0 * l.beta;
        a[(0, idx(i, 2))] += -l.beta;
        let diff = 0.5 * delta * delta * l.beta / l.period;
        let lo = diff / (dx * dx) - l.drift / (2.0 * dx);
        let hi = diff / (dx * dx) + l.drift / (2.0 * dx);
        for node in 1..=m {
            let row = idx(i, node);
            a[(row, row)] = -2.0 * diff / (dx * dx);
            a[(row, idx(i, node - 1))] = lo;
            if node < m {
                a[(row, idx(i, node + 1))] = hi;
            }
        }
        outer[i] = hi;
    }
    let lu = a.lu();
    let mut out = Vec::with_capacity(legs);
    for target in 0..legs {
        let mut b = DVector::<f64>::zeros(size);
        b[idx(target, m)] = -outer[target];
        let u = lu.solve(&b).ok_or_else(|| Error::Config("singular gluing system".into()))?;
        out.push(u[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stats::binomial_z;

    fn star(drifts: [f64; 3]) -> StarGraph {
        let betas = [0.5, 0.2, 0.3];
        StarGraph {
            legs: (0..3)
                .map(|i| StarEdge {
                    edge: i + 1,
                    beta: betas[i],
                    period: 1.0 + i as f64,
                    drift: drifts[i],
                })
                .collect(),
            radius: 0.05,
        }
    }

    /// Closed form: on each leg `u = c + k∫₀ˣ e^{-r s} ds` with `r = m/a`, glued by `Σ β k = 0`.
    fn exact(s: &StarGraph, delta: f64, target: usize) -> f64 {
        let h = s.radius;
        let (mut num, mut den) = (0.0, 0.0);
        for (i, l) in s.legs.iter().enumerate() {
            let a = 0.5 * delta * delta * l.beta / l.period;
            let r = l.drift / a;
            let phi = if r == 0.0 { h } else { (1.0 - (-r * h).exp()) / r };
            let end = if i == target { 1.0 } else { 0.0 };
            num += l.beta * end / phi;
            den += l.beta / phi;
        }
        num / den
    }

    #[test]
    fn bvp_matches_closed_form_and_beta_ratios() {
        let s = star([0.0; 3]);
        let p = bvp_exit_probabilities(&s, 0.3, 200).unwrap();
        for (pi, qi) in p.iter().zip(s.q()) {
            assert!((pi - qi).abs() < 1e-10);
        }
        let s = star([0.4, -0.3, 0.1]);
        let p = bvp_exit_probabilities(&s, 0.3, 400).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (j, pj) in p.iter().enumerate() {
            assert!((pj - exact(&s, 0.3, j)).abs() < 1e-5, "{pj} {}", exact(&s, 0.3, j));
        }
    }

    #[test]
    fn simulated_exit_law_is_inner_radius_independent() {
        let s = star([0.0; 3]);
        for inner in [1e-2, 5e-3, 2.5e-3] {
            let st = exit_study(&s, 0.3, inner, 4000, 9).unwrap();
            for (c, q) in st.counts.iter().zip(&st.q) {
                assert!(binomial_z(*c, st.n, *q).abs() < 3.5, "{inner} {:?}", st.counts);
            }
            assert!(st.passages >= st.n);
        }
    }

    #[test]
    fn simulated_exit_law_follows_the_drifted_bvp() {
        let s = star([0.05, -0.04, 0.02]);
        let p = bvp_exit_probabilities(&s, 0.3, 400).unwrap();
        let st = exit_study(&s, 0.3, 1e-3, 4000, 10).unwrap();
        for (c, pj) in st.counts.iter().zip(&p) {
            assert!(binomial_z(*c, st.n, *pj).abs() < 3.5, "{:?} {p:?}", st.counts);
        }
    }
}
