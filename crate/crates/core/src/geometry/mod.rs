//! Pointwise field algebra: scalar fields, vector fields, noise maps and the
//! problem instance they assemble into.

mod expr;
mod field;
mod noise;
mod system;
mod vector;

pub use expr::Expression;
pub use field::{fd_gradient, wrap_angle, Monomial, SmoothField, FD_STEP, FD_STEP_HESSIAN};
pub use noise::NoiseMap;
pub use system::{fast_field_jacobian, Perturbation, SurfaceChart, SurfaceSystem, BOUNDARY_OFFSET};
pub use vector::{curl_from_jacobian, VectorFieldSpec};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Matrix of `v ×`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Orthonormal pair spanning the plane orthogonal to `normal`.
pub fn tangent_basis(normal: &Vec3) -> (Vec3, Vec3) {
    let n = normal.normalize();
    let trial = if n[0].abs() < 0.6 {
        Vec3::x()
    } else if n[1].abs() < 0.6 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = (trial - n * n.dot(&trial)).normalize();
    (e1, n.cross(&e1))
}

/// `∇F × ∇G`
pub fn fast_field(sys: &SurfaceSystem, x: &Vec3) -> Vec3 {
    sys.f.gradient(x).cross(&sys.g.gradient(x))
}

/// The slow perturbation field in either form.
pub fn perturbation_field(sys: &SurfaceSystem, x: &Vec3) -> Vec3 {
    sys.perturbation.field(&sys.f, x)
}

/// `∇F × (∇F × b)`; requires a damping-form perturbation.
pub fn damping_field(sys: &SurfaceSystem, x: &Vec3) -> Result<Vec3> {
    match &sys.perturbation {
        Perturbation::Damping { .. } => Ok(sys.perturbation.field(&sys.f, x)),
        Perturbation::NormalCross { .. } => Err(Error::Config(
            "damping field requested for a normal-cross perturbation".into(),
        )),
    }
}

pub fn ito_correction(sys: &SurfaceSystem, x: &Vec3) -> Result<Vec3> {
    let noise = sys.noise.as_ref().ok_or(Error::Missing("noise map"))?;
    Ok(noise.ito_correction(&sys.f, x))
}

/// Fourth-order centered-difference divergence of a vector field.
pub fn divergence_fd<V: Fn(&Vec3) -> Vec3>(v: V, x: &Vec3, h: f64) -> f64 {
    let mut div = 0.0;
    for i in 0..3 {
        let at = |s: f64| {
            let mut p = *x;
            p[i] += s * h;
            v(&p)[i]
        };
        div += (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
    }
    div
}

/// Fourth-order centered-difference curl of a vector field.
pub fn curl_fd<V: Fn(&Vec3) -> Vec3>(v: V, x: &Vec3, h: f64) -> Vec3 {
    let mut j = Mat3::zeros();
    for k in 0..3 {
        let at = |s: f64| {
            let mut p = *x;
            p[k] += s * h;
            v(&p)
        };
        let col = ((at(1.0) - at(-1.0)) * 8.0 - (at(2.0) - at(-2.0))) / (12.0 * h);
        j.set_column(k, &col);
    }
    curl_from_jacobian(&j)
}

/// Numerical divergence of the fast field at `x`.
pub fn divergence_check(sys: &SurfaceSystem, x: &Vec3) -> f64 {
    divergence_fd(|p| fast_field(sys, p), x, 1e-3)
}

/// Magnitude used to normalize [`divergence_check`].
pub fn divergence_scale(sys: &SurfaceSystem, x: &Vec3) -> f64 {
    let (gf, gg) = (sys.f.gradient(x), sys.g.gradient(x));
    (gf.norm() * sys.g.hessian(x).norm() + gg.norm() * sys.f.hessian(x).norm()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn on_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
    }

    #[test]
    fn fast_field_hand_values() {
        let sys = SurfaceSystem::sphere_double_well(0.0);
        assert_eq!(fast_field(&sys, &Vec3::new(0.0, 0.0, -1.0)), Vec3::zeros());
        assert_eq!(fast_field(&sys, &Vec3::new(0.0, 1.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(
            damping_field(&sys, &Vec3::new(0.0, 1.0, 0.0)).unwrap(),
            Vec3::new(0.0, 0.0, -1.0)
        );
    }

    #[test]
    fn fast_field_is_orthogonal_to_both_gradients() {
        let sys = SurfaceSystem::sphere_double_well(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = on_sphere(&mut rng) * rng.random_range(0.5..1.5);
            let v = fast_field(&sys, &x);
            let (gf, gg) = (sys.f.gradient(&x), sys.g.gradient(&x));
            let scale = gf.norm() * gg.norm() * v.norm().max(1e-300);
            assert!(v.dot(&gf).abs() <= 1e-12 * scale.max(1.0));
            assert!(v.dot(&gg).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn damping_identity_and_friction_sign() {
        let mut sys = SurfaceSystem::sphere_double_well(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let arbitrary_b = VectorFieldSpec::Sum {
            terms: vec![
                VectorFieldSpec::Linear {
                    matrix: [[0.3, -1.0, 0.0], [0.2, 0.0, 1.1], [0.0, 0.5, -0.4]],
                    offset: [0.1, 0.2, 0.3],
                },
                VectorFieldSpec::gradient_of(SmoothField::polynomial(&[(0.7, [1, 2, 1]), (-0.2, [0, 3, 0])])),
            ],
        };
        for b in [VectorFieldSpec::gradient_of(sys.g.clone()), arbitrary_b] {
            sys.perturbation = Perturbation::Damping { b: b.clone() };
            for _ in 0..1000 {
                let x = on_sphere(&mut rng) * rng.random_range(0.5..1.5);
                let gf = sys.f.gradient(&x);
                let lhs = sys.g.gradient(&x).dot(&damping_field(&sys, &x).unwrap());
                let rhs = -(gf.cross(&b.value(&x))).dot(&fast_field(&sys, &x));
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            }
        }
        // b = ∇G: (∇F×b)·(∇F×∇G) is a square
        sys = SurfaceSystem::sphere_double_well(0.1);
        for _ in 0..1000 {
            let x = on_sphere(&mut rng);
            let v = fast_field(&sys, &x);
            let gf = sys.f.gradient(&x);
            let b = sys.g.gradient(&x);
            assert!(gf.cross(&b).dot(&v) >= 0.0);
        }
    }

    #[test]
    fn divergence_of_fast_field_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let canonical = SurfaceSystem::sphere_double_well(0.0);
        let mut random_poly = canonical.clone();
        for _ in 0..20 {
            let mut terms = Vec::new();
            for _ in 0..6 {
                let p = [rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..3)];
                terms.push((rng.random_range(-1.0..1.0), p));
            }
            random_poly.f = SmoothField::polynomial(&terms[..3]);
            random_poly.g = SmoothField::polynomial(&terms[3..]);
            for sys in [&canonical, &random_poly] {
                for _ in 0..50 {
                    let x = on_sphere(&mut rng) * rng.random_range(0.5..1.2);
                    let div = divergence_check(sys, &x);
                    assert!(div.abs() < 1e-8 * divergence_scale(sys, &x), "div = {div:e}");
                }
            }
        }
    }

    #[test]
    fn closed_form_on_torus_is_curl_free() {
        let d = VectorFieldSpec::Sum {
            terms: vec![
                VectorFieldSpec::gradient_of(SmoothField::Gaussian {
                    center: [0.0, 1.0, 0.5],
                    amplitude: -0.8,
                    width: 0.3,
                }),
                VectorFieldSpec::gradient_of(SmoothField::ToroidalAngle { reference: 0.0 }).scaled(1.618),
            ],
        };
        use std::f64::consts::TAU;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let (phi, th): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            let rho = 1.0 + 0.5 * f64::cos(th);
            let x = Vec3::new(rho * phi.cos(), rho * phi.sin(), 0.5 * th.sin());
            assert!(curl_fd(|p| d.value(p), &x, 1e-3).norm() < 1e-8);
        }
    }

    #[test]
    fn mirror_equivariance_breaks_for_asymmetric_system() {
        let mirror = |x: &Vec3| Vec3::new(-x[0], x[1], x[2]);
        let x = Vec3::new(0.6, 0.3, -0.74).normalize();
        for (beta, symmetric) in [(0.0, true), (0.1, false)] {
            let sys = SurfaceSystem::sphere_double_well(beta);
            let a = sys.g.value(&x);
            let b = sys.g.value(&mirror(&x));
            assert_eq!((a - b).abs() < 1e-15, symmetric);
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = on_sphere(&mut rng);
            let (a, b) = tangent_basis(&n);
            assert!(a.dot(&n).abs() < 1e-14 && b.dot(&n).abs() < 1e-14 && a.dot(&b).abs() < 1e-14);
            assert!((a.norm() - 1.0).abs() < 1e-14 && (b.norm() - 1.0).abs() < 1e-14);
        }
    }
}
