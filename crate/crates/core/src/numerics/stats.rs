//! Small statistical helpers for Monte Carlo gates.

use statrs::distribution::{ChiSquared, ContinuousCDF, Exp};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Binomial standard error of a fraction under success probability `p`.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// `(k/n - p) / σ`, with σ from the hypothesized `p`.
pub fn binomial_z(k: usize, n: usize, p: f64) -> f64 {
    let s = binomial_sigma(p, n);
    let d = k as f64 / n as f64 - p;
    if s == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY * d.signum()
        }
    } else {
        d / s
    }
}

/// Pearson statistic and upper-tail p-value; bins with zero expectation are dropped.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted_params: usize) -> (f64, f64) {
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (o, e) in observed.iter().zip(expected) {
        if *e > 0.0 {
            stat += (o - e).powi(2) / e;
            bins += 1;
        }
    }
    let dof = bins.saturating_sub(1 + fitted_params).max(1) as f64;
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

/// Asymptotic Kolmogorov tail probability with the Stephens small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against an exponential law with the given rate.
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let dist = Exp::new(rate).expect("positive rate");
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let c = dist.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    (d, kolmogorov_pvalue(d, xs.len()))
}

/// Ordinary least squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if xs.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        r2,
        slope_se,
    }
}

/// Pearson correlation coefficient.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp as ExpDist};

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chi_square_reference_value() {
        // 3 bins, dof 2: stat 2 -> p = e^{-1}
        let (stat, p) = chi_square(&[12.0, 10.0, 8.0], &[10.0, 10.0, 10.0], 0);
        assert!((stat - 0.8).abs() < 1e-12);
        assert!((p - (-0.4f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn kolmogorov_tail_reference() {
        // Q(1.3581) ≈ 0.05 asymptotically
        let n = 1_000_000;
        let d = 1.3581 / ((n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt());
        assert!((kolmogorov_pvalue(d, n) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_true_law_and_rejects_wrong_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = ExpDist::new(2.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| dist.sample(&mut rng)).collect();
        assert!(ks_exponential(&xs, 2.0).1 > 0.01);
        assert!(ks_exponential(&xs, 2.4).1 < 1e-6);
    }

    #[test]
    fn exact_line_fit() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-14 && (fit.intercept + 1.0).abs() < 1e-14);
        assert!((fit.r2 - 1.0).abs() < 1e-14);
        assert!((correlation(&xs, &ys) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn binomial_score() {
        assert_eq!(binomial_z(50, 100, 0.5), 0.0);
        assert!((binomial_z(65, 100, 0.5) - 3.0).abs() < 1e-12);
    }
}
