//! Gauss–Legendre rules.

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed Gauss–Legendre rule mapped to `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Composite rule on the panels given by consecutive breakpoints.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], order: usize) -> f64 {
    let rule = gauss_legendre(order);
    breaks.windows(2).map(|w| integrate(&mut f, w[0], w[1], &rule)).sum()
}

/// Breakpoints `a, ..., b`: `uniform` panels in the middle and `levels`
/// panels shrinking by a factor 4 toward each end.
pub fn graded_breaks(a: f64, b: f64, levels: usize, uniform: usize) -> Vec<f64> {
    let len = b - a;
    let mut out = vec![a];
    for k in (0..=levels).rev() {
        out.push(a + len * 0.05 * 0.25f64.powi(k as i32));
    }
    for i in 1..uniform {
        out.push(a + len * (0.05 + 0.9 * i as f64 / uniform as f64));
    }
    for k in 0..=levels {
        out.push(b - len * 0.05 * 0.25f64.powi(k as i32));
    }
    out.push(b);
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out.dedup_by(|x, y| (*x - *y).abs() < 1e-15 * len.abs());
    out
}
