//! Limits toward a logarithmically singular endpoint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fits `v(g) ≈ L + c₁·g·ln|g| + c₂·g` and returns `L`.
///
/// With three samples the fit is exact; the two-term fit on the two samples
/// closest to zero must agree with it to `rel_tol`.
pub fn log_limit(samples: &[(f64, f64)], rel_tol: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::ExtrapolationDivergence("need at least two samples".into()));
    }
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| b.0.abs().partial_cmp(&a.0.abs()).unwrap());
    let fit = |pts: &[(f64, f64)], cols: usize| -> Option<f64> {
        let a = DMatrix::from_fn(pts.len(), cols, |i, j| {
            let g = pts[i].0;
            match j {
                0 => 1.0,
                1 => g * g.abs().ln(),
                _ => g,
            }
        });
        let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
        let svd = a.svd(true, true);
        svd.solve(&b, 1e-14).ok().map(|c| c[0])
    };
    let cols = pts.len().min(3);
    let full = fit(&pts, cols).ok_or_else(|| Error::ExtrapolationDivergence("singular fit".into()))?;
    let tail = &pts[pts.len() - 2..];
    let coarse = fit(tail, 2).ok_or_else(|| Error::ExtrapolationDivergence("singular fit".into()))?;
    let scale = full.abs().max(pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max)).max(1e-300);
    if !full.is_finite() || (full - coarse).abs() > rel_tol * scale {
        return Err(Error::ExtrapolationDivergence(format!(
            "three-term limit {full:e} vs two-term limit {coarse:e}"
        )));
    }
    Ok(full)
}

/// Classical Richardson step for a quantity with error `c·h^order`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64, order: f64) -> f64 {
    let r = ratio.powf(order);
    (r * fine - coarse) / (r - 1.0)
}
