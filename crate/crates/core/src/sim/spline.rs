use rand_distr::{Distribution, Normal};

use super::V_MAX;
use crate::design::DesignGraph;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Cubic spline through `knots` placed evenly on `[0, length - 1]`, with zero
/// slope at both ends, sampled at every integer index.
pub fn clamped_cubic(knots: &[f64], length: usize) -> Result<Vec<f64>> {
    let n = knots.len();
    if n < 2 {
        return Err(Error::Config(format!("spline needs at least 2 knots, got {n}")));
    }
    if length < 2 {
        return Err(Error::Config(format!("spline needs at least 2 samples, got {length}")));
    }
    let h = (length - 1) as f64 / (n - 1) as f64;

    // Tridiagonal system for the second derivatives.
    let mut sub = vec![h; n];
    let mut diag = vec![4.0 * h; n];
    let mut sup = vec![h; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0 * h;
    diag[n - 1] = 2.0 * h;
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    rhs[0] = 6.0 * (knots[1] - knots[0]) / h;
    rhs[n - 1] = -6.0 * (knots[n - 1] - knots[n - 2]) / h;
    for i in 1..n - 1 {
        rhs[i] = 6.0 * (knots[i + 1] - 2.0 * knots[i] + knots[i - 1]) / h;
    }
    // Thomas algorithm
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
    }

    Ok((0..length)
        .map(|t| {
            let t = t as f64;
            let i = ((t / h).floor() as usize).min(n - 2);
            let (t0, t1) = (i as f64 * h, (i + 1) as f64 * h);
            let a = (t1 - t) / h;
            let b = (t - t0) / h;
            a * knots[i] + b * knots[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
        })
        .collect())
}

/// Smooth random joint-velocity commands: per DoF, `n_knots` values from
/// `Normal(0, sigma)` joined by a clamped cubic, clipped to the action bound.
/// Returns `length` action vectors.
pub fn random_spline_actions(design: &DesignGraph, rng: &mut Rng, n_knots: usize, length: usize, sigma: f64) -> Result<Vec<Vec<f64>>> {
    let dof = design.dims().action;
    let mut out = vec![vec![0.0; dof]; length];
    #[allow(clippy::needless_range_loop)]
    for j in 0..dof {
        let knots: Vec<f64> = if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            (0..n_knots).map(|_| n.sample(rng)).collect()
        } else {
            vec![0.0; n_knots]
        };
        let curve = clamped_cubic(&knots, length)?;
        for (t, v) in curve.into_iter().enumerate() {
            out[t][j] = v.clamp(-V_MAX, V_MAX);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::parse_design;
    use crate::rng::stream;

    #[test]
    fn reproduces_constants() {
        let c = clamped_cubic(&[1.7; 10], 100).unwrap();
        assert!(c.iter().all(|v| (v - 1.7).abs() < 1e-12));
    }

    #[test]
    fn passes_through_knots() {
        let knots = [0.3, -1.0, 2.0, 0.5, 0.0, 1.1, -0.7, 0.2, 0.9, -2.0];
        let c = clamped_cubic(&knots, 100).unwrap();
        // knots land on integer indices 0, 11, 22, ..., 99
        for (k, v) in knots.iter().enumerate() {
            assert!((c[k * 11] - v).abs() < 1e-12, "knot {k}");
        }
    }

    #[test]
    fn zero_end_slopes() {
        // Densely sampled curve: slope near the ends approaches zero.
        let c = clamped_cubic(&[0.0, 5.0, -3.0], 10_001).unwrap();
        assert!((c[1] - c[0]).abs() < 1e-6);
        assert!((c[10_000] - c[9_999]).abs() < 1e-6);
    }

    #[test]
    fn sigma_zero_gives_zero_actions() {
        let d = parse_design("car4w").unwrap();
        let a = random_spline_actions(&d, &mut stream(0, 0), 10, 100, 0.0).unwrap();
        assert_eq!(a.len(), 100);
        assert!(a.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn bounded_and_rejects_too_few_knots() {
        let d = parse_design("hex6l").unwrap();
        let a = random_spline_actions(&d, &mut stream(1, 0), 10, 100, 5.0).unwrap();
        assert!(a.iter().flatten().all(|v| v.abs() <= V_MAX));
        assert!(random_spline_actions(&d, &mut stream(1, 0), 1, 100, 1.0).is_err());
    }
}
