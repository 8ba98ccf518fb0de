//! Least-squares helpers shared by the verification routines.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual.
    pub max_residual: f64,
}

/// Ordinary least squares `y ≈ slope x + intercept`. Needs at least two points.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Some(LineFit { slope, intercept, max_residual })
}

/// Fits `v_n ≤ C r^n` on the positive entries: returns `(C, r, max_residual)`
/// with `C` raised so the bound holds at every fitted point.
pub fn exponential_bound(ns: &[f64], vs: &[f64]) -> Option<(f64, f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(vs)
        .filter(|(_, v)| **v > 0.0)
        .map(|(n, v)| (*n, v.ln()))
        .unzip();
    let line = ols(&xs, &ys)?;
    let log_c = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - line.slope * x)
        .fold(f64::NEG_INFINITY, f64::max);
    Some((log_c.exp(), line.slope.exp(), line.max_residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = ols(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!(f.max_residual < 1e-14);
    }

    #[test]
    fn geometric_bound() {
        let ns: Vec<f64> = (1..10).map(f64::from).collect();
        let vs: Vec<f64> = ns.iter().map(|n| 3.0 * 0.5f64.powf(*n)).collect();
        let (c, r, res) = exponential_bound(&ns, &vs).unwrap();
        assert!((c - 3.0).abs() < 1e-12 && (r - 0.5).abs() < 1e-14 && res < 1e-12);
    }
}
