//! Small fitting helpers shared by the order-of-accuracy checks.

/// Least-squares slope of `(ln s, ln e)` pairs.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `ln err` against `ln scale` for raw (scale, err) samples.
pub fn order_slope(samples: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = samples.iter().map(|(s, e)| (s.ln(), e.ln())).collect();
    loglog_slope(&logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let s: Vec<(f64, f64)> = [0.1, 0.01, 0.001].iter().map(|&x: &f64| (x, 3.0 * x.powi(4))).collect();
        assert!((order_slope(&s) - 4.0).abs() < 1e-12);
    }
}
