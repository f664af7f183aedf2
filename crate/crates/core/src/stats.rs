//! Small numeric helpers: log-space Gaussian tail probabilities and
//! interpolated quantiles.

/// log P(Z > z) for standard normal Z, stable far into the tail. Uses the
/// complementary error function up to moderate z and the asymptotic
/// expansion beyond, where erfc underflows.
pub fn log_normal_upper_tail(z: f64) -> f64 {
    const SWITCH: f64 = 10.0;
    if z < SWITCH {
        let p = 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
        return p.ln();
    }
    // φ(z)/z · (1 - 1/z² + 3/z⁴ - 15/z⁶) in log space.
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - z.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// Quantile by linear interpolation between order statistics. `level` in
/// [0, 1]; the input need not be sorted.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty());
    assert!((0.0..=1.0).contains(&level));
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = level * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
