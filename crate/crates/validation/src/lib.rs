//! Closed-form values the acceptance run compares against. Nothing here calls the
//! library under test.

/// Klein–Gordon branches `±sqrt(1 + k^2)`.
pub fn kg_omega(sign: f64, k: f64) -> f64 {
    sign * (1.0 + k * k).sqrt()
}

/// Klein–Gordon group velocity `±k / sqrt(1 + k^2)`.
pub fn kg_velocity(sign: f64, k: f64) -> f64 {
    sign * k / (1.0 + k * k).sqrt()
}

/// `|omega_n(m k0) + m omega0|` minimised over both branches for a carrier on the
/// lower branch (`omega0 = sqrt(1 + k0^2)`); the carrier pair itself is skipped.
pub fn kg_harmonic_gap(k0: f64, m: i32) -> f64 {
    let w0 = (1.0 + k0 * k0).sqrt();
    [-1.0, 1.0]
        .iter()
        .filter(|&&s| !(s < 0.0 && m.abs() == 1))
        .map(|&s| (kg_omega(s, m as f64 * k0) + m as f64 * w0).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Far-field limit of the three-wave gap on matched branches: `|omega0 - k0|`.
pub fn kg_three_wave_limit(k0: f64) -> f64 {
    ((1.0 + k0 * k0).sqrt() - k0.abs()).abs()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_slope(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(a, b)| (a.ln(), b.ln())).unzip();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_sqrt3() {
        let k0 = 3f64.sqrt();
        assert!((kg_harmonic_gap(k0, 2) - (13f64.sqrt() - 4.0).abs()).abs() < 1e-14);
        assert_eq!(kg_harmonic_gap(k0, 0), 1.0);
        assert!((kg_harmonic_gap(k0, 1) - 4.0).abs() < 1e-14);
        assert!((kg_three_wave_limit(k0) - (2.0 - 3f64.sqrt())).abs() < 1e-15);
        assert!((kg_velocity(1.0, k0) - kg_velocity(-1.0, k0) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn slope_of_a_power_law() {
        assert!((log_slope(&[(0.1, 1e-2), (0.05, 2.5e-3), (0.025, 6.25e-4)]) - 2.0).abs() < 1e-12);
    }
}
