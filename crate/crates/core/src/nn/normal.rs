use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Arguments beyond this magnitude saturate the cdf to exactly 0 or 1.
pub const SATURATION: f64 = 38.0;

/// Standard normal density `exp(-x²/2) / √(2π)`.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal cdf via `erfc`, accurate to ~1e-16 absolute.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    if x <= -SATURATION {
        0.0
    } else if x >= SATURATION {
        1.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the density from 0 to `x`.
    fn simpson_cdf(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = std_normal_pdf(0.0) + std_normal_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * std_normal_pdf(i as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn reference_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.96) - 0.975_002_1).abs() < 1e-7);
        assert!((std_normal_cdf(1.96) - simpson_cdf(1.96)).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_quadrature_on_grid() {
        for i in 0..=32 {
            let x = -8.0 + 0.5 * i as f64;
            let want = simpson_cdf(x);
            assert!((std_normal_cdf(x) - want).abs() <= 1e-12, "x={x}");
        }
    }

    #[test]
    fn saturates() {
        assert_eq!(std_normal_cdf(-40.0), 0.0);
        assert_eq!(std_normal_cdf(40.0), 1.0);
        assert!(std_normal_cdf(-37.0) >= 0.0);
    }
}
