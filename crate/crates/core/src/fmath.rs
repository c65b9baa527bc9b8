//! Float math shims for `no_std` builds.
//!
//! `f64` transcendentals live in `std`, not `core`, so everything routes
//! through `libm` here. Call sites use these instead of the inherent methods.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn powi(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn absf(x: f32) -> f32 {
    libm::fabsf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powi_matches_repeated_multiplication() {
        assert_eq!(powi(0.65, 0), 1.0);
        assert_eq!(powi(0.65, 1), 0.65);
        assert_eq!(powi(0.65, 4), 0.65 * 0.65 * 0.65 * 0.65);
    }

    #[test]
    fn shims_agree_with_std() {
        for &x in &[0.3, 1.0, 2.5, 17.0] {
            assert!((exp(x) - f64::exp(x)).abs() < 1e-12);
            assert!((ln(x) - f64::ln(x)).abs() < 1e-12);
            assert!((sqrt(x) - f64::sqrt(x)).abs() < 1e-12);
        }
    }
}
