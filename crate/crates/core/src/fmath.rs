//! Thin wrappers over [`libm`] for the transcendentals the crate needs.
//!
//! Routing every call through one module keeps the core `no_std` and makes
//! results bit-reproducible across platforms and build configurations
//! (`std` float intrinsics may differ by a ulp between targets).

pub const PI: f64 = core::f64::consts::PI;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
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
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// `sqrt(max(x, 0))`; guards PSD quantities whose floating-point value may
/// dip infinitesimally below zero.
#[inline]
pub fn sqrt_clamped(x: f64) -> f64 {
    if x > 0.0 {
        libm::sqrt(x)
    } else {
        0.0
    }
}
