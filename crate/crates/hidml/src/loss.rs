//! Smoothed hinge loss, its derivative, and its convex conjugate.
//!
//! The loss is zero past the margin, linear deep inside it, and quadratic in
//! a transition band of width `gamma`, so it is continuously differentiable
//! everywhere. The conjugate feeds the dual diagnostics in [`crate::solver`].

use crate::error::{Error, Result};

/// Smoothing width of the hinge, `0 < gamma <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothParams {
    pub gamma: f64,
}

impl SmoothParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must be in (0, 1], got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

/// Loss at margin value `x`:
/// `0` for `x > 1`, `1 - x - gamma/2` for `x < 1 - gamma`,
/// `(1 - x)^2 / (2 gamma)` in between.
pub fn smoothed_hinge(x: f64, p: SmoothParams) -> f64 {
    let g = p.gamma;
    if x > 1.0 {
        0.0
    } else if x < 1.0 - g {
        1.0 - x - g / 2.0
    } else {
        let t = 1.0 - x;
        t * t / (2.0 * g)
    }
}

/// Derivative of [`smoothed_hinge`] in `x`; always in `[-1, 0]`.
pub fn smoothed_hinge_grad(x: f64, p: SmoothParams) -> f64 {
    let g = p.gamma;
    if x > 1.0 {
        0.0
    } else if x < 1.0 - g {
        -1.0
    } else {
        -(1.0 - x) / g
    }
}

/// Convex conjugate `l*(a) = a + (gamma/2) a^2`, finite only on `[-1, 0]`.
pub fn smoothed_hinge_conjugate(a: f64, p: SmoothParams) -> Result<f64> {
    if !(-1.0..=0.0).contains(&a) {
        return Err(Error::Config(format!(
            "conjugate argument must lie in [-1, 0], got {a}"
        )));
    }
    Ok(a + 0.5 * p.gamma * a * a)
}
