//! Log-domain probability arithmetic.
//!
//! All path-mass computations in this crate run in natural-log space so that
//! long low-probability paths do not underflow.

/// ln(0); the additive identity of log-domain accumulation.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// ln(exp(a) + exp(b)) without leaving log space.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// ln(Σ exp(x_i)) over an iterator, stable for mixed magnitudes.
pub fn log_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    xs.into_iter().fold(LOG_ZERO, log_add)
}

/// ln(w) mapping 0 to `LOG_ZERO` instead of panicking on the boundary.
#[inline]
pub fn ln_weight(w: f64) -> f64 {
    if w == 0.0 {
        LOG_ZERO
    } else {
        w.ln()
    }
}
