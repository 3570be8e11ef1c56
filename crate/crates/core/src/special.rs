//! Modified Bessel functions of the first kind and the standard normal CDF.
//!
//! The magnitude and phase densities need `I_n(x)` for arguments far beyond
//! the range where `I_n` itself is representable, so everything here works in
//! log space or with the exponentially scaled `e^{-x} I_n(x)`.

use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

/// Argument above which the asymptotic expansion replaces the power series.
fn asymptotic_cutoff(n: u32) -> f64 {
    30.0 + f64::from(n * n)
}

/// `ln I_n(x)` for integer order `n` and `x >= 0`. Returns `-inf` for
/// `I_n(0) = 0` when `n > 0`.
pub fn ln_bessel_i(n: u32, x: f64) -> f64 {
    assert!(x >= 0.0, "ln_bessel_i requires x >= 0, got {x}");
    if x == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x <= asymptotic_cutoff(n) {
        // sum_k (x/2)^(2k+n) / (k! (k+n)!) factored as leading term * S
        let q = 0.25 * x * x;
        let nf = f64::from(n);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + nf));
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        nf * (0.5 * x).ln() - ln_gamma(nf + 1.0) + sum.ln()
    } else {
        let mu = 4.0 * f64::from(n) * f64::from(n);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let kf = f64::from(k);
            let odd = 2.0 * kf - 1.0;
            term *= -(mu - odd * odd) / (kf * 8.0 * x);
            if term.abs() >= prev {
                break;
            }
            sum += term;
            prev = term.abs();
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
    }
}

/// Exponentially scaled `e^{-x} I_n(x)`, finite for all `x >= 0`.
pub fn bessel_i_scaled(n: u32, x: f64) -> f64 {
    (ln_bessel_i(n, x) - x).exp()
}

/// `I_n(x)`; overflows to infinity past roughly `x = 713`.
pub fn bessel_i(n: u32, x: f64) -> f64 {
    ln_bessel_i(n, x).exp()
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}
