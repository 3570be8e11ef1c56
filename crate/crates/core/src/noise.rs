//! Complex Gaussian k-space noise and the magnitude/phase distribution theory
//! used to calibrate and check it.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::signal::KSpaceFrame;
use crate::special::{bessel_i_scaled, ln_bessel_i, normal_cdf};

/// Name recorded in run metadata for the noise generator.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha), stream = (frame << 16) | coil";

/// Above this value of `rho^2 / (2 sigma^2)` the Rician mean uses its
/// asymptotic expansion; the neglected terms are `O(e^{-x})`.
const ASYMPTOTIC_X: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// per-channel standard deviation in k-space
    pub sigma_k: f64,
    pub seed: u64,
}

/// Independent generator for one `(frame, coil)` pair. The stream id packs
/// the frame index above 16 coil bits, so runs are order-independent.
pub fn noise_rng(seed: u64, frame_index: usize, coil_index: usize) -> ChaCha20Rng {
    assert!(coil_index < 1 << 16, "coil index {coil_index} exceeds 16 bits");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((frame_index as u64) << 16) | coil_index as u64);
    rng
}

/// Adds iid `N(0, sigma_k^2)` to the real and imaginary part of every sample.
pub fn add_kspace_noise(frame: &KSpaceFrame, np: &NoiseParams, frame_index: usize) -> Result<KSpaceFrame> {
    if !(np.sigma_k >= 0.0) || !np.sigma_k.is_finite() {
        return Err(Error::invalid("sigma_k", "must be finite and non-negative"));
    }
    if frame.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("frame", "contains non-finite samples"));
    }
    let mut out = frame.clone();
    if np.sigma_k == 0.0 {
        return Ok(out);
    }
    let mut rng = noise_rng(np.seed, frame_index, frame.coil_index);
    for v in &mut out.values {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re, im) * np.sigma_k;
    }
    Ok(out)
}

/// Per-channel image-space noise variance after reconstruction:
/// `sigma_k^2 / (nx ny)`.
pub fn image_noise_variance(sigma_k: f64, nx: usize, ny: usize) -> f64 {
    sigma_k * sigma_k / (nx * ny) as f64
}

/// True magnitude `rho`, phase `theta` and per-channel std `sigma` of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiceParams {
    pub rho: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl RiceParams {
    pub fn new(rho: f64, theta: f64, sigma: f64) -> Result<Self> {
        if !(rho >= 0.0) {
            return Err(Error::invalid("rho", "must be non-negative"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        Ok(RiceParams { rho, theta, sigma })
    }
}

/// Rician magnitude density.
pub fn rician_pdf(r: f64, p: &RiceParams) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let s2 = p.sigma * p.sigma;
    let z = r * p.rho / s2;
    // ln I0(z) - z keeps the exponent bounded for large arguments
    let log = r.ln() - s2.ln() - (r - p.rho).powi(2) / (2.0 * s2) + (ln_bessel_i(0, z) - z);
    log.exp()
}

/// Laguerre function `L_{1/2}(x) = e^{x/2} [(1 - x) I0(-x/2) - x I1(-x/2)]`.
pub fn laguerre_half(x: f64) -> f64 {
    if x <= 0.0 {
        let y = -0.5 * x;
        (1.0 - x) * bessel_i_scaled(0, y) - x * bessel_i_scaled(1, y)
    } else {
        // I0 is even and I1 odd
        let y = 0.5 * x;
        x.exp() * ((1.0 - x) * bessel_i_scaled(0, y) + x * bessel_i_scaled(1, y))
    }
}

/// `L_{1/2}(-x) / (2 sqrt(x / pi)) - 1` for large `x`, i.e. the relative
/// excess of the Rician mean over `rho`.
fn mean_excess_asymptotic(x: f64) -> f64 {
    let mut c = 1.0;
    let mut sum = 0.0;
    let mut xn = 1.0;
    for n in 0..60 {
        let nf = f64::from(n);
        c *= (nf - 0.5) * (nf - 0.5) / (nf + 1.0);
        xn /= x;
        let term = c * xn;
        sum += term;
        if term < 1e-18 {
            break;
        }
    }
    sum
}

/// Rician mean and variance.
pub fn rician_moments(p: &RiceParams) -> (f64, f64) {
    let s2 = p.sigma * p.sigma;
    let x = p.rho * p.rho / (2.0 * s2);
    if x > ASYMPTOTIC_X {
        // mean = rho (1 + e); var = 2 s2 + rho^2 - mean^2, rearranged to avoid cancellation
        let d = p.rho * mean_excess_asymptotic(x);
        let var = 2.0 * s2 - 2.0 * p.rho * d - d * d;
        (p.rho + d, var)
    } else {
        let l = laguerre_half(-x);
        let mean = p.sigma * (PI / 2.0).sqrt() * l;
        let var = 2.0 * s2 + p.rho * p.rho - PI * s2 / 2.0 * l * l;
        (mean, var)
    }
}

/// Standard deviation of the Rician magnitude.
pub fn rician_std(rho: f64, sigma: f64) -> f64 {
    rician_moments(&RiceParams { rho, theta: 0.0, sigma }).1.max(0.0).sqrt()
}

/// Marginal phase density on `[-pi, pi)`.
pub fn phase_pdf(phi: f64, p: &RiceParams) -> f64 {
    let a = p.rho / p.sigma;
    let (s, c) = (phi - p.theta).sin_cos();
    // e^{-a^2/2} e^{a^2 c^2 / 2} folded into e^{-a^2 s^2 / 2}
    let tail = a * c * (2.0 * PI).sqrt() * (-0.5 * a * a * s * s).exp() * normal_cdf(a * c);
    ((-0.5 * a * a).exp() + tail) / (2.0 * PI)
}

/// Density of the root-sum-of-squares magnitude over `n_coils` channels with
/// combined true magnitude `rho_c`.
pub fn noncentral_chi_pdf(m: f64, rho_c: f64, sigma: f64, n_coils: u32) -> f64 {
    assert!(n_coils >= 1, "n_coils must be at least 1");
    if m <= 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    let c = f64::from(n_coils);
    if rho_c == 0.0 {
        // I_{C-1}(z) ~ (z/2)^{C-1} / (C-1)!
        let log = (2.0 * c - 1.0) * m.ln() - c * s2.ln() - (c - 1.0) * 2f64.ln() - ln_gamma(c) - m * m / (2.0 * s2);
        return log.exp();
    }
    let z = m * rho_c / s2;
    let log = rho_c.ln() - s2.ln() + c * (m.ln() - rho_c.ln()) - (m - rho_c).powi(2) / (2.0 * s2)
        + (ln_bessel_i(n_coils - 1, z) - z);
    log.exp()
}

/// Noise level and linear-model coefficients derived from SNR and CNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// image-space per-channel std
    pub sigma: f64,
    /// k-space per-channel std
    pub sigma_k: f64,
    /// Rician std at the baseline magnitude
    pub sigma_r: f64,
    pub beta0: f64,
    pub beta1: f64,
}

/// Solves `rician_std(beta0, sigma) = beta0 / snr` for `sigma` by bisection
/// and maps it to k-space through the image variance relation.
pub fn calibrate(snr: f64, cnr: f64, baseline_rho: f64, nx: usize, ny: usize) -> Result<Calibration> {
    if !(snr > 0.0) {
        return Err(Error::invalid("snr", "must be positive"));
    }
    if !(cnr >= 0.0) || !cnr.is_finite() {
        return Err(Error::invalid("cnr", "must be finite and non-negative"));
    }
    if !(baseline_rho > 0.0) || !baseline_rho.is_finite() {
        return Err(Error::invalid("baseline_rho", "must be finite and positive"));
    }
    let beta0 = baseline_rho;
    if snr.is_infinite() {
        return Ok(Calibration {
            sigma: 0.0,
            sigma_k: 0.0,
            sigma_r: 0.0,
            beta0,
            beta1: 0.0,
        });
    }
    let target = beta0 / snr;
    let (mut lo, mut hi) = (target / 10.0, 10.0 * target);
    let f = |s: f64| rician_std(beta0, s) - target;
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(Error::NoRoot(format!(
            "no noise level in [{lo:e}, {hi:e}] gives Rician std {target:e} at rho = {beta0:e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let sigma_r = rician_std(beta0, sigma);
    Ok(Calibration {
        sigma,
        sigma_k: sigma * ((nx * ny) as f64).sqrt(),
        sigma_r,
        beta0,
        beta1: cnr * sigma_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{cartesian_trajectory, tests::params};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn zero_frame(n: usize) -> KSpaceFrame {
        let mut p = params(n);
        p.te = 0.05;
        let traj = Arc::new(cartesian_trajectory(&p).unwrap());
        KSpaceFrame::new(vec![Complex64::new(0.0, 0.0); traj.len()], traj, 0).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity_and_seed_is_deterministic() {
        let f = zero_frame(8);
        let np = NoiseParams { sigma_k: 0.0, seed: 1 };
        assert_eq!(add_kspace_noise(&f, &np, 0).unwrap(), f);
        let np = NoiseParams { sigma_k: 1.0, seed: 1 };
        let a = add_kspace_noise(&f, &np, 3).unwrap();
        let b = add_kspace_noise(&f, &np, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_kspace_noise(&f, &np, 4).unwrap());
        assert!(add_kspace_noise(&f, &NoiseParams { sigma_k: -1.0, seed: 0 }, 0).is_err());
    }

    #[test]
    fn injected_variance() {
        let f = zero_frame(64);
        let np = NoiseParams { sigma_k: 1.0, seed: 11 };
        let mut re = Vec::new();
        let mut im = Vec::new();
        for t in 0..25 {
            for v in add_kspace_noise(&f, &np, t).unwrap().values {
                re.push(v.re);
                im.push(v.im);
            }
        }
        assert!(re.len() >= 100_000);
        for xs in [re, im] {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 0.03, "variance {var}");
        }
    }

    #[test]
    fn variance_relation() {
        assert_eq!(image_noise_variance(1.0, 64, 64), 1.0 / 4096.0);
        assert_eq!(image_noise_variance(2.5, 1, 1), 6.25);
    }

    #[test]
    fn rayleigh_and_uniform_limits() {
        let p = RiceParams::new(0.0, 0.0, 1.3).unwrap();
        for r in [0.1f64, 1.0, 2.7, 6.0] {
            let s2: f64 = 1.69;
            let rayleigh = r / s2 * (-r * r / (2.0 * s2)).exp();
            assert_relative_eq!(rician_pdf(r, &p), rayleigh, max_relative = 1e-14);
            assert_relative_eq!(phase_pdf(r - 3.0, &p), 1.0 / (2.0 * PI), max_relative = 1e-15);
        }
        let (mean, var) = rician_moments(&p);
        assert_relative_eq!(mean, 1.3 * (PI / 2.0).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(var, (4.0 - PI) / 2.0 * 1.69, max_relative = 1e-13);
    }

    #[test]
    fn laguerre_reference_values() {
        // mpmath laguerre(0.5, 0, x)
        assert_relative_eq!(laguerre_half(0.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(laguerre_half(-2.0), 1.813_099_653_480_338_2, max_relative = 1e-13);
        assert_relative_eq!(laguerre_half(0.7), 0.615_369_364_065_988_0, max_relative = 1e-13);
    }

    #[test]
    fn moments_continuous_across_asymptotic_switch() {
        let sigma = 1.0;
        let rho = (2.0 * ASYMPTOTIC_X).sqrt();
        let below = RiceParams { rho: rho * (1.0 - 1e-9), theta: 0.0, sigma };
        let above = RiceParams { rho: rho * (1.0 + 1e-9), theta: 0.0, sigma };
        let (m0, v0) = rician_moments(&below);
        let (m1, v1) = rician_moments(&above);
        assert_relative_eq!(m0, m1, max_relative = 1e-8);
        assert_relative_eq!(v0, v1, max_relative = 1e-8);
        // large-SNR limit: variance -> sigma^2
        let (_, v) = rician_moments(&RiceParams { rho: 1e6, theta: 0.0, sigma: 1.0 });
        assert_relative_eq!(v, 1.0, max_relative = 1e-11);
    }

    #[test]
    fn chi_reduces_to_rice() {
        for &(m, rho, sigma) in &[(0.5, 1.0, 0.7), (3.0, 2.0, 1.0), (40.0, 41.0, 1.5)] {
            let p = RiceParams { rho, theta: 0.0, sigma };
            assert_relative_eq!(noncentral_chi_pdf(m, rho, sigma, 1), rician_pdf(m, &p), max_relative = 1e-12);
        }
        // rho -> 0 limit is continuous
        let tiny = noncentral_chi_pdf(1.7, 1e-9, 1.0, 4);
        assert_relative_eq!(noncentral_chi_pdf(1.7, 0.0, 1.0, 4), tiny, max_relative = 1e-8);
    }

    #[test]
    fn calibration() {
        let c = calibrate(5.0, 0.5, 1.0, 64, 64).unwrap();
        assert!((rician_std(1.0, c.sigma) - 0.2).abs() < 1e-9);
        assert_relative_eq!(c.sigma_k, c.sigma * 64.0, max_relative = 1e-15);
        assert_relative_eq!(c.beta1, 0.5 * c.sigma_r, max_relative = 1e-15);
        assert_eq!(calibrate(5.0, 0.0, 1.0, 8, 8).unwrap().beta1, 0.0);

        let big = calibrate(1e9, 0.1, 1.0, 96, 96).unwrap();
        assert!(big.sigma < 1e-8 && big.sigma_k < 1e-6);
        let inf = calibrate(f64::INFINITY, 0.1, 1.0, 96, 96).unwrap();
        assert_eq!(inf.sigma_k, 0.0);

        assert!(matches!(calibrate(0.0, 0.5, 1.0, 8, 8), Err(Error::InvalidParameter { field: "snr", .. })));
        assert!(matches!(calibrate(5.0, 0.5, 0.0, 8, 8), Err(Error::InvalidParameter { field: "baseline_rho", .. })));
        // the bracket always holds a root since sqrt((4 - pi)/2) sigma <= sigma_r <= sigma
        let low = calibrate(0.01, 0.5, 1.0, 8, 8).unwrap();
        assert!((rician_std(1.0, low.sigma) - 100.0).abs() < 1e-9);
    }
}
