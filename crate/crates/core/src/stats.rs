//! Voxel-wise activation and SNR maps, and per-voxel histograms with their
//! theoretical densities.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::experiment::DesignVector;
use crate::noise::{noncentral_chi_pdf, phase_pdf, rician_pdf, RiceParams};

/// Below this `rho / sigma` the Rician density differs from Rayleigh by
/// less than one part in 10^6, and the curve is labelled Rayleigh.
pub const RAYLEIGH_RATIO: f64 = 1e-3;

/// Default overlay threshold on |t|.
pub const DEFAULT_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Tstat,
    Snr,
}

impl FromStr for StatKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tstat" => Ok(StatKind::Tstat),
            "snr" => Ok(StatKind::Snr),
            _ => Err(Error::invalid("kind", format!("expected `tstat` or `snr`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatMap {
    pub values: Array2<f64>,
    pub kind: StatKind,
    /// degrees of freedom of the t statistic
    pub df: Option<f64>,
    pub threshold: f64,
    pub skip_initial: usize,
}

impl StatMap {
    /// Mask of voxels passing `|value| > threshold`.
    pub fn above_threshold(&self) -> Array2<bool> {
        self.values.mapv(|v| v.abs() > self.threshold)
    }
}

/// Two-sided critical value of Student's t.
pub fn t_critical(alpha: f64, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid("df", e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha / 2.0))
}

fn check_series(series: &[Array2<f64>], x: &DesignVector) -> Result<(usize, usize)> {
    if series.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images for a design of length {}",
            series.len(),
            x.len()
        )));
    }
    let dim = series.first().map(|a| a.dim()).unwrap_or((0, 0));
    if series.iter().any(|a| a.dim() != dim) {
        return Err(Error::DimensionMismatch("images differ in size".into()));
    }
    Ok(dim)
}

/// Per-voxel mean and sum of squared deviations over the selected frames.
fn group_moments(series: &[&Array2<f64>], dim: (usize, usize)) -> (Array2<f64>, Array2<f64>) {
    let n = series.len() as f64;
    let mut mean = Array2::<f64>::zeros(dim);
    for a in series {
        mean += *a;
    }
    mean /= n;
    let mut ss = Array2::<f64>::zeros(dim);
    for a in series {
        Zip::from(&mut ss).and(*a).and(&mean).for_each(|s, &v, &m| *s += (v - m) * (v - m));
    }
    (mean, ss)
}

fn split<'a>(series: &'a [Array2<f64>], x: &DesignVector, skip: usize) -> (Vec<&'a Array2<f64>>, Vec<&'a Array2<f64>>) {
    let mut task = Vec::new();
    let mut rest = Vec::new();
    for (a, &xt) in series.iter().zip(&x.x).skip(skip) {
        if xt == 1 {
            task.push(a);
        } else {
            rest.push(a);
        }
    }
    (task, rest)
}

/// Pooled-variance two-sample t statistic, task minus rest, per voxel.
/// Zero pooled variance gives NaN when the means agree and a signed infinity
/// when they differ.
pub fn ttest_map(series: &[Array2<f64>], x: &DesignVector, skip_initial: usize) -> Result<StatMap> {
    let dim = check_series(series, x)?;
    let (task, rest) = split(series, x, skip_initial);
    if task.is_empty() || rest.is_empty() {
        return Err(Error::invalid(
            "design",
            format!("t-test needs task and rest frames after skipping {skip_initial}"),
        ));
    }
    if task.len() + rest.len() < 3 {
        return Err(Error::invalid("design", "t-test needs at least three frames"));
    }
    let (n1, n0) = (task.len() as f64, rest.len() as f64);
    let df = n1 + n0 - 2.0;
    let (m1, ss1) = group_moments(&task, dim);
    let (m0, ss0) = group_moments(&rest, dim);
    let mut values = Array2::<f64>::zeros(dim);
    Zip::from(&mut values)
        .and(&m1)
        .and(&m0)
        .and(&ss1)
        .and(&ss0)
        .for_each(|t, &a, &b, &s1, &s0| {
            let pooled = (s1 + s0) / df;
            let se = (pooled * (1.0 / n1 + 1.0 / n0)).sqrt();
            let diff = a - b;
            *t = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                f64::NAN
            } else {
                diff.signum() * f64::INFINITY
            };
        });
    Ok(StatMap {
        values,
        kind: StatKind::Tstat,
        df: Some(df),
        threshold: DEFAULT_THRESHOLD,
        skip_initial,
    })
}

/// Mean over standard deviation of the rest frames, per voxel.
pub fn snr_map(series: &[Array2<f64>], x: &DesignVector, skip_initial: usize) -> Result<StatMap> {
    let dim = check_series(series, x)?;
    let (_, rest) = split(series, x, skip_initial);
    if rest.len() < 2 {
        return Err(Error::invalid("design", "SNR needs at least two rest frames"));
    }
    let (mean, ss) = group_moments(&rest, dim);
    let n = rest.len() as f64;
    let mut values = Array2::<f64>::zeros(dim);
    Zip::from(&mut values).and(&mean).and(&ss).for_each(|v, &m, &s| {
        let sd = (s / (n - 1.0)).sqrt();
        *v = if sd > 0.0 { m / sd } else { f64::NAN };
    });
    Ok(StatMap {
        values,
        kind: StatKind::Snr,
        df: None,
        threshold: DEFAULT_THRESHOLD,
        skip_initial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Real,
    Imag,
    Magnitude,
    Phase,
}

impl FromStr for Part {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Part::Real),
            "imag" | "imaginary" => Ok(Part::Imag),
            "magnitude" | "mag" => Ok(Part::Magnitude),
            "phase" => Ok(Part::Phase),
            _ => Err(Error::invalid("part", format!("expected real, imag, magnitude or phase, got `{s}`"))),
        }
    }
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Real => "real",
            Part::Imag => "imag",
            Part::Magnitude => "magnitude",
            Part::Phase => "phase",
        }
    }

    pub fn of(self, v: num_complex::Complex64) -> f64 {
        match self {
            Part::Real => v.re,
            Part::Imag => v.im,
            Part::Magnitude => v.norm(),
            Part::Phase => crate::recon::wrap_phase(v.arg()),
        }
    }
}

/// Theoretical density of one voxel component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Theory {
    Normal { mean: f64, sigma: f64 },
    Rician { rho: f64, sigma: f64 },
    Phase { rho: f64, theta: f64, sigma: f64 },
    NoncentralChi { rho: f64, sigma: f64, n_coils: u32 },
}

impl Theory {
    /// Density matching `part` for a voxel with noiseless value `(rho, theta)`
    /// and per-channel std `sigma`. Multi-coil magnitudes use the RSS
    /// magnitude `rho` of the noiseless coil images.
    pub fn for_part(part: Part, rho: f64, theta: f64, sigma: f64, n_coils: u32) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma", "theory curves need a positive noise level"));
        }
        Ok(match part {
            Part::Real => Theory::Normal { mean: rho * theta.cos(), sigma },
            Part::Imag => Theory::Normal { mean: rho * theta.sin(), sigma },
            Part::Magnitude if n_coils > 1 => Theory::NoncentralChi { rho, sigma, n_coils },
            Part::Magnitude => Theory::Rician { rho, sigma },
            Part::Phase => Theory::Phase { rho, theta, sigma },
        })
    }

    pub fn pdf(&self, v: f64) -> f64 {
        match *self {
            Theory::Normal { mean, sigma } => {
                let z = (v - mean) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            Theory::Rician { rho, sigma } => rician_pdf(v, &RiceParams { rho, theta: 0.0, sigma }),
            Theory::Phase { rho, theta, sigma } => phase_pdf(v, &RiceParams { rho, theta, sigma }),
            Theory::NoncentralChi { rho, sigma, n_coils } => noncentral_chi_pdf(v, rho, sigma, n_coils),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Theory::Normal { .. } => "normal",
            Theory::Rician { rho, sigma } if *rho <= RAYLEIGH_RATIO * sigma => "rayleigh",
            Theory::Rician { .. } => "rician",
            Theory::Phase { .. } => "phase",
            Theory::NoncentralChi { .. } => "noncentral_chi",
        }
    }

    /// Probability mass on `[a, b]` by composite Simpson.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        const M: usize = 32;
        let h = (b - a) / M as f64;
        let mut s = self.pdf(a) + self.pdf(b);
        for i in 1..M {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub part: Part,
    /// `bins + 1` edges
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// counts scaled to a density
    pub density: Vec<f64>,
    pub theory: Theory,
    /// theory density at the bin centers
    pub theory_curve: Vec<f64>,
    /// `n` times the theory mass per bin
    pub expected_counts: Vec<f64>,
}

/// Histogram of `values` with the theory overlay. Phase uses the fixed range
/// `[-pi, pi)`, the other parts the data range.
pub fn voxel_histogram(values: &[f64], part: Part, bins: usize, theory: Theory) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::invalid("values", "no finite samples"));
    }
    let (lo, hi) = if part == Part::Phase {
        (-PI, PI)
    } else {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in &finite {
        let i = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[i] += 1;
    }
    let n = finite.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let theory_curve = (0..bins).map(|i| theory.pdf(lo + (i as f64 + 0.5) * width)).collect();
    let expected_counts = (0..bins).map(|i| n * theory.mass(edges[i], edges[i + 1])).collect();
    Ok(Histogram {
        part,
        edges,
        counts,
        density,
        theory,
        theory_curve,
        expected_counts,
    })
}
