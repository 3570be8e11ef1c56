//! k-space sampling schedules and scanner parameters.
//!
//! Every generated trajectory is a single continuous readout with uniform
//! sample spacing `dt = EESP / grid_n`: sample `i` is acquired at
//! `TE + (i - i_center) * dt`, where `i_center` is the sample that hits the
//! k-space origin at the echo time. Rows (Cartesian) and spokes (radial) each
//! last exactly one EESP.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gyromagnetic ratio of hydrogen, Hz/T.
pub const GAMMA_HZ_PER_T: f64 = 42.58e6;

/// Larmor frequency in MHz for a field strength in Tesla.
pub fn larmor_frequency(b0: f64) -> f64 {
    GAMMA_HZ_PER_T * b0 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sequence {
    Gre,
    Se,
    Ir,
}

impl Sequence {
    pub fn description(self) -> &'static str {
        match self {
            Sequence::Gre => "gradient echo (GRE)",
            Sequence::Se => "spin echo (SE)",
            Sequence::Ir => "inversion recovery (IR)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Cartesian,
    Radial,
    Spiral,
}

impl TrajectoryKind {
    pub fn description(self) -> &'static str {
        match self {
            TrajectoryKind::Cartesian => "Cartesian",
            TrajectoryKind::Radial => "radial",
            TrajectoryKind::Spiral => "spiral",
        }
    }
}

/// Scanner settings, SI units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanParams {
    pub sequence: Sequence,
    /// Tesla
    pub b0: f64,
    pub te: f64,
    pub tr: f64,
    /// inversion time, IR only
    pub ti: Option<f64>,
    pub flip_deg: f64,
    /// effective echo spacing
    pub eesp: f64,
    pub accel: usize,
    pub n_coils: usize,
    pub grid_n: usize,
    pub include_delta_b: bool,
    /// Evaluate every sample at `te` instead of its own acquisition time.
    pub assume_te: bool,
}

impl ScanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b0 > 0.0) {
            return Err(Error::invalid("b0", "must be positive"));
        }
        if !(self.te > 0.0) {
            return Err(Error::invalid("te", "must be positive"));
        }
        if !(self.te < self.tr) {
            return Err(Error::invalid("te", format!("must be shorter than tr ({} >= {})", self.te, self.tr)));
        }
        if !(self.eesp > 0.0) {
            return Err(Error::invalid("eesp", "must be positive"));
        }
        if !(self.flip_deg > 0.0 && self.flip_deg <= 180.0) {
            return Err(Error::invalid("flip_deg", "must lie in (0, 180]"));
        }
        if self.accel < 1 {
            return Err(Error::invalid("accel", "must be at least 1"));
        }
        if self.n_coils < 1 {
            return Err(Error::invalid("n_coils", "must be at least 1"));
        }
        if self.sequence == Sequence::Ir {
            match self.ti {
                None => return Err(Error::invalid("ti", "required for the IR sequence")),
                Some(ti) if !(ti > 0.0 && ti < self.tr) => {
                    return Err(Error::invalid("ti", "must lie in (0, tr)"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Per-sample dwell time.
    pub fn dwell(&self) -> f64 {
        self.eesp / self.grid_n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// cycles per field of view
    pub kx: f64,
    pub ky: f64,
    /// seconds after excitation
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Sample>,
    kind: TrajectoryKind,
    grid_n: usize,
    accel: usize,
}

impl Trajectory {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }
    pub fn grid_n(&self) -> usize {
        self.grid_n
    }
    pub fn accel(&self) -> usize {
        self.accel
    }

    /// Assembles a trajectory from arbitrary samples; times must be positive
    /// and non-decreasing.
    pub fn from_samples(samples: Vec<Sample>, kind: TrajectoryKind, grid_n: usize, accel: usize) -> Result<Self> {
        if samples.iter().any(|s| !(s.t > 0.0)) {
            return Err(Error::invalid("trajectory", "sample times must be positive"));
        }
        if samples.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::invalid("trajectory", "sample times must be non-decreasing"));
        }
        Ok(Trajectory {
            samples,
            kind,
            grid_n,
            accel,
        })
    }

    /// True when every sample sits on an integer grid point inside the
    /// `grid_n x grid_n` Cartesian k-space.
    pub fn is_on_grid(&self) -> bool {
        let half = (self.grid_n / 2) as f64;
        self.samples.iter().all(|s| {
            s.kx.fract() == 0.0 && s.ky.fract() == 0.0 && s.kx >= -half && s.kx < half && s.ky >= -half && s.ky < half
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kx,ky,t")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", s.kx, s.ky, s.t)?;
        }
        Ok(())
    }
}

fn check_common(params: &ScanParams) -> Result<()> {
    let n = params.grid_n;
    if n == 0 || n % 2 != 0 {
        return Err(Error::invalid("grid_n", format!("must be even and positive, got {n}")));
    }
    if params.accel < 1 {
        return Err(Error::invalid("accel", "must be at least 1"));
    }
    if params.accel >= n {
        return Err(Error::invalid("accel", format!("must be smaller than grid_n ({})", n)));
    }
    if !(params.eesp > 0.0) {
        return Err(Error::invalid("eesp", "must be positive"));
    }
    Ok(())
}

/// Stamps `TE + (i - center) * dt` onto positions and validates the result.
fn timed(
    positions: Vec<(f64, f64)>,
    center: usize,
    params: &ScanParams,
    kind: TrajectoryKind,
) -> Result<Trajectory> {
    let dt = params.dwell();
    let samples: Vec<Sample> = positions
        .into_iter()
        .enumerate()
        .map(|(i, (kx, ky))| Sample {
            kx,
            ky,
            t: params.te + (i as f64 - center as f64) * dt,
        })
        .collect();
    if let Some(first) = samples.first() {
        if !(first.t > 0.0) {
            return Err(Error::invalid(
                "te",
                format!(
                    "readout would start {:.3} ms before excitation; increase te or shorten eesp",
                    -first.t * 1e3
                ),
            ));
        }
    }
    Ok(Trajectory {
        samples,
        kind,
        grid_n: params.grid_n,
        accel: params.accel,
    })
}

/// Phase-encode lines kept under acceleration: every `accel`-th line counted
/// from `ky = 0`, so the k-space center is always acquired.
pub fn cartesian_lines(grid_n: usize, accel: usize) -> Vec<i64> {
    let half = (grid_n / 2) as i64;
    (-half..half).filter(|ky| ky.rem_euclid(accel as i64) == 0).collect()
}

/// Boustrophedon EPI readout, bottom (`ky = -N/2`) to top. The `ky = 0` row
/// runs in +kx and every row of even distance from it does too.
pub fn cartesian_trajectory(params: &ScanParams) -> Result<Trajectory> {
    check_common(params)?;
    let n = params.grid_n;
    let half = (n / 2) as i64;
    let lines = cartesian_lines(n, params.accel);
    let center_line = lines.iter().position(|&ky| ky == 0).expect("ky = 0 always kept");

    let mut positions = Vec::with_capacity(lines.len() * n);
    for (l, &ky) in lines.iter().enumerate() {
        let forward = (l as i64 - center_line as i64) % 2 == 0;
        for j in 0..n as i64 {
            let kx = if forward { j - half } else { half - 1 - j };
            positions.push((kx as f64, ky as f64));
        }
    }
    timed(positions, center_line * n + n / 2, params, TrajectoryKind::Cartesian)
}

/// `grid_n` spokes over `[0, π)` (every `accel`-th kept), each with `grid_n`
/// samples at radii `-N/2 .. N/2 - 1`, passing through the origin.
pub fn radial_trajectory(params: &ScanParams) -> Result<Trajectory> {
    check_common(params)?;
    let n = params.grid_n;
    let spokes: Vec<usize> = (0..n).filter(|s| s % params.accel == 0).collect();
    let mut positions = Vec::with_capacity(spokes.len() * n);
    for &s in &spokes {
        let (sin, cos) = (s as f64 * PI / n as f64).sin_cos();
        for j in 0..n {
            let r = j as f64 - (n / 2) as f64;
            positions.push((r * cos, r * sin));
        }
    }
    let center = (spokes.len() / 2) * n + n / 2;
    timed(positions, center, params, TrajectoryKind::Radial)
}

/// Default spiral turn count: ring spacing of about one k-space sample.
pub fn default_spiral_turns(grid_n: usize) -> f64 {
    (grid_n / 2) as f64
}

pub fn spiral_trajectory(params: &ScanParams) -> Result<Trajectory> {
    spiral_trajectory_with_turns(params, default_spiral_turns(params.grid_n))
}

/// Single-shot Archimedean spiral-out with `grid_n²` samples uniform in
/// angle, from the origin (acquired at TE) to radius `grid_n / 2`.
///
/// With acceleration `n_a` the sample count drops to `grid_n² / n_a` over the
/// same path.
pub fn spiral_trajectory_with_turns(params: &ScanParams, turns: f64) -> Result<Trajectory> {
    check_common(params)?;
    if !(turns > 0.0) {
        return Err(Error::invalid("turns", "must be positive"));
    }
    let n = params.grid_n;
    let count = n * n / params.accel;
    let theta_max = 2.0 * PI * turns;
    let r_max = (n / 2) as f64;
    let positions = (0..count)
        .map(|j| {
            let frac = j as f64 / (count - 1) as f64;
            let theta = theta_max * frac;
            let r = r_max * frac;
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    timed(positions, 0, params, TrajectoryKind::Spiral)
}

pub fn build_trajectory(kind: TrajectoryKind, params: &ScanParams) -> Result<Trajectory> {
    match kind {
        TrajectoryKind::Cartesian => cartesian_trajectory(params),
        TrajectoryKind::Radial => radial_trajectory(params),
        TrajectoryKind::Spiral => spiral_trajectory(params),
    }
}
