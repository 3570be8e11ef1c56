//! Discretized MR signal equations evaluated along a trajectory.
//!
//! Every sequence reduces to the same kernel: each object voxel carries a
//! complex amplitude `a` and a complex rate `c` (transverse decay plus
//! off-resonance), and the sample at `(kx, ky, t)` is
//!
//! ```text
//! s = 1/(Nx Ny) Σ_x Σ_y a(x,y) e^{c(x,y) t} e^{-i2π(kx x/Nx + ky y/Ny)}
//! ```
//!
//! with `x, y` running over the centered integers `-N/2 .. N/2-1`. Because
//! `t` is the acquisition time of each individual sample the frame is not a
//! single DFT; the direct sum is the definition and the FFT is only a shortcut
//! for time-independent frames on the Cartesian grid.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::fft;
use crate::phantom::{derive_t2, SliceMaps};
use crate::trajectory::{Sample, ScanParams, Sequence, Trajectory, GAMMA_HZ_PER_T};

/// Samples per work unit; within a unit, uniformly spaced sample times are
/// advanced by a per-voxel recurrence instead of a fresh exponential.
const CHUNK: usize = 64;

/// Coil placement radius as a fraction of the grid edge.
pub const COIL_RADIUS_FRACTION: f64 = 0.55;
/// Distance floor (voxels) for the inverse-distance sensitivity.
pub const COIL_MIN_DISTANCE: f64 = 1.0;

/// Complex k-space samples, ordered like the trajectory that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceFrame {
    pub values: Vec<Complex64>,
    pub traj: Arc<Trajectory>,
    pub coil_index: usize,
}

impl KSpaceFrame {
    pub fn new(values: Vec<Complex64>, traj: Arc<Trajectory>, coil_index: usize) -> Result<Self> {
        if values.len() != traj.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}-sample trajectory",
                values.len(),
                traj.len()
            )));
        }
        Ok(KSpaceFrame {
            values,
            traj,
            coil_index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub weights: Array2<f64>,
    /// coil location `(col, row)` in index coordinates
    pub position: (f64, f64),
}

impl SensitivityMap {
    pub fn uniform(grid_n: usize) -> Self {
        let c = (grid_n as f64 - 1.0) / 2.0;
        SensitivityMap {
            weights: Array2::ones((grid_n, grid_n)),
            position: (c, c),
        }
    }
}

/// Receive sensitivities for `n_c` coils.
///
/// One coil is uniform. Otherwise coil `j` sits at angle `2πj/n_c`, radius
/// `0.55 grid_n` from the grid's geometric center, and its weight falls off as
/// `1 / max(d, 1)`, normalized so the grid maximum is 1.
pub fn coil_sensitivities(n_c: usize, grid_n: usize) -> Result<Vec<SensitivityMap>> {
    if n_c < 1 {
        return Err(Error::invalid("n_coils", "must be at least 1"));
    }
    if grid_n == 0 {
        return Err(Error::invalid("grid_n", "must be positive"));
    }
    if n_c == 1 {
        return Ok(vec![SensitivityMap::uniform(grid_n)]);
    }
    let center = (grid_n as f64 - 1.0) / 2.0;
    let radius = COIL_RADIUS_FRACTION * grid_n as f64;
    Ok((0..n_c)
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / n_c as f64;
            let (px, py) = (center + radius * angle.cos(), center + radius * angle.sin());
            let mut weights = Array2::from_shape_fn((grid_n, grid_n), |(r, c)| {
                let d = (c as f64 - px).hypot(r as f64 - py);
                COIL_MIN_DISTANCE / d.max(COIL_MIN_DISTANCE)
            });
            let max = weights.fold(0.0f64, |m, &w| m.max(w));
            weights.mapv_inplace(|w| w / max);
            SensitivityMap {
                weights,
                position: (px, py),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct Voxel {
    col: usize,
    amp: Complex64,
    rate: Complex64,
}

/// Contributing voxels grouped by row.
#[derive(Debug, Clone)]
struct VoxelModel {
    rows: usize,
    cols: usize,
    by_row: Vec<(usize, Vec<Voxel>)>,
    time_dependent: bool,
}

impl VoxelModel {
    fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Option<(Complex64, Complex64)>) -> Self {
        let mut by_row = Vec::new();
        let mut time_dependent = false;
        for r in 0..rows {
            let voxels: Vec<Voxel> = (0..cols)
                .filter_map(|c| {
                    f(r, c).map(|(amp, rate)| {
                        time_dependent |= rate != Complex64::new(0.0, 0.0);
                        Voxel { col: c, amp, rate }
                    })
                })
                .collect();
            if !voxels.is_empty() {
                by_row.push((r, voxels));
            }
        }
        VoxelModel {
            rows,
            cols,
            by_row,
            time_dependent,
        }
    }

    fn voxel_count(&self) -> usize {
        self.by_row.iter().map(|(_, v)| v.len()).sum()
    }

    /// Image `a e^{c t}` on the full grid.
    fn image_at(&self, t: f64) -> Array2<Complex64> {
        let mut img = Array2::zeros((self.rows, self.cols));
        for (r, voxels) in &self.by_row {
            for v in voxels {
                img[[*r, v.col]] = v.amp * (v.rate * t).exp();
            }
        }
        img
    }
}

/// How the kernel is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// FFT when the frame is time-independent and on-grid, direct sum otherwise.
    Auto,
    /// Always the direct sum.
    Direct,
}

fn twiddles(k: f64, n: usize, out: &mut [Complex64]) {
    let half = (n / 2) as f64;
    for (i, w) in out.iter_mut().enumerate() {
        let x = i as f64 - half;
        let (s, c) = (-2.0 * PI * k * x / n as f64).sin_cos();
        *w = Complex64::new(c, s);
    }
}

fn evaluate(model: &VoxelModel, traj: &Trajectory, common_time: Option<f64>, mode: Evaluation) -> Vec<Complex64> {
    let norm = 1.0 / (model.rows * model.cols) as f64;
    let time_independent = common_time.is_some() || !model.time_dependent;
    if mode == Evaluation::Auto
        && time_independent
        && traj.is_on_grid()
        && traj.grid_n() == model.rows
        && model.rows == model.cols
    {
        return evaluate_fft(model, traj, common_time.unwrap_or(0.0), norm);
    }

    let samples = traj.samples();
    samples
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| evaluate_chunk(model, chunk, common_time, norm))
        .collect()
}

fn evaluate_fft(model: &VoxelModel, traj: &Trajectory, t: f64, norm: f64) -> Vec<Complex64> {
    let n = model.rows;
    let mut grid = fft::centered_to_wrapped(&model.image_at(t));
    fft::fft2(&mut grid, FftDirection::Forward);
    traj.samples()
        .iter()
        .map(|s| {
            let r = (s.ky as i64).rem_euclid(n as i64) as usize;
            let c = (s.kx as i64).rem_euclid(n as i64) as usize;
            grid[[r, c]] * norm
        })
        .collect()
}

fn evaluate_chunk(model: &VoxelModel, chunk: &[Sample], common_time: Option<f64>, norm: f64) -> Vec<Complex64> {
    let time = |s: &Sample| common_time.unwrap_or(s.t);
    let t0 = time(&chunk[0]);
    let dt = if chunk.len() > 1 { time(&chunk[1]) - t0 } else { 0.0 };
    let uniform = chunk
        .windows(2)
        .enumerate()
        .all(|(j, w)| ((time(&w[1]) - time(&w[0])) - dt).abs() <= 1e-12 * t0.abs().max(1e-3) && j < CHUNK);

    let all: Vec<&Voxel> = model.by_row.iter().flat_map(|(_, v)| v.iter()).collect();
    let mut weights: Vec<Complex64> = all.iter().map(|v| v.amp * (v.rate * t0).exp()).collect();
    let steps: Option<Vec<Complex64>> = (uniform && dt != 0.0).then(|| all.iter().map(|v| (v.rate * dt).exp()).collect());

    let mut twx = vec![Complex64::new(0.0, 0.0); model.cols];
    let mut twy = vec![Complex64::new(0.0, 0.0); model.rows];
    let mut out = Vec::with_capacity(chunk.len());
    for (j, s) in chunk.iter().enumerate() {
        if j > 0 {
            match &steps {
                Some(steps) => weights.iter_mut().zip(steps).for_each(|(w, st)| *w *= st),
                None if uniform => {}
                None => {
                    let t = time(s);
                    weights.iter_mut().zip(&all).for_each(|(w, v)| *w = v.amp * (v.rate * t).exp());
                }
            }
        }
        twiddles(s.kx, model.cols, &mut twx);
        twiddles(s.ky, model.rows, &mut twy);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut offset = 0;
        for (r, voxels) in &model.by_row {
            let mut row_acc = Complex64::new(0.0, 0.0);
            for (v, w) in voxels.iter().zip(&weights[offset..offset + voxels.len()]) {
                row_acc += twx[v.col] * w;
            }
            offset += voxels.len();
            acc += twy[*r] * row_acc;
        }
        out.push(acc * norm);
    }
    out
}

fn check_dims(slice: &SliceMaps, traj: &Trajectory, params: &ScanParams, coil: &SensitivityMap) -> Result<()> {
    let n = params.grid_n;
    if slice.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!("slice is {:?}, grid_n is {n}", slice.dim())));
    }
    if traj.grid_n() != n {
        return Err(Error::DimensionMismatch(format!(
            "trajectory built for grid_n {}, parameters say {n}",
            traj.grid_n()
        )));
    }
    if coil.weights.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "coil sensitivity is {:?}, grid_n is {n}",
            coil.weights.dim()
        )));
    }
    Ok(())
}

/// Builds the voxel model for `slice` under `params`. `longitudinal` maps
/// `(m0, t1)` to the steady-state amplitude; `transverse` maps
/// `(t2star, delta_b)` to the decay rate (1/s) that multiplies `-t`.
fn build_model(
    slice: &SliceMaps,
    params: &ScanParams,
    coil: &SensitivityMap,
    longitudinal: impl Fn(f64, f64) -> f64,
    transverse: impl Fn(f64, f64) -> f64,
) -> Result<VoxelModel> {
    let (rows, cols) = slice.dim();
    for ((&m0, &t1), &t2s) in slice.m0.iter().zip(slice.t1.iter()).zip(slice.t2star.iter()) {
        if m0 > 0.0 && !(t1 > 0.0 && t2s > 0.0) {
            return Err(Error::invalid("t1/t2star", "must be positive on every voxel with m0 > 0"));
        }
    }
    Ok(VoxelModel::from_fn(rows, cols, |r, c| {
        let m0 = slice.m0[[r, c]];
        if m0 <= 0.0 {
            return None;
        }
        let db = if params.include_delta_b { slice.delta_b[[r, c]] } else { 0.0 };
        let amp = longitudinal(m0, slice.t1[[r, c]]) * coil.weights[[r, c]] * slice.gain[[r, c]];
        let rate = Complex64::new(-transverse(slice.t2star[[r, c]], db), GAMMA_HZ_PER_T * db);
        Some((amp, rate))
    }))
}

fn run(model: VoxelModel, traj: &Arc<Trajectory>, params: &ScanParams, coil_index: usize) -> Result<KSpaceFrame> {
    let common = params.assume_te.then_some(params.te);
    let values = evaluate(&model, traj, common, Evaluation::Auto);
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("signal", "non-finite k-space value"));
    }
    KSpaceFrame::new(values, Arc::clone(traj), coil_index)
}

/// Spoiled gradient echo.
pub fn gre_signal(
    slice: &SliceMaps,
    traj: &Arc<Trajectory>,
    params: &ScanParams,
    coil: &SensitivityMap,
    coil_index: usize,
) -> Result<KSpaceFrame> {
    check_dims(slice, traj, params, coil)?;
    let alpha = params.flip_deg.to_radians();
    let (sin_a, cos_a) = alpha.sin_cos();
    let tr = params.tr;
    let model = build_model(
        slice,
        params,
        coil,
        |m0, t1| {
            let e1 = (-tr / t1).exp();
            m0 * sin_a * (1.0 - e1) / (1.0 - cos_a * e1)
        },
        |t2s, _| 1.0 / t2s,
    )?;
    run(model, traj, params, coil_index)
}

/// Spin echo; decays with T2 derived from T2* and ΔB.
pub fn se_signal(
    slice: &SliceMaps,
    traj: &Arc<Trajectory>,
    params: &ScanParams,
    coil: &SensitivityMap,
    coil_index: usize,
) -> Result<KSpaceFrame> {
    check_dims(slice, traj, params, coil)?;
    let tr = params.tr;
    let model = build_model(
        slice,
        params,
        coil,
        |m0, t1| m0 * (1.0 - (-tr / t1).exp()),
        |t2s, db| 1.0 / derive_t2(t2s, db, GAMMA_HZ_PER_T),
    )?;
    run(model, traj, params, coil_index)
}

/// Inversion recovery. The equation carries no transverse decay factor.
pub fn ir_signal(
    slice: &SliceMaps,
    traj: &Arc<Trajectory>,
    params: &ScanParams,
    coil: &SensitivityMap,
    coil_index: usize,
) -> Result<KSpaceFrame> {
    check_dims(slice, traj, params, coil)?;
    let ti = params
        .ti
        .ok_or_else(|| Error::invalid("ti", "required for the IR sequence"))?;
    let tr = params.tr;
    let model = build_model(
        slice,
        params,
        coil,
        |m0, t1| m0 * (1.0 - 2.0 * (-ti / t1).exp() + (-tr / t1).exp()),
        |_, _| 0.0,
    )?;
    run(model, traj, params, coil_index)
}

/// Dispatches on `params.sequence`.
pub fn simulate_frame(
    slice: &SliceMaps,
    traj: &Arc<Trajectory>,
    params: &ScanParams,
    coil: &SensitivityMap,
    coil_index: usize,
) -> Result<KSpaceFrame> {
    match params.sequence {
        Sequence::Gre => gre_signal(slice, traj, params, coil, coil_index),
        Sequence::Se => se_signal(slice, traj, params, coil, coil_index),
        Sequence::Ir => ir_signal(slice, traj, params, coil, coil_index),
    }
}

/// Time-independent kernel: the discrete transform of `image` at each
/// trajectory location, with the `1/(Nx Ny)` prefactor.
pub fn forward_dft(image: &Array2<Complex64>, traj: &Arc<Trajectory>) -> Result<KSpaceFrame> {
    forward_dft_with(image, traj, Evaluation::Auto)
}

pub fn forward_dft_with(image: &Array2<Complex64>, traj: &Arc<Trajectory>, mode: Evaluation) -> Result<KSpaceFrame> {
    let (rows, cols) = image.dim();
    if rows != traj.grid_n() || cols != traj.grid_n() {
        return Err(Error::DimensionMismatch(format!(
            "image is {rows}x{cols}, trajectory grid is {}",
            traj.grid_n()
        )));
    }
    let model = VoxelModel::from_fn(rows, cols, |r, c| {
        let v = image[[r, c]];
        (v != Complex64::new(0.0, 0.0)).then_some((v, Complex64::new(0.0, 0.0)))
    });
    let values = if model.voxel_count() == 0 {
        vec![Complex64::new(0.0, 0.0); traj.len()]
    } else {
        evaluate(&model, traj, None, mode)
    };
    KSpaceFrame::new(values, Arc::clone(traj), 0)
}

/// The relaxation-weighted image `a e^{c t}` the signal equation transforms,
/// evaluated at a single time `t`. Useful as ground truth for reconstructions.
pub fn weighted_image(slice: &SliceMaps, params: &ScanParams, coil: &SensitivityMap, t: f64) -> Result<Array2<Complex64>> {
    let tr = params.tr;
    let model = match params.sequence {
        Sequence::Gre => {
            let (sin_a, cos_a) = params.flip_deg.to_radians().sin_cos();
            build_model(
                slice,
                params,
                coil,
                |m0, t1| {
                    let e1 = (-tr / t1).exp();
                    m0 * sin_a * (1.0 - e1) / (1.0 - cos_a * e1)
                },
                |t2s, _| 1.0 / t2s,
            )?
        }
        Sequence::Se => build_model(
            slice,
            params,
            coil,
            |m0, t1| m0 * (1.0 - (-tr / t1).exp()),
            |t2s, db| 1.0 / derive_t2(t2s, db, GAMMA_HZ_PER_T),
        )?,
        Sequence::Ir => {
            let ti = params.ti.ok_or_else(|| Error::invalid("ti", "required for the IR sequence"))?;
            build_model(
                slice,
                params,
                coil,
                |m0, t1| m0 * (1.0 - 2.0 * (-ti / t1).exp() + (-tr / t1).exp()),
                |_, _| 0.0,
            )?
        }
    };
    Ok(model.image_at(t))
}
