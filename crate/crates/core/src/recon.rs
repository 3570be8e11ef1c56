//! Image reconstruction: zero-filled inverse DFT for Cartesian data,
//! nearest-cell gridding for radial and spiral data, and root-sum-of-squares
//! coil combination.
//!
//! The inverse carries the same `1/(Nx Ny)` prefactor as the forward model,
//! so image-space noise has per-channel variance `sigma_k^2 / (Nx Ny)`. The
//! price is that `idft_recon(forward_dft(img)) = img / (Nx Ny)`;
//! [`idft_unscaled`] is the exact inverse of the forward model.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::KSpaceFrame;
use crate::trajectory::{Sample, Trajectory, TrajectoryKind};

/// Complex image on the `grid_n x grid_n` grid, rows = y, columns = x, both
/// centered (index `i` holds coordinate `i - N/2`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub data: Array2<Complex64>,
}

impl ImageFrame {
    pub fn new(data: Array2<Complex64>) -> Self {
        ImageFrame { data }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn real(&self) -> Array2<f64> {
        self.data.mapv(|v| v.re)
    }

    pub fn imag(&self) -> Array2<f64> {
        self.data.mapv(|v| v.im)
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }

    /// Phase in `[-pi, pi)`.
    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|v| wrap_phase(v.arg()))
    }
}

/// Maps `atan2`'s `(-pi, pi]` onto `[-pi, pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    if phi >= PI {
        phi - 2.0 * PI
    } else {
        phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    /// zero-filled inverse FFT; Cartesian trajectories only
    CartesianIfft,
    /// nearest-cell gridding followed by the inverse FFT
    GriddedIfft,
}

impl ReconKind {
    pub fn description(self) -> &'static str {
        match self {
            ReconKind::CartesianIfft => "Cartesian inverse FFT",
            ReconKind::GriddedIfft => "nearest-neighbour gridding inverse FFT",
        }
    }

    /// Natural choice for a trajectory kind.
    pub fn default_for(kind: TrajectoryKind) -> Self {
        match kind {
            TrajectoryKind::Cartesian => ReconKind::CartesianIfft,
            _ => ReconKind::GriddedIfft,
        }
    }
}

/// Places an on-grid Cartesian frame on the centered `N x N` k-space grid,
/// zeros where lines were skipped.
fn place_cartesian(frame: &KSpaceFrame) -> Result<Array2<Complex64>> {
    let traj = &frame.traj;
    if traj.kind() != TrajectoryKind::Cartesian || !traj.is_on_grid() {
        return Err(Error::Unsupported(format!(
            "inverse DFT needs on-grid Cartesian data, got a {} trajectory; grid it first",
            traj.kind().description()
        )));
    }
    let n = traj.grid_n();
    let half = (n / 2) as f64;
    let mut grid = Array2::zeros((n, n));
    for (s, v) in traj.samples().iter().zip(&frame.values) {
        grid[[(s.ky + half) as usize, (s.kx + half) as usize]] = *v;
    }
    Ok(grid)
}

fn inverse(kspace: &Array2<Complex64>, scale: f64) -> ImageFrame {
    let mut wrapped = fft::centered_to_wrapped(kspace);
    fft::fft2(&mut wrapped, FftDirection::Inverse);
    let mut img = fft::wrapped_to_centered(&wrapped);
    img.mapv_inplace(|v| v * scale);
    ImageFrame::new(img)
}

/// Zero-filled inverse DFT with the `1/(Nx Ny)` prefactor:
/// `img(x, y) = 1/(Nx Ny) sum_k s(kx, ky) e^{+i 2 pi (kx x / Nx + ky y / Ny)}`.
pub fn idft_recon(frame: &KSpaceFrame) -> Result<ImageFrame> {
    let grid = place_cartesian(frame)?;
    let n = grid.nrows();
    Ok(inverse(&grid, 1.0 / (n * n) as f64))
}

/// Exact inverse of the forward model (no prefactor).
pub fn idft_unscaled(frame: &KSpaceFrame) -> Result<ImageFrame> {
    let grid = place_cartesian(frame)?;
    Ok(inverse(&grid, 1.0))
}

/// Bins every sample into its nearest Cartesian cell and averages cells hit
/// more than once. Samples rounding outside `[-N/2, N/2 - 1]` are dropped.
/// The result keeps only filled cells, ordered by their mean acquisition
/// time; missing cells are zero at reconstruction.
pub fn grid_noncartesian(frame: &KSpaceFrame) -> Result<KSpaceFrame> {
    let traj = &frame.traj;
    if traj.is_empty() {
        return Err(Error::invalid("trajectory", "cannot grid an empty trajectory"));
    }
    let n = traj.grid_n() as i64;
    let half = n / 2;
    // (ky, kx) -> (sum, time sum, count)
    let mut cells: BTreeMap<(i64, i64), (Complex64, f64, u32)> = BTreeMap::new();
    for (s, v) in traj.samples().iter().zip(&frame.values) {
        let (kx, ky) = (s.kx.round() as i64, s.ky.round() as i64);
        if kx < -half || kx >= half || ky < -half || ky >= half {
            continue;
        }
        let cell = cells.entry((ky, kx)).or_insert((Complex64::new(0.0, 0.0), 0.0, 0));
        cell.0 += v;
        cell.1 += s.t;
        cell.2 += 1;
    }
    let mut binned: Vec<(Sample, Complex64)> = cells
        .into_iter()
        .map(|((ky, kx), (sum, tsum, count))| {
            let c = f64::from(count);
            (
                Sample {
                    kx: kx as f64,
                    ky: ky as f64,
                    t: tsum / c,
                },
                sum / c,
            )
        })
        .collect();
    binned.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
    let (samples, values): (Vec<Sample>, Vec<Complex64>) = binned.into_iter().unzip();
    let gridded = Trajectory::from_samples(samples, TrajectoryKind::Cartesian, traj.grid_n(), traj.accel())?;
    KSpaceFrame::new(values, Arc::new(gridded), frame.coil_index)
}

/// Reconstructs one frame with the chosen method.
pub fn reconstruct(frame: &KSpaceFrame, kind: ReconKind) -> Result<ImageFrame> {
    match kind {
        ReconKind::CartesianIfft => idft_recon(frame),
        ReconKind::GriddedIfft => {
            if frame.traj.kind() == TrajectoryKind::Cartesian && frame.traj.is_on_grid() {
                idft_recon(frame)
            } else {
                idft_recon(&grid_noncartesian(frame)?)
            }
        }
    }
}

/// The frame's k-space as a centered `N x N` grid (gridded if off-grid).
pub fn kspace_to_grid(frame: &KSpaceFrame) -> Result<Array2<Complex64>> {
    if frame.traj.kind() == TrajectoryKind::Cartesian && frame.traj.is_on_grid() {
        place_cartesian(frame)
    } else {
        place_cartesian(&grid_noncartesian(frame)?)
    }
}

/// Voxelwise `sqrt(sum_j |img_j|^2)`.
pub fn combine_coils_rss(images: &[ImageFrame]) -> Result<Array2<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("images", "need at least one coil image"))?;
    let dim = first.dim();
    let mut acc = Array2::<f64>::zeros(dim);
    for img in images {
        if img.dim() != dim {
            return Err(Error::DimensionMismatch(format!("coil images {:?} and {:?}", dim, img.dim())));
        }
        acc.zip_mut_with(&img.data, |a, v| *a += v.norm_sqr());
    }
    acc.mapv_inplace(f64::sqrt);
    Ok(acc)
}
