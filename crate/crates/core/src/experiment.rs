//! Block-design task experiments: design vectors, image-space activation and
//! time-series simulation.

use std::sync::Arc;

use chrono::NaiveDateTime;
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{add_kspace_noise, calibrate, Calibration, NoiseParams};
use crate::phantom::{Plane, SliceMaps};
use crate::recon::{combine_coils_rss, reconstruct, ImageFrame, ReconKind};
use crate::signal::{coil_sensitivities, simulate_frame, KSpaceFrame, SensitivityMap};
use crate::trajectory::{ScanParams, Sequence, Trajectory, TrajectoryKind};

/// Block design: initial rest, then `n_epochs` of task followed by rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDesign {
    pub n_initial_rest: usize,
    pub n_epochs: usize,
    pub n_task_per_epoch: usize,
    pub n_rest_per_epoch: usize,
    /// frame period, seconds
    pub tr: f64,
}

impl TaskDesign {
    pub fn total(&self) -> usize {
        self.n_initial_rest + self.n_epochs * (self.n_task_per_epoch + self.n_rest_per_epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignVector {
    pub x: Vec<u8>,
}

impl DesignVector {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_task(&self) -> usize {
        self.x.iter().filter(|&&v| v == 1).count()
    }
}

pub fn build_design(d: &TaskDesign) -> Result<DesignVector> {
    if d.total() == 0 {
        return Err(Error::invalid("design", "produces zero images"));
    }
    if !(d.tr > 0.0) {
        return Err(Error::invalid("tr", "must be positive"));
    }
    let mut x = vec![0u8; d.n_initial_rest];
    for _ in 0..d.n_epochs {
        x.extend(std::iter::repeat_n(1, d.n_task_per_epoch));
        x.extend(std::iter::repeat_n(0, d.n_rest_per_epoch));
    }
    Ok(DesignVector { x })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub snr: f64,
    pub cnr: f64,
    /// task-related phase change, degrees
    pub trpc_deg: f64,
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0) {
            return Err(Error::invalid("snr", "must be positive"));
        }
        if !(self.cnr >= 0.0) || !self.cnr.is_finite() {
            return Err(Error::invalid("cnr", "must be finite and non-negative"));
        }
        if !(-180.0..=180.0).contains(&self.trpc_deg) {
            return Err(Error::invalid("trpc_deg", "must lie in [-180, 180]"));
        }
        Ok(())
    }
}

/// Task-state slice: active voxels get their gain multiplied by
/// `(beta0 + beta1) / beta0 * e^{i trpc}`. Rest frames (`x_t = 0`) are
/// returned unchanged.
pub fn apply_activation(slice: &SliceMaps, spec: &ActivationSpec, beta0: f64, beta1: f64, x_t: u8) -> Result<SliceMaps> {
    if !(beta0 > 0.0) {
        return Err(Error::invalid("beta0", "must be positive"));
    }
    let mut out = slice.clone();
    if x_t == 0 {
        return Ok(out);
    }
    if slice.active_voxel_count() == 0 {
        if spec.cnr > 0.0 || spec.trpc_deg != 0.0 {
            log::warn!("activation requested but the slice has no active voxels");
        }
        return Ok(out);
    }
    let factor = Complex64::from_polar((beta0 + beta1) / beta0, spec.trpc_deg.to_radians());
    out.gain.zip_mut_with(&slice.act_map, |g, &a| {
        if a == 1 {
            *g *= factor;
        }
    });
    Ok(out)
}

/// Voxels that define the baseline magnitude for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineRegion {
    #[default]
    Active,
    Brain,
}

/// Everything needed to produce a series.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub slice: SliceMaps,
    pub traj: Arc<Trajectory>,
    pub params: ScanParams,
    pub design: DesignVector,
    pub spec: ActivationSpec,
    pub recon: ReconKind,
    pub baseline: BaselineRegion,
}

/// Holds the noiseless rest and task frames for every coil; individual time
/// points add an independent noise substream on top.
#[derive(Debug, Clone)]
pub struct Simulator {
    setup: SimulationSetup,
    coils: Vec<SensitivityMap>,
    rest: Vec<KSpaceFrame>,
    task: Vec<KSpaceFrame>,
    calibration: Calibration,
    baseline_region: BaselineRegion,
    sigma_k: f64,
}

impl Simulator {
    pub fn new(setup: SimulationSetup) -> Result<Self> {
        setup.params.validate()?;
        setup.spec.validate()?;
        if setup.design.is_empty() {
            return Err(Error::invalid("design", "produces zero images"));
        }
        let n = setup.params.grid_n;
        if setup.slice.dim() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "slice is {:?}, grid_n is {n}",
                setup.slice.dim()
            )));
        }
        if setup.recon == ReconKind::CartesianIfft && setup.traj.kind() != TrajectoryKind::Cartesian {
            return Err(Error::invalid("recon", "the Cartesian inverse FFT needs a Cartesian trajectory"));
        }
        let coils = coil_sensitivities(setup.params.n_coils, n)?;
        let rest = frames_for(&setup.slice, &setup.traj, &setup.params, &coils)?;

        let images = rest
            .iter()
            .map(|f| reconstruct(f, setup.recon))
            .collect::<Result<Vec<_>>>()?;
        let magnitude = combine_coils_rss(&images)?;
        let (baseline_region, beta0) = baseline(&setup.slice, &magnitude, setup.baseline)?;
        let calibration = calibrate(setup.spec.snr, setup.spec.cnr, beta0, n, n)?;

        let active = setup.design.n_task() > 0
            && setup.slice.active_voxel_count() > 0
            && (calibration.beta1 > 0.0 || setup.spec.trpc_deg != 0.0);
        let task = if active {
            let slice = apply_activation(&setup.slice, &setup.spec, calibration.beta0, calibration.beta1, 1)?;
            frames_for(&slice, &setup.traj, &setup.params, &coils)?
        } else {
            if setup.design.n_task() > 0 && setup.slice.active_voxel_count() == 0 && setup.spec.cnr > 0.0 {
                log::warn!("activation requested but the slice has no active voxels");
            }
            rest.clone()
        };
        let sigma_k = calibration.sigma_k;
        Ok(Simulator {
            setup,
            coils,
            rest,
            task,
            calibration,
            baseline_region,
            sigma_k,
        })
    }

    /// Replaces the calibrated k-space noise level (e.g. 0 for noiseless
    /// series). Activation amplitudes stay calibrated.
    pub fn with_sigma_k(mut self, sigma_k: f64) -> Result<Self> {
        if !(sigma_k >= 0.0) || !sigma_k.is_finite() {
            return Err(Error::invalid("sigma_k", "must be finite and non-negative"));
        }
        self.sigma_k = sigma_k;
        Ok(self)
    }

    pub fn setup(&self) -> &SimulationSetup {
        &self.setup
    }
    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }
    /// Region actually used for the baseline (falls back to the whole brain
    /// when the slice has no active voxels).
    pub fn baseline_region(&self) -> BaselineRegion {
        self.baseline_region
    }
    pub fn sigma_k(&self) -> f64 {
        self.sigma_k
    }
    pub fn design(&self) -> &DesignVector {
        &self.setup.design
    }
    pub fn n_frames(&self) -> usize {
        self.setup.design.len()
    }
    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }
    pub fn coils(&self) -> &[SensitivityMap] {
        &self.coils
    }

    /// Noiseless frames for a design state, one per coil.
    pub fn noiseless(&self, x_t: u8) -> &[KSpaceFrame] {
        if x_t == 1 {
            &self.task
        } else {
            &self.rest
        }
    }

    /// Noiseless reconstructed rest images, one per coil.
    pub fn reference_images(&self) -> Result<Vec<ImageFrame>> {
        self.rest.iter().map(|f| reconstruct(f, self.setup.recon)).collect()
    }

    /// Frame `t` (0-based) for every coil with noise from `seed`.
    pub fn frame(&self, t: usize, seed: u64) -> Result<Vec<KSpaceFrame>> {
        let x_t = *self
            .setup
            .design
            .x
            .get(t)
            .ok_or_else(|| Error::invalid("frame", format!("index {t} beyond {} frames", self.n_frames())))?;
        let np = NoiseParams {
            sigma_k: self.sigma_k,
            seed,
        };
        self.noiseless(x_t).iter().map(|f| add_kspace_noise(f, &np, t)).collect()
    }

    /// Reconstructed images of frame `t`, one per coil.
    pub fn images(&self, frames: &[KSpaceFrame]) -> Result<Vec<ImageFrame>> {
        frames.iter().map(|f| reconstruct(f, self.setup.recon)).collect()
    }

    /// Frames `range` in parallel, assembled in frame order.
    pub fn frames(&self, range: std::ops::Range<usize>, seed: u64) -> Result<Vec<Vec<KSpaceFrame>>> {
        range.into_par_iter().map(|t| self.frame(t, seed)).collect()
    }
}

fn frames_for(
    slice: &SliceMaps,
    traj: &Arc<Trajectory>,
    params: &ScanParams,
    coils: &[SensitivityMap],
) -> Result<Vec<KSpaceFrame>> {
    coils
        .iter()
        .enumerate()
        .map(|(j, c)| simulate_frame(slice, traj, params, c, j))
        .collect()
}

fn baseline(slice: &SliceMaps, magnitude: &Array2<f64>, region: BaselineRegion) -> Result<(BaselineRegion, f64)> {
    let mean_over = |pick: &dyn Fn((usize, usize)) -> bool| {
        let (sum, count) = magnitude
            .indexed_iter()
            .filter(|(idx, _)| pick(*idx))
            .fold((0.0, 0usize), |(s, c), (_, &m)| (s + m, c + 1));
        (count > 0).then(|| sum / count as f64)
    };
    let brain = |idx: (usize, usize)| slice.m0[idx] > 0.0;
    let used = match region {
        BaselineRegion::Active if slice.active_voxel_count() > 0 => BaselineRegion::Active,
        BaselineRegion::Active => {
            log::warn!("no active voxels in the slice; calibrating against the whole-brain mean");
            BaselineRegion::Brain
        }
        BaselineRegion::Brain => BaselineRegion::Brain,
    };
    let value = match used {
        BaselineRegion::Active => mean_over(&|idx| slice.act_map[idx] == 1),
        BaselineRegion::Brain => mean_over(&brain),
    };
    match value {
        Some(v) if v > 0.0 => Ok((used, v)),
        _ => Err(Error::invalid("slice", "contains no signal to calibrate against")),
    }
}

/// Complete series held in memory, `frames[t][coil]`.
#[derive(Debug, Clone)]
pub struct KSpaceSeries {
    pub frames: Vec<Vec<KSpaceFrame>>,
    pub design: DesignVector,
    pub calibration: Calibration,
    pub sigma_k: f64,
    pub seed: u64,
}

/// Simulates every frame of the design. For long series prefer
/// [`Simulator::frame`] and stream.
pub fn simulate_time_series(setup: SimulationSetup, seed: u64) -> Result<KSpaceSeries> {
    let sim = Simulator::new(setup)?;
    let frames = sim.frames(0..sim.n_frames(), seed)?;
    Ok(KSpaceSeries {
        frames,
        design: sim.design().clone(),
        calibration: *sim.calibration(),
        sigma_k: sim.sigma_k(),
        seed,
    })
}

/// Inputs for the run summary paragraph. Times in ms, as configured.
#[derive(Debug, Clone)]
pub struct SummaryFields {
    pub timestamp: NaiveDateTime,
    pub slice_index: usize,
    pub phantom_size: usize,
    pub plane: Plane,
    pub accel: usize,
    pub b0: f64,
    pub te_ms: f64,
    pub tr_ms: f64,
    pub ti_ms: Option<f64>,
    pub flip_deg: f64,
    pub eesp_ms: f64,
    pub n_coils: usize,
    pub sequence: Sequence,
    pub trajectory: TrajectoryKind,
    pub design: TaskDesign,
    pub spec: ActivationSpec,
    pub recon: ReconKind,
}

pub fn summarize_run(f: &SummaryFields) -> String {
    let ti = match (f.sequence, f.ti_ms) {
        (Sequence::Ir, Some(ti)) => format!(", TI = {ti}ms"),
        _ => String::new(),
    };
    format!(
        "The following fMRI time series data was simulated on {date} at {time}. \
         The simulated time series is of slice {slice} from a size {size} phantom in the {plane} plane. \
         The MRI parameters were set to be the following: Acceleration Factor = {accel}, \
         Field Strength = {b0}T, TE = {te}ms, TR = {tr}ms{ti}, Flip Angle = {flip}deg, EESP = {eesp}ms, \
         and Number of Coils = {coils}. \
         The data was simulated with the {seq} signal equation using the {traj} k-space trajectory. \
         The experimental design involved an initial {rest0} rest images followed by {epochs} epochs, \
         each consisting of {task} task images followed by {rest} rest images for a total of {total} images. \
         The SNR was set to {snr} and the CNR was set to {cnr}. \
         There were {trpc} degrees of phase added to the activation. \
         Images were reconstructed using the {recon} algorithm.",
        date = f.timestamp.format("%d-%b-%Y"),
        time = f.timestamp.format("%H:%M:%S"),
        slice = f.slice_index,
        size = f.phantom_size,
        plane = f.plane.name(),
        accel = f.accel,
        b0 = f.b0,
        te = f.te_ms,
        tr = f.tr_ms,
        flip = f.flip_deg,
        eesp = f.eesp_ms,
        coils = f.n_coils,
        seq = f.sequence.description(),
        traj = f.trajectory.description(),
        rest0 = f.design.n_initial_rest,
        epochs = f.design.n_epochs,
        task = f.design.n_task_per_epoch,
        rest = f.design.n_rest_per_epoch,
        total = f.design.total(),
        snr = f.spec.snr,
        cnr = f.spec.cnr,
        trpc = f.spec.trpc_deg,
        recon = f.recon.description(),
    )
}
