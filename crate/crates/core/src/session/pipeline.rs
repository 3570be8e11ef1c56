//! The one orchestration path shared by the command line and the service:
//! config -> phantom -> slice -> trajectory -> simulator -> archive.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDateTime;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{build_design, summarize_run, SimulationSetup, Simulator, SummaryFields};
use crate::phantom::{
    default_geometry, generate_activation_map, generate_phantom_with, load_activation_map,
    load_phantom, PhantomConfig, PhantomVolume,
};
use crate::recon::ImageFrame;
use crate::trajectory::build_trajectory;

use super::archive::{ArchiveMetadata, SeriesWriter};
use super::config::{PhantomSource, RunConfig, TIMESTAMP_FORMAT};

pub const ARCHIVE_NAME: &str = "series.shk";
pub const SUMMARY_NAME: &str = "summary.txt";
pub const CONFIG_NAME: &str = "config.json";

/// Fills in a random seed and the current time where the config leaves them
/// open. Seeds stay below 2^53 so they survive JSON consumers using doubles.
pub fn resolve(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    if c.seed.is_none() {
        c.seed = Some(rand::random::<u64>() >> 11);
    }
    if c.timestamp.is_none() {
        c.timestamp = Some(chrono::Local::now().naive_local().format(TIMESTAMP_FORMAT).to_string());
    }
    c
}

/// Loads or generates the phantom, with the activation map the config asks for.
pub fn load_config_phantom(config: &RunConfig) -> Result<PhantomVolume> {
    let source = config
        .phantom
        .as_ref()
        .ok_or_else(|| Error::invalid("phantom", "phantom source required"))?;
    let volume = match source {
        PhantomSource::Generate(g) => {
            let p = generate_phantom_with(&PhantomConfig {
                size: g.size,
                tissues: g.tissues,
                gradient_t: g.gradient_t,
                detail_fraction: g.detail_fraction,
                geometry: default_geometry(),
            })?;
            match &config.activation.region {
                Some(region) => {
                    let act = generate_activation_map(&p, region)?;
                    p.with_activation_map(act)?
                }
                None => p,
            }
        }
        PhantomSource::File(f) => {
            let p = load_phantom(&f.path)?;
            let p = match &f.activation {
                Some(path) => {
                    let act = load_activation_map(path)?;
                    p.with_activation_map(act)?
                }
                None => p,
            };
            match &config.activation.region {
                Some(region) => {
                    let act = generate_activation_map(&p, region)?;
                    p.with_activation_map(act)?
                }
                None => p,
            }
        }
    };
    Ok(volume)
}

/// A validated run ready to produce frames.
pub struct PreparedRun {
    pub config: RunConfig,
    pub simulator: Simulator,
    pub metadata: ArchiveMetadata,
}

impl PreparedRun {
    pub fn n_frames(&self) -> usize {
        self.simulator.n_frames()
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or_default()
    }

    /// Images of one frame when the config stores them.
    fn images(&self, frames: &[crate::signal::KSpaceFrame]) -> Result<Option<Vec<ImageFrame>>> {
        self.config.save_images.then(|| self.simulator.images(frames)).transpose()
    }

    /// Streams every frame into an archive at `path`, calling `progress`
    /// with the number of completed frames after each one.
    pub fn write_archive(&self, path: impl AsRef<Path>, mut progress: impl FnMut(usize)) -> Result<()> {
        let reference = self.simulator.reference_images()?;
        let traj = Arc::clone(&self.simulator.setup().traj);
        let mut writer = SeriesWriter::create(path, &self.metadata, &traj, &reference)?;
        let chunk = (rayon::current_num_threads() * 2).max(4);
        let seed = self.seed();
        let n = self.n_frames();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let batch = (start..end)
                .into_par_iter()
                .map(|t| {
                    let k = self.simulator.frame(t, seed)?;
                    let im = self.images(&k)?;
                    Ok((k, im))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, (k, im)) in batch.iter().enumerate() {
                writer.write_frame(start + i, k, im.as_deref())?;
                progress(start + i + 1);
            }
            start = end;
        }
        writer.finish()
    }
}

/// Validates `config`, resolves seed and timestamp, and builds the simulator.
pub fn prepare(config: &RunConfig) -> Result<PreparedRun> {
    config.validate()?;
    let config = resolve(config);
    let phantom = load_config_phantom(&config)?;
    let size = phantom.size();
    config.validate_for_size(size)?;

    let slice = phantom.extract_slice(config.slice.plane, config.slice.index)?;
    let params = config.scan_params(size);
    let traj = Arc::new(build_trajectory(config.trajectory, &params)?);
    let design = build_design(&config.task_design())?;
    let recon = config.recon_kind();
    let simulator = Simulator::new(SimulationSetup {
        slice,
        traj: Arc::clone(&traj),
        params,
        design: design.clone(),
        spec: config.activation_spec(),
        recon,
        baseline: config.activation.baseline,
    })?;

    let timestamp = config.timestamp.clone().unwrap_or_default();
    let when = NaiveDateTime::parse_from_str(&timestamp, TIMESTAMP_FORMAT)
        .map_err(|e| Error::invalid("timestamp", e.to_string()))?;
    let summary = summarize_run(&SummaryFields {
        timestamp: when,
        slice_index: config.slice.index,
        phantom_size: size,
        plane: config.slice.plane,
        accel: config.scan.accel,
        b0: config.scan.b0_t,
        te_ms: config.scan.te_ms,
        tr_ms: config.scan.tr_ms,
        ti_ms: config.scan.ti_ms,
        flip_deg: config.scan.flip_deg,
        eesp_ms: config.scan.eesp_ms,
        n_coils: config.scan.n_coils,
        sequence: config.scan.sequence,
        trajectory: config.trajectory,
        design: config.task_design(),
        spec: config.activation_spec(),
        recon,
    });
    let metadata = ArchiveMetadata {
        config: config.clone(),
        summary,
        timestamp,
        grid_n: size,
        n_frames: design.len(),
        n_coils: simulator.n_coils(),
        n_samples: traj.len(),
        trajectory: config.trajectory,
        recon,
        has_images: config.save_images,
        design,
        calibration: *simulator.calibration(),
        sigma_k: simulator.sigma_k(),
        baseline_region: simulator.baseline_region(),
        generator: concat!("fmrisim ", env!("CARGO_PKG_VERSION")).to_string(),
    };
    Ok(PreparedRun {
        config,
        simulator,
        metadata,
    })
}

/// Files produced by [`simulate_to_dir`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub archive: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub metadata: ArchiveMetadata,
}

/// Writes the archive, the summary text and the resolved config into `dir`.
pub fn write_outputs(run: &PreparedRun, dir: impl AsRef<Path>, progress: impl FnMut(usize)) -> Result<RunOutputs> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let config = dir.join(CONFIG_NAME);
    std::fs::write(&config, serde_json::to_string_pretty(&run.config)?)?;
    let summary = dir.join(SUMMARY_NAME);
    std::fs::write(&summary, format!("{}\n", run.metadata.summary))?;
    let archive = dir.join(ARCHIVE_NAME);
    run.write_archive(&archive, progress)?;
    Ok(RunOutputs {
        archive,
        summary,
        config,
        metadata: run.metadata.clone(),
    })
}

/// Prepares and runs `config`, writing into `dir`.
pub fn simulate_to_dir(config: &RunConfig, dir: impl AsRef<Path>, progress: impl FnMut(usize)) -> Result<RunOutputs> {
    let run = prepare(config)?;
    write_outputs(&run, dir, progress)
}
