//! Run configuration: a JSON tree with units in the field names
//! (`te_ms`, `tr_ms`, `eesp_ms`, `b0_t`). Every key has a default except the
//! phantom source; unknown keys are rejected.

use std::path::PathBuf;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ActivationSpec, BaselineRegion, TaskDesign};
use crate::phantom::{ActivationRegion, Plane, TissueSet, DEFAULT_DETAIL_FRACTION, DEFAULT_GRADIENT_T, SUPPORTED_SIZES};
use crate::recon::ReconKind;
use crate::trajectory::{build_trajectory, ScanParams, Sequence, TrajectoryKind};

/// Timestamp format used in configs and metadata.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSource {
    Generate(GenerateSpec),
    File(FileSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub size: usize,
    #[serde(default)]
    pub tissues: TissueSet,
    #[serde(default = "default_gradient")]
    pub gradient_t: f64,
    #[serde(default = "default_detail")]
    pub detail_fraction: f64,
}

fn default_gradient() -> f64 {
    DEFAULT_GRADIENT_T
}
fn default_detail() -> f64 {
    DEFAULT_DETAIL_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: PathBuf,
    /// optional activation-map-only file replacing the embedded map
    #[serde(default)]
    pub activation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub plane: Plane,
    /// 1-based
    pub index: usize,
}

impl Default for SliceSpec {
    fn default() -> Self {
        SliceSpec {
            plane: Plane::Axial,
            index: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSpec {
    pub sequence: Sequence,
    pub b0_t: f64,
    pub te_ms: f64,
    pub tr_ms: f64,
    pub ti_ms: Option<f64>,
    pub flip_deg: f64,
    pub eesp_ms: f64,
    pub accel: usize,
    pub n_coils: usize,
    pub include_delta_b: bool,
    /// evaluate every sample at TE
    pub assume_te: bool,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            sequence: Sequence::Gre,
            b0_t: 3.0,
            te_ms: 60.4,
            tr_ms: 1000.0,
            ti_ms: None,
            flip_deg: 90.0,
            eesp_ms: 0.832,
            accel: 1,
            n_coils: 1,
            include_delta_b: true,
            assume_te: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSpec {
    pub n_initial_rest: usize,
    pub n_epochs: usize,
    pub n_task_per_epoch: usize,
    pub n_rest_per_epoch: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            n_initial_rest: 16,
            n_epochs: 19,
            n_task_per_epoch: 16,
            n_rest_per_epoch: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivationConfig {
    pub snr: f64,
    pub cnr: f64,
    pub trpc_deg: f64,
    pub baseline: BaselineRegion,
    /// sphere for generated activation maps; default is the built-in region
    pub region: Option<ActivationRegion>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            snr: 5.0,
            cnr: 0.5,
            trpc_deg: 0.0,
            baseline: BaselineRegion::Active,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub phantom: Option<PhantomSource>,
    #[serde(default)]
    pub slice: SliceSpec,
    #[serde(default)]
    pub scan: ScanSpec,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default)]
    pub activation: ActivationConfig,
    #[serde(default = "default_trajectory")]
    pub trajectory: TrajectoryKind,
    /// defaults to the natural method for the trajectory
    #[serde(default)]
    pub recon: Option<ReconKind>,
    /// drawn at random and recorded when absent
    #[serde(default)]
    pub seed: Option<u64>,
    /// `YYYY-MM-DDTHH:MM:SS`; the current time is recorded when absent
    #[serde(default)]
    pub timestamp: Option<String>,
    /// store reconstructed images next to k-space in the archive
    #[serde(default = "default_true")]
    pub save_images: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_trajectory() -> TrajectoryKind {
    TrajectoryKind::Cartesian
}
fn default_true() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: None,
            slice: SliceSpec::default(),
            scan: ScanSpec::default(),
            design: DesignSpec::default(),
            activation: ActivationConfig::default(),
            trajectory: default_trajectory(),
            recon: None,
            seed: None,
            timestamp: None,
            save_images: true,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// The worked-example experiment: 96³ generated phantom, axial slice 48,
    /// GRE, Cartesian, 624 frames at SNR 5 and CNR 0.5.
    pub fn example() -> Self {
        RunConfig {
            phantom: Some(PhantomSource::Generate(GenerateSpec {
                size: 96,
                tissues: TissueSet::default(),
                gradient_t: DEFAULT_GRADIENT_T,
                detail_fraction: DEFAULT_DETAIL_FRACTION,
            })),
            ..RunConfig::default()
        }
    }

    /// Phantom edge length when it is known without reading a file.
    pub fn phantom_size(&self) -> Option<usize> {
        match &self.phantom {
            Some(PhantomSource::Generate(g)) => Some(g.size),
            _ => None,
        }
    }

    pub fn recon_kind(&self) -> ReconKind {
        self.recon.unwrap_or_else(|| ReconKind::default_for(self.trajectory))
    }

    pub fn scan_params(&self, grid_n: usize) -> ScanParams {
        let s = &self.scan;
        ScanParams {
            sequence: s.sequence,
            b0: s.b0_t,
            te: s.te_ms * 1e-3,
            tr: s.tr_ms * 1e-3,
            ti: s.ti_ms.map(|t| t * 1e-3),
            flip_deg: s.flip_deg,
            eesp: s.eesp_ms * 1e-3,
            accel: s.accel,
            n_coils: s.n_coils,
            grid_n,
            include_delta_b: s.include_delta_b,
            assume_te: s.assume_te,
        }
    }

    pub fn task_design(&self) -> TaskDesign {
        let d = &self.design;
        TaskDesign {
            n_initial_rest: d.n_initial_rest,
            n_epochs: d.n_epochs,
            n_task_per_epoch: d.n_task_per_epoch,
            n_rest_per_epoch: d.n_rest_per_epoch,
            tr: self.scan.tr_ms * 1e-3,
        }
    }

    pub fn activation_spec(&self) -> ActivationSpec {
        ActivationSpec {
            snr: self.activation.snr,
            cnr: self.activation.cnr,
            trpc_deg: self.activation.trpc_deg,
        }
    }

    pub fn parsed_timestamp(&self) -> Result<Option<NaiveDateTime>> {
        self.timestamp
            .as_deref()
            .map(|t| {
                NaiveDateTime::parse_from_str(t, TIMESTAMP_FORMAT)
                    .map_err(|e| Error::invalid("timestamp", format!("expected YYYY-MM-DDTHH:MM:SS ({e})")))
            })
            .transpose()
    }

    /// Cross-field checks that need no file access. The phantom size of a
    /// file source is checked again when the file is read.
    pub fn validate(&self) -> Result<()> {
        let source = self
            .phantom
            .as_ref()
            .ok_or_else(|| Error::invalid("phantom", "phantom source required"))?;
        if let PhantomSource::Generate(g) = source {
            if !SUPPORTED_SIZES.contains(&g.size) {
                return Err(Error::invalid("phantom.size", format!("must be one of {SUPPORTED_SIZES:?}, got {}", g.size)));
            }
            if !g.gradient_t.is_finite() || !g.detail_fraction.is_finite() {
                return Err(Error::invalid("phantom", "gradient_t and detail_fraction must be finite"));
            }
        }
        if self.scan.accel < 1 {
            return Err(Error::invalid("accel", "must be at least 1"));
        }
        if self.scan.sequence == Sequence::Ir && self.scan.ti_ms.is_none() {
            return Err(Error::invalid("ti", "required for the IR sequence (set scan.ti_ms)"));
        }
        if self.slice.index < 1 {
            return Err(Error::invalid("slice.index", "is 1-based"));
        }
        if self.recon_kind() == ReconKind::CartesianIfft && self.trajectory != TrajectoryKind::Cartesian {
            return Err(Error::invalid("recon", "cartesian_ifft needs the Cartesian trajectory"));
        }
        self.parsed_timestamp()?;
        crate::experiment::build_design(&self.task_design())?;
        self.activation_spec().validate()?;
        if let Some(size) = self.phantom_size() {
            self.validate_for_size(size)?;
        }
        Ok(())
    }

    /// Checks that depend on the phantom edge length.
    pub fn validate_for_size(&self, size: usize) -> Result<()> {
        if self.slice.index > size {
            return Err(Error::invalid("slice.index", format!("must lie in 1..={size}")));
        }
        let params = self.scan_params(size);
        params.validate()?;
        build_trajectory(self.trajectory, &params)?;
        Ok(())
    }
}

/// Parses and validates a config. Empty text is treated as `{}`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
