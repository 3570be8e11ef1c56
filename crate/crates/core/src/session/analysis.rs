//! Reading archives back for display and statistics.

use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::SliceMaps;
use crate::recon::{combine_coils_rss, kspace_to_grid, reconstruct, ImageFrame};
use crate::stats::{snr_map, ttest_map, voxel_histogram, Histogram, Part, StatKind, StatMap, Theory};

use super::archive::{ArchiveMetadata, FrameRecord, SeriesReader};

/// Image-space frames of a record, reconstructing when the archive holds only
/// k-space.
pub fn record_images(meta: &ArchiveMetadata, rec: &FrameRecord) -> Result<Vec<ImageFrame>> {
    match &rec.images {
        Some(im) => Ok(im.clone()),
        None => rec.kspace.iter().map(|k| reconstruct(k, meta.recon)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    #[default]
    Image,
    Kspace,
}

impl FromStr for Space {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "image" => Ok(Space::Image),
            "kspace" | "k-space" => Ok(Space::Kspace),
            _ => Err(Error::invalid("space", format!("unknown space {s:?} (image, kspace)"))),
        }
    }
}

/// One component of a frame as a grid. Image magnitude without a coil is the
/// RSS combination; everything else reads a single coil (0 by default).
/// Non-Cartesian k-space is shown on its nearest-cell grid.
pub fn frame_grid(meta: &ArchiveMetadata, rec: &FrameRecord, part: Part, space: Space, coil: Option<usize>) -> Result<Array2<f64>> {
    if let Some(c) = coil {
        if c >= meta.n_coils {
            return Err(Error::invalid("coil", format!("{c} beyond {} coils", meta.n_coils)));
        }
    }
    let c = coil.unwrap_or(0);
    match space {
        Space::Image => {
            let images = record_images(meta, rec)?;
            if part == Part::Magnitude && coil.is_none() {
                combine_coils_rss(&images)
            } else {
                Ok(images[c].data.mapv(|v| part.of(v)))
            }
        }
        Space::Kspace => Ok(kspace_to_grid(&rec.kspace[c])?.mapv(|v| part.of(v))),
    }
}

/// Names of the maps [`slice_map`] serves.
pub const SLICE_MAPS: [&str; 5] = ["m0", "t1", "t2star", "delta_b", "act_map"];

pub fn slice_map(slice: &SliceMaps, name: &str) -> Result<Array2<f64>> {
    Ok(match name {
        "m0" => slice.m0.clone(),
        "t1" => slice.t1.clone(),
        "t2star" => slice.t2star.clone(),
        "delta_b" => slice.delta_b.clone(),
        "act_map" => slice.act_map.mapv(f64::from),
        _ => return Err(Error::invalid("map", format!("unknown map {name:?} (one of {SLICE_MAPS:?})"))),
    })
}

/// RSS magnitude image of every frame.
pub fn magnitude_series(reader: &mut SeriesReader) -> Result<Vec<Array2<f64>>> {
    let n = reader.metadata().n_frames;
    (0..n)
        .map(|t| {
            let rec = reader.read_frame(t)?;
            combine_coils_rss(&record_images(reader.metadata(), &rec)?)
        })
        .collect()
}

/// t or SNR map of the magnitude series.
pub fn stat_map(reader: &mut SeriesReader, kind: StatKind, threshold: f64, skip_initial: usize) -> Result<StatMap> {
    let series = magnitude_series(reader)?;
    let design = &reader.metadata().design;
    let mut map = match kind {
        StatKind::Tstat => ttest_map(&series, design, skip_initial)?,
        StatKind::Snr => snr_map(&series, design, skip_initial)?,
    };
    map.threshold = threshold;
    Ok(map)
}

/// Per-component noise standard deviation in image space.
pub fn image_sigma(meta: &ArchiveMetadata) -> f64 {
    meta.sigma_k / meta.grid_n as f64
}

/// Everything the voxel view shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelReport {
    pub x: usize,
    pub y: usize,
    pub part: Part,
    /// `None` for the coil-combined magnitude
    pub coil: Option<usize>,
    pub series: Vec<f64>,
    pub design: Vec<u8>,
    /// histogram of the rest frames against the noiseless rest value
    pub histogram: Option<Histogram>,
}

/// Time series of one voxel. Magnitude over several coils is the RSS value
/// unless a coil is named; other parts need a coil (0 by default).
pub fn voxel_report(
    reader: &mut SeriesReader,
    x: usize,
    y: usize,
    part: Part,
    coil: Option<usize>,
    bins: usize,
) -> Result<VoxelReport> {
    let meta = reader.metadata().clone();
    let n = meta.grid_n;
    if x >= n || y >= n {
        return Err(Error::invalid("voxel", format!("({x}, {y}) outside the {n}x{n} grid")));
    }
    if let Some(c) = coil {
        if c >= meta.n_coils {
            return Err(Error::invalid("coil", format!("{c} beyond {} coils", meta.n_coils)));
        }
    }
    let combined = part == Part::Magnitude && coil.is_none() && meta.n_coils > 1;
    let coil_used = if combined { None } else { Some(coil.unwrap_or(0)) };

    let mut series = Vec::with_capacity(meta.n_frames);
    for t in 0..meta.n_frames {
        let images = record_images(&meta, &reader.read_frame(t)?)?;
        let v = match coil_used {
            Some(c) => part.of(images[c].data[[y, x]]),
            None => images.iter().map(|im| im.data[[y, x]].norm_sqr()).sum::<f64>().sqrt(),
        };
        series.push(v);
    }

    let reference: Vec<Complex64> = reader.reference().iter().map(|im| im.data[[y, x]]).collect();
    let (rho, theta, n_coils) = match coil_used {
        Some(c) => (reference[c].norm(), reference[c].arg(), 1),
        None => (reference.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(), 0.0, meta.n_coils as u32),
    };
    let sigma = image_sigma(&meta);
    let rest: Vec<f64> = series
        .iter()
        .zip(&meta.design.x)
        .filter(|(_, &xt)| xt == 0)
        .map(|(&v, _)| v)
        .collect();
    let histogram = if sigma > 0.0 && !rest.is_empty() {
        let theory = Theory::for_part(part, rho, theta, sigma, n_coils)?;
        Some(voxel_histogram(&rest, part, bins, theory)?)
    } else {
        None
    };
    Ok(VoxelReport {
        x,
        y,
        part,
        coil: coil_used,
        series,
        design: meta.design.x.clone(),
        histogram,
    })
}
