//! Single-file series archive.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SHKTS1"  u16 major  u16 minor
//! u64 metadata length, metadata JSON, u32 crc
//! u64 sample count, (kx, ky, t) f64 per sample, u32 crc
//! reference images: n_coils * N * N (re, im) f64, u32 crc
//! per frame t, per coil c: u32 t, u32 c, k-space (re, im) f64,
//!     [image (re, im) f64 when has_images], u32 crc of the record
//! ```
//!
//! Frame records have a fixed size, so frames can be read at random and a
//! partially written archive exposes every completed frame.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{BaselineRegion, DesignVector};
use crate::noise::Calibration;
use crate::recon::{ImageFrame, ReconKind};
use crate::signal::KSpaceFrame;
use crate::trajectory::{Sample, Trajectory, TrajectoryKind};

use super::config::RunConfig;

pub const MAGIC: &[u8; 6] = b"SHKTS1";
pub const MAJOR_VERSION: u16 = 1;
pub const MINOR_VERSION: u16 = 0;

/// Everything needed to interpret and replay an archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    /// config with seed and timestamp resolved
    pub config: RunConfig,
    pub summary: String,
    pub timestamp: String,
    pub grid_n: usize,
    pub n_frames: usize,
    pub n_coils: usize,
    pub n_samples: usize,
    pub trajectory: TrajectoryKind,
    pub recon: ReconKind,
    pub has_images: bool,
    pub design: DesignVector,
    pub calibration: Calibration,
    pub sigma_k: f64,
    pub baseline_region: BaselineRegion,
    pub generator: String,
}

/// One time point: a k-space frame per coil and, optionally, its image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub kspace: Vec<KSpaceFrame>,
    pub images: Option<Vec<ImageFrame>>,
}

/// Fully loaded archive.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesArchive {
    pub metadata: ArchiveMetadata,
    pub trajectory: Arc<Trajectory>,
    /// noiseless rest images, one per coil
    pub reference: Vec<ImageFrame>,
    pub frames: Vec<FrameRecord>,
}

fn put_complex(buf: &mut Vec<u8>, values: impl IntoIterator<Item = Complex64>) {
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn get_complex(bytes: &[u8]) -> Vec<Complex64> {
    let mut f = vec![0.0; bytes.len() / 8];
    LittleEndian::read_f64_into(bytes, &mut f);
    f.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

fn write_block<W: Write>(w: &mut W, body: &[u8]) -> Result<()> {
    w.write_all(body)?;
    w.write_u32::<LittleEndian>(crc32fast::hash(body))?;
    Ok(())
}

fn read_block<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let crc = r.read_u32::<LittleEndian>()?;
    if crc != crc32fast::hash(&body) {
        return Err(Error::Malformed(format!("checksum failure in the {what} block")));
    }
    Ok(body)
}

fn image_bytes(n: usize) -> usize {
    n * n * 16
}

fn record_bytes(meta: &ArchiveMetadata) -> usize {
    let image = if meta.has_images { image_bytes(meta.grid_n) } else { 0 };
    8 + meta.n_samples * 16 + image + 4
}

/// Streams frames to disk as they are produced.
pub struct SeriesWriter {
    out: BufWriter<File>,
    meta: ArchiveMetadata,
    traj: Arc<Trajectory>,
    next: usize,
}

impl SeriesWriter {
    pub fn create(
        path: impl AsRef<Path>,
        meta: &ArchiveMetadata,
        traj: &Arc<Trajectory>,
        reference: &[ImageFrame],
    ) -> Result<Self> {
        if traj.len() != meta.n_samples {
            return Err(Error::DimensionMismatch(format!(
                "metadata has {} samples, trajectory {}",
                meta.n_samples,
                traj.len()
            )));
        }
        let n = meta.grid_n;
        if reference.len() != meta.n_coils || reference.iter().any(|r| r.dim() != (n, n)) {
            return Err(Error::DimensionMismatch(format!("reference images must be {} grids of {n}x{n}", meta.n_coils)));
        }
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_u16::<LittleEndian>(MAJOR_VERSION)?;
        out.write_u16::<LittleEndian>(MINOR_VERSION)?;

        let json = serde_json::to_vec(meta)?;
        out.write_u64::<LittleEndian>(json.len() as u64)?;
        write_block(&mut out, &json)?;

        let mut body = Vec::with_capacity(8 + traj.len() * 24);
        body.extend_from_slice(&(traj.len() as u64).to_le_bytes());
        for s in traj.samples() {
            for v in [s.kx, s.ky, s.t] {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_block(&mut out, &body)?;

        let mut body = Vec::with_capacity(meta.n_coils * image_bytes(n));
        for r in reference {
            put_complex(&mut body, r.data.iter().copied());
        }
        write_block(&mut out, &body)?;
        out.flush()?;
        Ok(SeriesWriter {
            out,
            meta: meta.clone(),
            traj: Arc::clone(traj),
            next: 0,
        })
    }

    /// Appends frame `t`, which must be the next in sequence.
    pub fn write_frame(&mut self, t: usize, kspace: &[KSpaceFrame], images: Option<&[ImageFrame]>) -> Result<()> {
        if t != self.next {
            return Err(Error::invalid("frame", format!("expected frame {}, got {t}", self.next)));
        }
        if t >= self.meta.n_frames {
            return Err(Error::invalid("frame", format!("archive holds {} frames", self.meta.n_frames)));
        }
        if kspace.len() != self.meta.n_coils {
            return Err(Error::DimensionMismatch(format!("{} coils, expected {}", kspace.len(), self.meta.n_coils)));
        }
        let n = self.meta.grid_n;
        let images = match (images, self.meta.has_images) {
            (Some(im), true) if im.len() == kspace.len() && im.iter().all(|i| i.dim() == (n, n)) => Some(im),
            (None, false) => None,
            _ => return Err(Error::DimensionMismatch("images do not match the archive layout".into())),
        };
        let mut body = Vec::with_capacity(record_bytes(&self.meta));
        for (c, k) in kspace.iter().enumerate() {
            if k.values.len() != self.traj.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} samples, expected {}",
                    k.values.len(),
                    self.traj.len()
                )));
            }
            body.clear();
            body.extend_from_slice(&(t as u32).to_le_bytes());
            body.extend_from_slice(&(c as u32).to_le_bytes());
            put_complex(&mut body, k.values.iter().copied());
            if let Some(im) = images {
                put_complex(&mut body, im[c].data.iter().copied());
            }
            write_block(&mut self.out, &body)?;
        }
        self.out.flush()?;
        self.next += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.next
    }

    /// Flushes and checks that every frame was written.
    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        if self.next != self.meta.n_frames {
            return Err(Error::invalid(
                "frame",
                format!("{} of {} frames written", self.next, self.meta.n_frames),
            ));
        }
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}

/// Random access to a (possibly still growing) archive.
pub struct SeriesReader {
    file: BufReader<File>,
    meta: ArchiveMetadata,
    traj: Arc<Trajectory>,
    reference: Vec<ImageFrame>,
    frames_offset: u64,
}

impl SeriesReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        file.read_exact(&mut magic)
            .map_err(|_| Error::Malformed("file too short for an archive header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Malformed("not a series archive (bad magic)".into()));
        }
        let major = file.read_u16::<LittleEndian>()?;
        let _minor = file.read_u16::<LittleEndian>()?;
        if major != MAJOR_VERSION {
            return Err(Error::VersionMismatch {
                found: major,
                supported: MAJOR_VERSION,
            });
        }
        let len = file.read_u64::<LittleEndian>()? as usize;
        let json = read_block(&mut file, len, "metadata")?;
        let meta: ArchiveMetadata = serde_json::from_slice(&json)?;

        let mut count = [0u8; 8];
        file.read_exact(&mut count)?;
        let n_samples = u64::from_le_bytes(count) as usize;
        if n_samples != meta.n_samples {
            return Err(Error::Malformed("trajectory length disagrees with metadata".into()));
        }
        let mut body = vec![0u8; n_samples * 24];
        file.read_exact(&mut body)?;
        let crc = file.read_u32::<LittleEndian>()?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&count);
        hasher.update(&body);
        if crc != hasher.finalize() {
            return Err(Error::Malformed("checksum failure in the trajectory block".into()));
        }
        let mut f = vec![0.0; n_samples * 3];
        LittleEndian::read_f64_into(&body, &mut f);
        let samples = f
            .chunks_exact(3)
            .map(|s| Sample {
                kx: s[0],
                ky: s[1],
                t: s[2],
            })
            .collect();
        let traj = Arc::new(Trajectory::from_samples(
            samples,
            meta.trajectory,
            meta.grid_n,
            meta.config.scan.accel,
        )?);

        let n = meta.grid_n;
        let body = read_block(&mut file, meta.n_coils * image_bytes(n), "reference image")?;
        let reference = body
            .chunks_exact(image_bytes(n))
            .map(|b| to_image(b, n))
            .collect::<Result<Vec<_>>>()?;
        let frames_offset = file.stream_position()?;
        Ok(SeriesReader {
            file,
            meta,
            traj,
            reference,
            frames_offset,
        })
    }

    pub fn metadata(&self) -> &ArchiveMetadata {
        &self.meta
    }
    pub fn trajectory(&self) -> &Arc<Trajectory> {
        &self.traj
    }
    pub fn reference(&self) -> &[ImageFrame] {
        &self.reference
    }

    /// Frames completely present on disk.
    pub fn frames_available(&self) -> Result<usize> {
        let len = self.file.get_ref().metadata()?.len();
        let per_frame = (record_bytes(&self.meta) * self.meta.n_coils) as u64;
        let done = len.saturating_sub(self.frames_offset) / per_frame;
        Ok((done as usize).min(self.meta.n_frames))
    }

    /// Reads frame `t` (0-based), verifying each coil record.
    pub fn read_frame(&mut self, t: usize) -> Result<FrameRecord> {
        if t >= self.meta.n_frames {
            return Err(Error::invalid("frame", format!("index {t} beyond {} frames", self.meta.n_frames)));
        }
        let rec = record_bytes(&self.meta);
        let nc = self.meta.n_coils;
        let offset = self.frames_offset + (t * nc * rec) as u64;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; rec * nc];
        self.file.read_exact(&mut buf)?;

        let n = self.meta.grid_n;
        let ks_bytes = self.meta.n_samples * 16;
        let mut kspace = Vec::with_capacity(nc);
        let mut images = self.meta.has_images.then(|| Vec::with_capacity(nc));
        for (c, r) in buf.chunks_exact(rec).enumerate() {
            let (body, crc) = r.split_at(rec - 4);
            if LittleEndian::read_u32(crc) != crc32fast::hash(body) {
                return Err(Error::Checksum { frame: t, coil: c });
            }
            let (rt, rc) = (LittleEndian::read_u32(&body[0..4]), LittleEndian::read_u32(&body[4..8]));
            if rt as usize != t || rc as usize != c {
                return Err(Error::Malformed(format!("record for frame {rt} coil {rc} found where frame {t} coil {c} belongs")));
            }
            kspace.push(KSpaceFrame::new(get_complex(&body[8..8 + ks_bytes]), Arc::clone(&self.traj), c)?);
            if let Some(im) = images.as_mut() {
                im.push(to_image(&body[8 + ks_bytes..], n)?);
            }
        }
        Ok(FrameRecord { kspace, images })
    }
}

fn to_image(bytes: &[u8], n: usize) -> Result<ImageFrame> {
    let data = Array2::from_shape_vec((n, n), get_complex(bytes)).map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(ImageFrame::new(data))
}

pub fn save_series(archive: &SeriesArchive, path: impl AsRef<Path>) -> Result<()> {
    if archive.frames.len() != archive.metadata.n_frames {
        return Err(Error::DimensionMismatch(format!(
            "{} frames, metadata says {}",
            archive.frames.len(),
            archive.metadata.n_frames
        )));
    }
    let mut w = SeriesWriter::create(path, &archive.metadata, &archive.trajectory, &archive.reference)?;
    for (t, f) in archive.frames.iter().enumerate() {
        w.write_frame(t, &f.kspace, f.images.as_deref())?;
    }
    w.finish()
}

pub fn load_series(path: impl AsRef<Path>) -> Result<SeriesArchive> {
    let mut r = SeriesReader::open(path)?;
    let n = r.metadata().n_frames;
    if r.frames_available()? < n {
        return Err(Error::Malformed(format!("archive is truncated ({} of {n} frames)", r.frames_available()?)));
    }
    let frames = (0..n).map(|t| r.read_frame(t)).collect::<Result<Vec<_>>>()?;
    Ok(SeriesArchive {
        metadata: r.meta,
        trajectory: r.traj,
        reference: r.reference,
        frames,
    })
}
