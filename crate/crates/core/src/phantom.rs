//! Four-map digital brain phantom (M0, T1, T2*, ΔB) with a binary activation map.
//!
//! Volumes are stored as `Array3` indexed `[[z, y, x]]`, so `x` is the fastest
//! axis in memory, which is also the on-disk order. Voxel `i` along any axis has
//! normalized coordinate `(2i + 1) / size - 1` in `(-1, 1)`.
//!
//! Slices are 2-D arrays indexed `[[row, col]]`:
//!
//! | plane    | fixed axis | row | col |
//! |----------|------------|-----|-----|
//! | axial    | z          | y   | x   |
//! | coronal  | y          | z   | x   |
//! | sagittal | x          | z   | y   |
//!
//! Slice indices are 1-based (`1..=size`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::{s, Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_SIZES: [usize; 3] = [64, 96, 128];

/// Upper bound applied to T2 when inverting the T2/T2* relation.
pub const T2_MAX: f64 = 3.0;

/// Default planar ΔB gradient, Tesla per normalized unit of `(x + y + z) / size`.
pub const DEFAULT_GRADIENT_T: f64 = 3e-8;

/// Fraction of the gradient scale used for the T2*-derived ΔB detail.
pub const DEFAULT_DETAIL_FRACTION: f64 = 0.1;

pub(crate) const PHANTOM_MAGIC: &[u8; 6] = b"SHKPH1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub m0: f64,
    /// seconds
    pub t1: f64,
    /// seconds
    pub t2star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueSet {
    pub gm: TissueParams,
    pub wm: TissueParams,
    pub csf: TissueParams,
}

impl Default for TissueSet {
    /// Typical 3 T values.
    fn default() -> Self {
        TissueSet {
            gm: TissueParams {
                m0: 0.85,
                t1: 1.33,
                t2star: 0.052,
            },
            wm: TissueParams {
                m0: 0.70,
                t1: 0.83,
                t2star: 0.045,
            },
            csf: TissueParams {
                m0: 1.00,
                t1: 3.70,
                t2star: 0.50,
            },
        }
    }
}

impl TissueSet {
    pub fn get(&self, tissue: Tissue) -> Option<&TissueParams> {
        match tissue {
            Tissue::Empty => None,
            Tissue::Gm => Some(&self.gm),
            Tissue::Wm => Some(&self.wm),
            Tissue::Csf => Some(&self.csf),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, t) in [("gm", &self.gm), ("wm", &self.wm), ("csf", &self.csf)] {
            if !(t.t1 > 0.0 && t.t2star > 0.0) {
                return Err(Error::invalid(
                    "tissue_params",
                    format!("{name} relaxation times must be positive (t1={}, t2star={})", t.t1, t.t2star),
                ));
            }
            if !(t.m0 >= 0.0) {
                return Err(Error::invalid("tissue_params", format!("{name} m0 must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tissue {
    Empty,
    Gm,
    Wm,
    Csf,
}

/// Ellipsoid in normalized coordinates, optionally rotated about the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// rotation about z, degrees
    pub rotation_deg: f64,
    pub tissue: Tissue,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        let [a, b, c] = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) + (dz / c).powi(2) <= 1.0
    }
}

/// Outer boundary of the head. Every other default ellipsoid lies inside it,
/// so `m0 > 0` exactly on the voxels this ellipsoid contains.
pub const HEAD: Ellipsoid = Ellipsoid {
    center: [0.0, 0.0, 0.0],
    semi_axes: [0.70, 0.88, 0.78],
    rotation_deg: 0.0,
    tissue: Tissue::Csf,
};

/// Shepp-Logan-style composition; later entries overwrite earlier ones.
pub fn default_geometry() -> Vec<Ellipsoid> {
    vec![
        HEAD,
        // cortical gray matter
        Ellipsoid {
            center: [0.0, 0.0, 0.0],
            semi_axes: [0.66, 0.84, 0.74],
            rotation_deg: 0.0,
            tissue: Tissue::Gm,
        },
        // white matter
        Ellipsoid {
            center: [0.0, 0.0, 0.02],
            semi_axes: [0.52, 0.68, 0.56],
            rotation_deg: 0.0,
            tissue: Tissue::Wm,
        },
        // deep gray nuclei
        Ellipsoid {
            center: [-0.17, 0.02, -0.02],
            semi_axes: [0.09, 0.15, 0.12],
            rotation_deg: 8.0,
            tissue: Tissue::Gm,
        },
        Ellipsoid {
            center: [0.17, 0.02, -0.02],
            semi_axes: [0.09, 0.15, 0.12],
            rotation_deg: -8.0,
            tissue: Tissue::Gm,
        },
        // lateral ventricles
        Ellipsoid {
            center: [-0.07, 0.10, 0.06],
            semi_axes: [0.045, 0.28, 0.12],
            rotation_deg: -10.0,
            tissue: Tissue::Csf,
        },
        Ellipsoid {
            center: [0.07, 0.10, 0.06],
            semi_axes: [0.045, 0.28, 0.12],
            rotation_deg: 10.0,
            tissue: Tissue::Csf,
        },
    ]
}

/// Normalized coordinate of voxel `i` on an axis with `size` voxels.
pub fn voxel_coord(i: usize, size: usize) -> f64 {
    (2 * i + 1) as f64 / size as f64 - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub tissues: TissueSet,
    pub gradient_t: f64,
    pub detail_fraction: f64,
    pub geometry: Vec<Ellipsoid>,
}

impl PhantomConfig {
    pub fn new(size: usize) -> Self {
        PhantomConfig {
            size,
            tissues: TissueSet::default(),
            gradient_t: DEFAULT_GRADIENT_T,
            detail_fraction: DEFAULT_DETAIL_FRACTION,
            geometry: default_geometry(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomVolume {
    size: usize,
    m0: Array3<f64>,
    t1: Array3<f64>,
    t2star: Array3<f64>,
    delta_b: Array3<f64>,
    act_map: Array3<u8>,
}

impl PhantomVolume {
    /// Assembles a phantom from its maps, checking every structural invariant.
    pub fn from_maps(
        m0: Array3<f64>,
        t1: Array3<f64>,
        t2star: Array3<f64>,
        delta_b: Array3<f64>,
        act_map: Array3<u8>,
    ) -> Result<Self> {
        let dim = m0.dim();
        if dim.0 != dim.1 || dim.1 != dim.2 || dim.0 == 0 {
            return Err(Error::DimensionMismatch(format!("m0 must be a non-empty cube, got {dim:?}")));
        }
        for (name, d) in [("t1", t1.dim()), ("t2star", t2star.dim()), ("delta_b", delta_b.dim()), ("act_map", act_map.dim())] {
            if d != dim {
                return Err(Error::DimensionMismatch(format!("{name} is {d:?} but m0 is {dim:?}")));
            }
        }
        for (((&m, &a), &r1), &r2) in m0.iter().zip(act_map.iter()).zip(t1.iter()).zip(t2star.iter()) {
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::invalid("m0", "must be finite and non-negative"));
            }
            if a > 1 {
                return Err(Error::invalid("act_map", "values must be 0 or 1"));
            }
            if m > 0.0 && !(r1 > 0.0 && r2 > 0.0) {
                return Err(Error::invalid("t1/t2star", "must be positive wherever m0 > 0"));
            }
            if a == 1 && m == 0.0 {
                return Err(Error::invalid("act_map", "activation marked outside the object (m0 = 0)"));
            }
        }
        if delta_b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("delta_b", "must be finite"));
        }
        Ok(PhantomVolume {
            size: dim.0,
            m0,
            t1,
            t2star,
            delta_b,
            act_map,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }
    pub fn m0(&self) -> &Array3<f64> {
        &self.m0
    }
    pub fn t1(&self) -> &Array3<f64> {
        &self.t1
    }
    pub fn t2star(&self) -> &Array3<f64> {
        &self.t2star
    }
    pub fn delta_b(&self) -> &Array3<f64> {
        &self.delta_b
    }
    pub fn act_map(&self) -> &Array3<u8> {
        &self.act_map
    }

    pub fn with_activation_map(self, act_map: Array3<u8>) -> Result<Self> {
        PhantomVolume::from_maps(self.m0, self.t1, self.t2star, self.delta_b, act_map)
    }

    pub fn extract_slice(&self, plane: Plane, index: usize) -> Result<SliceMaps> {
        if index < 1 || index > self.size {
            return Err(Error::invalid(
                "slice",
                format!("index {index} outside 1..={}", self.size),
            ));
        }
        let i = index - 1;
        fn cut<T: Clone>(a: &Array3<T>, plane: Plane, i: usize) -> Array2<T> {
            match plane {
                Plane::Axial => a.slice(s![i, .., ..]).to_owned(),
                Plane::Coronal => a.slice(s![.., i, ..]).to_owned(),
                Plane::Sagittal => a.slice(s![.., .., i]).to_owned(),
            }
        }
        let m0 = cut(&self.m0, plane, i);
        let gain = Array2::from_elem(m0.dim(), Complex64::new(1.0, 0.0));
        Ok(SliceMaps {
            plane,
            index,
            m0,
            t1: cut(&self.t1, plane, i),
            t2star: cut(&self.t2star, plane, i),
            delta_b: cut(&self.delta_b, plane, i),
            act_map: cut(&self.act_map, plane, i),
            gain,
        })
    }

    /// Writes the five maps of `slice` back into the plane it came from.
    pub fn with_slice(mut self, slice: &SliceMaps) -> Result<Self> {
        if slice.dim() != (self.size, self.size) || slice.index < 1 || slice.index > self.size {
            return Err(Error::DimensionMismatch(format!(
                "slice {:?} at index {} does not fit a size {} phantom",
                slice.dim(),
                slice.index,
                self.size
            )));
        }
        fn put<T: Clone>(a: &mut Array3<T>, src: ArrayView2<T>, plane: Plane, i: usize) {
            match plane {
                Plane::Axial => a.slice_mut(s![i, .., ..]).assign(&src),
                Plane::Coronal => a.slice_mut(s![.., i, ..]).assign(&src),
                Plane::Sagittal => a.slice_mut(s![.., .., i]).assign(&src),
            }
        }
        let i = slice.index - 1;
        put(&mut self.m0, slice.m0.view(), slice.plane, i);
        put(&mut self.t1, slice.t1.view(), slice.plane, i);
        put(&mut self.t2star, slice.t2star.view(), slice.plane, i);
        put(&mut self.delta_b, slice.delta_b.view(), slice.plane, i);
        put(&mut self.act_map, slice.act_map.view(), slice.plane, i);
        PhantomVolume::from_maps(self.m0, self.t1, self.t2star, self.delta_b, self.act_map)
    }

    pub fn brain_voxel_count(&self) -> usize {
        self.m0.iter().filter(|&&m| m > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Sagittal,
    Coronal,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "Axial",
            Plane::Sagittal => "Sagittal",
            Plane::Coronal => "Coronal",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Plane::Axial),
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            _ => Err(Error::invalid("plane", format!("unknown plane `{s}`"))),
        }
    }
}

/// One 2-D slice of the phantom.
///
/// `gain` is a complex per-voxel weighting applied on top of the tissue maps
/// (all ones for an unmodified slice); task activation folds its magnitude
/// scaling and phase change into it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMaps {
    pub plane: Plane,
    pub index: usize,
    pub m0: Array2<f64>,
    pub t1: Array2<f64>,
    pub t2star: Array2<f64>,
    pub delta_b: Array2<f64>,
    pub act_map: Array2<u8>,
    pub gain: Array2<Complex64>,
}

impl SliceMaps {
    /// (rows, cols)
    pub fn dim(&self) -> (usize, usize) {
        self.m0.dim()
    }

    pub fn active_voxel_count(&self) -> usize {
        self.act_map.iter().filter(|&&a| a == 1).count()
    }
}

/// Generates the default phantom with the default activation region.
pub fn generate_phantom(size: usize, tissues: &TissueSet) -> Result<PhantomVolume> {
    let mut cfg = PhantomConfig::new(size);
    cfg.tissues = *tissues;
    generate_phantom_with(&cfg)
}

pub fn generate_phantom_with(cfg: &PhantomConfig) -> Result<PhantomVolume> {
    let n = cfg.size;
    if !SUPPORTED_SIZES.contains(&n) {
        return Err(Error::invalid("size", format!("{n} is not one of {SUPPORTED_SIZES:?}")));
    }
    cfg.tissues.validate()?;

    let mut m0 = Array3::<f64>::zeros((n, n, n));
    let mut t1 = Array3::<f64>::zeros((n, n, n));
    let mut t2star = Array3::<f64>::zeros((n, n, n));
    for ((z, y, x), m) in m0.indexed_iter_mut() {
        let p = [voxel_coord(x, n), voxel_coord(y, n), voxel_coord(z, n)];
        let label = cfg
            .geometry
            .iter()
            .rev()
            .find(|e| e.contains(p))
            .map_or(Tissue::Empty, |e| e.tissue);
        if let Some(t) = cfg.tissues.get(label) {
            *m = t.m0;
            t1[[z, y, x]] = t.t1;
            t2star[[z, y, x]] = t.t2star;
        }
    }

    let delta_b = build_delta_b(&m0, &t2star, cfg.gradient_t, cfg.detail_fraction);
    let blank = PhantomVolume::from_maps(m0, t1, t2star, delta_b, Array3::zeros((n, n, n)))?;
    let act = generate_activation_map(&blank, &default_activation_region(n))?;
    blank.with_activation_map(act)
}

/// Planar gradient `g (x + y + z) / size` everywhere, plus a z-scored T2*
/// term of amplitude `detail_fraction * g` inside the object.
fn build_delta_b(m0: &Array3<f64>, t2star: &Array3<f64>, g: f64, detail_fraction: f64) -> Array3<f64> {
    let n = m0.dim().0;
    let brain: Vec<f64> = m0
        .iter()
        .zip(t2star.iter())
        .filter(|(&m, _)| m > 0.0)
        .map(|(_, &t)| t)
        .collect();
    let count = brain.len().max(1) as f64;
    let mean = brain.iter().sum::<f64>() / count;
    let var = brain.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();

    Array3::from_shape_fn((n, n, n), |(z, y, x)| {
        let planar = g * (x + y + z) as f64 / n as f64;
        let detail = if m0[[z, y, x]] > 0.0 && std > 0.0 {
            detail_fraction * g * (t2star[[z, y, x]] - mean) / std
        } else {
            0.0
        };
        planar + detail
    })
}

/// T2 from T2* through `1/T2* = 1/T2 + γ|ΔB|`, clamped to [`T2_MAX`].
///
/// `gamma` is in Hz/T, so `gamma * delta_b` is a rate in 1/s.
pub fn derive_t2(t2star: f64, delta_b: f64, gamma: f64) -> f64 {
    let rate = 1.0 / t2star - gamma * delta_b.abs();
    if rate <= 1.0 / T2_MAX {
        T2_MAX
    } else {
        1.0 / rate
    }
}

/// Spherical region in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationRegion {
    /// voxel indices `[x, y, z]`, 0-based
    pub center: [usize; 3],
    pub radius: f64,
}

/// Sphere over the left lateral cortex at mid-height, so the central axial
/// slice always contains it.
pub fn default_activation_region(size: usize) -> ActivationRegion {
    let to_index = |u: f64| (((u + 1.0) * size as f64 - 1.0) / 2.0).round() as usize;
    ActivationRegion {
        center: [to_index(-0.59), size / 2 - 1, size / 2 - 1],
        radius: 4.0 * size as f64 / 96.0,
    }
}

/// Ones inside the sphere and inside the object, zeros elsewhere.
pub fn generate_activation_map(p: &PhantomVolume, region: &ActivationRegion) -> Result<Array3<u8>> {
    if !(region.radius >= 0.0) {
        return Err(Error::invalid("radius", "must be non-negative"));
    }
    let [cx, cy, cz] = region.center.map(|c| c as f64);
    let r2 = region.radius * region.radius;
    let act = Array3::from_shape_fn(p.m0.dim(), |(z, y, x)| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
        u8::from(d2 <= r2 && p.m0[[z, y, x]] > 0.0)
    });
    if act.iter().all(|&a| a == 0) {
        return Err(Error::invalid(
            "activation region",
            format!("sphere at {:?} radius {} contains no object voxels", region.center, region.radius),
        ));
    }
    Ok(act)
}

pub fn save_phantom(p: &PhantomVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(PHANTOM_MAGIC)?;
    w.write_u32::<LittleEndian>(p.size as u32)?;
    for grid in [&p.m0, &p.t1, &p.t2star, &p.delta_b] {
        for &v in grid.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    for &a in p.act_map.iter() {
        w.write_f64::<LittleEndian>(f64::from(a))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an activation-map-only file (same header, one grid).
pub fn save_activation_map(act: &Array3<u8>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(PHANTOM_MAGIC)?;
    w.write_u32::<LittleEndian>(act.dim().0 as u32)?;
    for &a in act.iter() {
        w.write_f64::<LittleEndian>(f64::from(a))?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the cube edge and the payload (everything after the header).
fn read_header(bytes: &[u8]) -> Result<(usize, &[u8])> {
    if bytes.len() < 10 {
        return Err(Error::Malformed(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..6] != PHANTOM_MAGIC {
        return Err(Error::Malformed("bad magic, expected SHKPH1".into()));
    }
    let size = LittleEndian::read_u32(&bytes[6..10]) as usize;
    if size == 0 || size > 1024 {
        return Err(Error::Malformed(format!("implausible phantom size {size}")));
    }
    Ok((size, &bytes[10..]))
}

fn read_grid(payload: &[u8], index: usize, size: usize) -> Array3<f64> {
    let n3 = size * size * size;
    let start = index * n3 * 8;
    let mut values = vec![0.0; n3];
    LittleEndian::read_f64_into(&payload[start..start + n3 * 8], &mut values);
    Array3::from_shape_vec((size, size, size), values).expect("length checked by caller")
}

fn to_binary(grid: Array3<f64>) -> Result<Array3<u8>> {
    if grid.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Malformed("activation map values must be 0 or 1".into()));
    }
    Ok(grid.mapv(|v| v as u8))
}

pub fn load_phantom(path: impl AsRef<Path>) -> Result<PhantomVolume> {
    let bytes = fs::read(path)?;
    let (size, payload) = read_header(&bytes)?;
    let grid_bytes = size * size * size * 8;
    if payload.len() != 5 * grid_bytes {
        return Err(Error::Malformed(format!(
            "size {size} phantom needs {} payload bytes, found {}",
            5 * grid_bytes,
            payload.len()
        )));
    }
    let act = to_binary(read_grid(payload, 4, size))?;
    PhantomVolume::from_maps(
        read_grid(payload, 0, size),
        read_grid(payload, 1, size),
        read_grid(payload, 2, size),
        read_grid(payload, 3, size),
        act,
    )
}

pub fn load_activation_map(path: impl AsRef<Path>) -> Result<Array3<u8>> {
    let bytes = fs::read(path)?;
    let (size, payload) = read_header(&bytes)?;
    let grid_bytes = size * size * size * 8;
    if payload.len() != grid_bytes {
        return Err(Error::Malformed(format!(
            "activation map of size {size} needs {grid_bytes} payload bytes, found {}",
            payload.len()
        )));
    }
    to_binary(read_grid(payload, 0, size))
}
