//! 8-bit PNG rendering of real-valued grids with min-max windowing.
//!
//! Row 0 of a grid is the most negative y, so it lands on the bottom row of
//! the picture. The window actually used is written to `<path>.window.txt`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Part;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Gray,
    Hot,
}

impl Colormap {
    pub fn name(self) -> &'static str {
        match self {
            Colormap::Gray => "gray",
            Colormap::Hot => "hot",
        }
    }
}

impl FromStr for Colormap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gray" | "grey" => Ok(Colormap::Gray),
            "hot" => Ok(Colormap::Hot),
            _ => Err(Error::invalid("colormap", format!("unknown colormap {s:?} (gray, hot)"))),
        }
    }
}

/// Display range mapped onto `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    /// Phase always uses `[-pi, pi)`; other parts span the finite data.
    pub fn for_grid(grid: &Array2<f64>, part: Part) -> Result<Self> {
        let mut finite = grid.iter().copied().filter(|v| v.is_finite()).peekable();
        if finite.peek().is_none() {
            return Err(Error::invalid("grid", "has no finite values to display"));
        }
        if part == Part::Phase {
            return Ok(Window { lo: -PI, hi: PI });
        }
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Window { lo, hi })
    }

    /// Gray level of `v`; a degenerate window renders mid-gray and NaN black.
    pub fn level(&self, v: f64) -> u8 {
        if v.is_nan() {
            return 0;
        }
        if self.hi <= self.lo {
            return 128;
        }
        let u = (v - self.lo) / (self.hi - self.lo);
        (u * 256.0).floor().clamp(0.0, 255.0) as u8
    }
}

fn hot(level: u8) -> [u8; 3] {
    let u = level as f64 / 255.0;
    let ramp = |offset: f64| ((3.0 * u - offset).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(0.0), ramp(1.0), ramp(2.0)]
}

/// Gray levels laid out for display: `levels[r][c]` with row 0 at the top.
pub fn render_levels(grid: &Array2<f64>, window: &Window) -> Array2<u8> {
    let (rows, cols) = grid.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| window.level(grid[[rows - 1 - r, c]]))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".window.txt");
    PathBuf::from(s)
}

/// Writes `grid` as a PNG and its window to the sidecar file.
pub fn export_image(grid: &Array2<f64>, part: Part, path: impl AsRef<Path>, colormap: Colormap) -> Result<Window> {
    let path = path.as_ref();
    let window = Window::for_grid(grid, part)?;
    let levels = render_levels(grid, &window);
    let (rows, cols) = levels.dim();
    match colormap {
        Colormap::Gray => {
            GrayImage::from_fn(cols as u32, rows as u32, |x, y| Luma([levels[[y as usize, x as usize]]])).save(path)?
        }
        Colormap::Hot => {
            RgbImage::from_fn(cols as u32, rows as u32, |x, y| Rgb(hot(levels[[y as usize, x as usize]]))).save(path)?
        }
    }
    std::fs::write(
        sidecar_path(path),
        format!(
            "part {}\ncolormap {}\nmin {:e}\nmax {:e}\n",
            part.name(),
            colormap.name(),
            window.lo,
            window.hi
        ),
    )?;
    Ok(window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_grid_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let w = export_image(&Array2::from_elem((5, 7), 2.5), Part::Magnitude, &path, Colormap::Gray).unwrap();
        assert_eq!((w.lo, w.hi), (2.5, 2.5));
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (7, 5));
        assert!(img.pixels().all(|p| p.0[0] == 128));
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("min 2.5e0") && side.contains("max 2.5e0"));
    }

    #[test]
    fn phase_window_is_fixed() {
        let grid = Array2::from_shape_vec((1, 4), vec![-PI, 0.0, PI - 1e-9, 0.1]).unwrap();
        let w = Window::for_grid(&grid, Part::Phase).unwrap();
        assert_eq!((w.lo, w.hi), (-PI, PI));
        assert_eq!(w.level(-PI), 0);
        assert_eq!(w.level(0.0), 128);
        assert_eq!(w.level(PI - 1e-9), 255);
    }

    #[test]
    fn min_max_and_nan() {
        let grid = Array2::from_shape_vec((2, 2), vec![1.0, 3.0, f64::NAN, 2.0]).unwrap();
        let w = Window::for_grid(&grid, Part::Real).unwrap();
        assert_eq!((w.lo, w.hi), (1.0, 3.0));
        let l = render_levels(&grid, &w);
        // row 0 of the grid is the bottom display row
        assert_eq!(l[[1, 0]], 0);
        assert_eq!(l[[1, 1]], 255);
        assert_eq!(l[[0, 0]], 0);
        assert_eq!(l[[0, 1]], 128);
    }

    #[test]
    fn all_nan_is_an_error() {
        let grid = Array2::from_elem((3, 3), f64::NAN);
        assert!(export_image(&grid, Part::Real, "/nonexistent/x.png", Colormap::Gray).is_err());
        assert!(Window::for_grid(&grid, Part::Phase).is_err());
    }

    #[test]
    fn hot_endpoints() {
        assert_eq!(hot(0), [0, 0, 0]);
        assert_eq!(hot(255), [255, 255, 255]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let grid = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64);
        export_image(&grid, Part::Magnitude, &path, Colormap::Hot).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(3, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(0, 3).0, [0, 0, 0]);
    }
}
