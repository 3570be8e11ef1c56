//! Unnormalized 2-D FFT over `Array2<Complex64>` plus centered-index helpers.
//!
//! Image and k-space grids are stored with the zero coordinate at row/col
//! `n / 2`; an index `i` holds coordinate `i - n/2`. The FFT itself works on
//! wrapped coordinates (`c mod n`), so callers shift in and out.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place 2-D transform, no scaling in either direction.
pub fn fft2(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(cols, direction);
    let col_fft = planner.plan_fft(rows, direction);

    let mut buf = vec![Complex64::new(0.0, 0.0); cols.max(rows)];
    for mut row in data.axis_iter_mut(Axis(0)) {
        let b = &mut buf[..cols];
        for (dst, src) in b.iter_mut().zip(row.iter()) {
            *dst = *src;
        }
        row_fft.process(b);
        for (dst, src) in row.iter_mut().zip(b.iter()) {
            *dst = *src;
        }
    }
    for mut col in data.axis_iter_mut(Axis(1)) {
        let b = &mut buf[..rows];
        for (dst, src) in b.iter_mut().zip(col.iter()) {
            *dst = *src;
        }
        col_fft.process(b);
        for (dst, src) in col.iter_mut().zip(b.iter()) {
            *dst = *src;
        }
    }
}

/// Moves a centered grid (coordinate `i - n/2` at index `i`) to wrapped order
/// (coordinate `c` at index `c mod n`).
pub fn centered_to_wrapped(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| a[[(r + rows / 2) % rows, (c + cols / 2) % cols]])
}

/// Inverse of [`centered_to_wrapped`].
pub fn wrapped_to_centered(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        a[[(r + rows - rows / 2) % rows, (c + cols - cols / 2) % cols]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_roundtrip() {
        let a = Array2::from_shape_fn((6, 4), |(r, c)| Complex64::new(r as f64, c as f64));
        assert_eq!(wrapped_to_centered(&centered_to_wrapped(&a)), a);
        // coordinate 0 lives at centered index n/2 and wrapped index 0
        assert_eq!(centered_to_wrapped(&a)[[0, 0]], a[[3, 2]]);
    }

    #[test]
    fn forward_then_inverse_scales_by_size() {
        let a = Array2::from_shape_fn((4, 6), |(r, c)| Complex64::new((r * 7 + c) as f64, -(c as f64)));
        let mut b = a.clone();
        fft2(&mut b, FftDirection::Forward);
        fft2(&mut b, FftDirection::Inverse);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x * 24.0 - y).norm() < 1e-10);
        }
    }
}
