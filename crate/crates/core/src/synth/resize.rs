//! Mapping between original `(p, q)` frame grids and the model's `L x L` grid.
//!
//! The performance axis is stretched to exactly `L` rows with endpoints
//! aligned, i.e. by `ratio = (L - 1) / (p - 1)`. The score axis is scaled by
//! the same ratio, which keeps the path slope intact, and right-padded to
//! `L` columns with the matrix maximum so that padding reads as dissimilar.

use serde::{Deserialize, Serialize};

use super::AlignmentPath;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeMeta {
    pub p: usize,
    pub q: usize,
    pub grid_len: usize,
    /// Grid units per original frame.
    pub ratio: f64,
    /// Number of grid columns covered by the score.
    pub valid_cols: usize,
}

const SLACK: f64 = 1e-9;

fn lerp_at(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    let x = x.clamp(0.0, last as f64);
    let i0 = x.floor() as usize;
    let i1 = (i0 + 1).min(last);
    let t = x - i0 as f64;
    if t == 0.0 {
        values[i0]
    } else {
        (1.0 - t) * values[i0] + t * values[i1]
    }
}

fn bilinear(m: &Matrix, x: f64, y: f64) -> f64 {
    let (lr, lc) = (m.rows() - 1, m.cols() - 1);
    let x = x.clamp(0.0, lr as f64);
    let y = y.clamp(0.0, lc as f64);
    let (i0, j0) = (x.floor() as usize, y.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(lr), (j0 + 1).min(lc));
    let (tx, ty) = (x - i0 as f64, y - j0 as f64);
    if tx == 0.0 && ty == 0.0 {
        return m.get(i0, j0);
    }
    let top = (1.0 - ty) * m.get(i0, j0) + ty * m.get(i0, j1);
    let bottom = (1.0 - ty) * m.get(i1, j0) + ty * m.get(i1, j1);
    (1.0 - tx) * top + tx * bottom
}

pub fn resize_meta(p: usize, q: usize, grid_len: usize, max_p: usize) -> Result<ResizeMeta> {
    if p < 2 || q < 1 || grid_len < 2 {
        return Err(Error::Argument(format!(
            "cannot resize a {p}x{q} matrix to grid {grid_len}"
        )));
    }
    if p > max_p {
        return Err(Error::InputTooLong(format!("performance has {p} frames, limit {max_p}")));
    }
    let ratio = (grid_len - 1) as f64 / (p - 1) as f64;
    let span = (q - 1) as f64 * ratio;
    if span > (grid_len - 1) as f64 + SLACK {
        return Err(Error::InputTooLong(format!(
            "score of {q} frames scales to {:.1} grid columns, beyond {grid_len}",
            span + 1.0
        )));
    }
    Ok(ResizeMeta {
        p,
        q,
        grid_len,
        ratio,
        valid_cols: ((span + SLACK).floor() as usize + 1).min(grid_len),
    })
}

/// Resample a `p x q` similarity matrix onto the `L x L` grid.
pub fn resize_and_pad(m: &Matrix, grid_len: usize, max_p: usize) -> Result<(Matrix, ResizeMeta)> {
    let meta = resize_meta(m.rows(), m.cols(), grid_len, max_p)?;
    let pad = m.max();
    let out = Matrix::from_fn(grid_len, grid_len, |i, j| {
        if j < meta.valid_cols {
            bilinear(m, i as f64 / meta.ratio, j as f64 / meta.ratio)
        } else {
            pad
        }
    });
    Ok((out, meta))
}

/// Ground-truth path expressed on the grid: `L` values in `[0, L - 1]`.
pub fn path_to_grid(path: &AlignmentPath, meta: &ResizeMeta) -> Result<Vec<f64>> {
    if path.len() != meta.p {
        return Err(Error::dim(
            "path_to_grid",
            format!("path of length {} for p = {}", path.len(), meta.p),
        ));
    }
    let hi = (meta.grid_len - 1) as f64;
    Ok((0..meta.grid_len)
        .map(|i| (lerp_at(&path.y_indices, i as f64 / meta.ratio) * meta.ratio).clamp(0.0, hi))
        .collect())
}

/// Map a grid path back to the original `p` performance frames.
pub fn rescale_path(path_grid: &[f64], meta: &ResizeMeta) -> Result<AlignmentPath> {
    if path_grid.len() != meta.grid_len {
        return Err(Error::dim(
            "rescale_path",
            format!("grid path of length {} for L = {}", path_grid.len(), meta.grid_len),
        ));
    }
    let hi = (meta.q - 1) as f64;
    Ok(AlignmentPath::new(
        (0..meta.p)
            .map(|i| (lerp_at(path_grid, i as f64 * meta.ratio) / meta.ratio).clamp(0.0, hi))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_full_size_is_identity() {
        let m = Matrix::from_fn(8, 8, |i, j| (i * 8 + j) as f64 * 0.1);
        let (out, meta) = resize_and_pad(&m, 8, 100).unwrap();
        assert_eq!(out, m);
        assert_eq!(meta.valid_cols, 8);
        let diag: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let back = rescale_path(&diag, &meta).unwrap();
        assert_eq!(back.y_indices, diag);
    }

    #[test]
    fn constant_matrix_half_length() {
        let m = Matrix::from_fn(32, 20, |_, _| 0.7);
        let (out, meta) = resize_and_pad(&m, 64, 256).unwrap();
        assert!(meta.valid_cols < 64);
        for v in out.data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn padding_uses_global_max() {
        let m = Matrix::from_fn(16, 8, |i, j| (i + j) as f64);
        let (out, meta) = resize_and_pad(&m, 32, 64).unwrap();
        for i in 0..32 {
            for j in meta.valid_cols..32 {
                assert_eq!(out.get(i, j), 22.0);
            }
        }
    }

    #[test]
    fn constant_path_scales_back() {
        let meta = resize_meta(40, 30, 64, 256).unwrap();
        let back = rescale_path(&[10.0; 64], &meta).unwrap();
        for y in back.y_indices {
            assert!((y - 10.0 / meta.ratio).abs() < 1e-12);
        }
        let back = rescale_path(&[63.0; 64], &meta).unwrap();
        assert!(back.y_indices.iter().all(|&y| y == 29.0));
    }

    #[test]
    fn score_longer_than_performance_is_too_long() {
        assert!(matches!(resize_meta(20, 30, 64, 256), Err(Error::InputTooLong(_))));
        assert!(matches!(resize_meta(300, 30, 64, 256), Err(Error::InputTooLong(_))));
    }

    #[test]
    fn diagonal_round_trip_within_one_frame() {
        for (p, q) in [(40, 40), (50, 31), (64, 64), (100, 77), (17, 9), (130, 90)] {
            let meta = resize_meta(p, q, 64, 512).unwrap();
            let gt = AlignmentPath::new((0..p).map(|i| i as f64 * (q - 1) as f64 / (p - 1) as f64).collect());
            let grid = path_to_grid(&gt, &meta).unwrap();
            let back = rescale_path(&grid, &meta).unwrap();
            let err = gt
                .y_indices
                .iter()
                .zip(&back.y_indices)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1.0, "p={p} q={q} err={err}");
        }
    }
}
