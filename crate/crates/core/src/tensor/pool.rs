//! 2x2 max pooling that records argmax locations, and the matching unpooling.

use crate::error::{Error, Result};

/// Flat input locations of each pooled maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    /// Shape `[N, C, H, W]` of the pooled input.
    pub in_shape: [usize; 4],
    /// Shape `[N, C, H/2, W/2]` of the pooled output.
    pub out_shape: [usize; 4],
    /// For every output element, the flat index of its source in the input.
    pub indices: Vec<usize>,
}

pub(crate) fn maxpool_forward(shape: [usize; 4], x: &[f64]) -> Result<(Vec<f64>, IndexMask)> {
    let [n, c, h, w] = shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "maxpool2d",
            format!("spatial extents must be even, got H={h}, W={w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut indices = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..ho {
            for oj in 0..wo {
                let mut best = base + 2 * oi * w + 2 * oj;
                // row-major scan, strict comparison: first maximum wins
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oi + di) * w + 2 * oj + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        out,
        IndexMask {
            in_shape: shape,
            out_shape: [n, c, ho, wo],
            indices,
        },
    ))
}

pub(crate) fn maxpool_backward(mask: &IndexMask, gy: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; mask.in_shape.iter().product()];
    for (&idx, &g) in mask.indices.iter().zip(gy) {
        gx[idx] += g;
    }
    gx
}

pub(crate) fn unpool_check(mask: &IndexMask, shape: &[usize], out_size: (usize, usize)) -> Result<()> {
    if shape != mask.out_shape {
        return Err(Error::dim(
            "max_unpool2d",
            format!("input {shape:?} does not match mask output {:?}", mask.out_shape),
        ));
    }
    if (mask.in_shape[2], mask.in_shape[3]) != out_size {
        return Err(Error::dim(
            "max_unpool2d",
            format!(
                "requested size {out_size:?} differs from pooled size {:?}",
                (mask.in_shape[2], mask.in_shape[3])
            ),
        ));
    }
    if mask.indices.len() != shape.iter().product::<usize>() {
        return Err(Error::dim("max_unpool2d", "mask length mismatch"));
    }
    Ok(())
}

pub(crate) fn unpool_forward(mask: &IndexMask, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mask.in_shape.iter().product()];
    for (&idx, &v) in mask.indices.iter().zip(x) {
        out[idx] = v;
    }
    out
}

pub(crate) fn unpool_backward(mask: &IndexMask, gy: &[f64]) -> Vec<f64> {
    mask.indices.iter().map(|&idx| gy[idx]).collect()
}
