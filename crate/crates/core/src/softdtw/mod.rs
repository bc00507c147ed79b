//! Soft dynamic time warping, its normalized divergence, and classic DTW.
//!
//! The soft-DTW recursion over a local cost `e(i, j)` is
//!
//! ```text
//! D(i, j) = e(i, j) + softmin_lambda{ D(i, j-1), D(i-1, j), D(i-1, j-1) }
//! softmin_lambda{m} = min(m)                          if lambda == 0
//!                   = -lambda * ln sum exp(-m_i / lambda)  otherwise
//! ```
//!
//! and the divergence `SD(a, b) = D(a, b) - (D(a, a) + D(b, b)) / 2` is
//! non-negative and vanishes only at `a == b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synth::AlignmentPath;

/// Stand-in for the +infinity boundary of the accumulation table.
const BOUNDARY: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalCost {
    /// `|x - y|`
    #[default]
    AbsDiff,
    /// `(x - y)^2`
    SquaredDiff,
}

impl LocalCost {
    #[inline]
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            LocalCost::AbsDiff => (x - y).abs(),
            LocalCost::SquaredDiff => (x - y) * (x - y),
        }
    }

    /// Partial derivative with respect to `x`; the one for `y` is its negation.
    /// The absolute difference uses `sign(0) = 0`.
    #[inline]
    fn dx(self, x: f64, y: f64) -> f64 {
        match self {
            LocalCost::AbsDiff => {
                if x > y {
                    1.0
                } else if x < y {
                    -1.0
                } else {
                    0.0
                }
            }
            LocalCost::SquaredDiff => 2.0 * (x - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftDtwParams {
    pub lambda: f64,
    #[serde(default)]
    pub cost: LocalCost,
}

impl SoftDtwParams {
    pub fn new(lambda: f64, cost: LocalCost) -> Result<Self> {
        let p = SoftDtwParams { lambda, cost };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "soft-DTW smoothing must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl Default for SoftDtwParams {
    fn default() -> Self {
        SoftDtwParams {
            lambda: 1.0,
            cost: LocalCost::AbsDiff,
        }
    }
}

/// Smoothed minimum. Equals `min` at `lambda == 0` and is never above it.
pub fn soft_min(values: &[f64], lambda: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("soft_min of an empty list".to_string()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("negative smoothing {lambda}")));
    }
    Ok(soft_min_unchecked(values, lambda))
}

#[inline]
fn soft_min_unchecked(values: &[f64], lambda: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lambda == 0.0 {
        return min;
    }
    let sum: f64 = values.iter().map(|m| (-(m - min) / lambda).exp()).sum();
    min - lambda * sum.ln()
}

/// Accumulated soft costs, `(p + 1) x (r + 1)` with a boundary row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DpTable {
    /// `D(i, j)`, 1-based in the sequences; row and column 0 are the boundary.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn value(&self) -> f64 {
        self.get(self.rows - 1, self.cols - 1)
    }
}

fn cost_matrix(a: &[f64], b: &[f64], cost: LocalCost) -> Matrix {
    Matrix::from_fn(a.len(), b.len(), |i, j| cost.eval(a[i], b[j]))
}

fn check_sequences(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("soft-DTW needs non-empty sequences".to_string()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "soft_dtw" });
    }
    Ok(())
}

/// Soft-DTW accumulation over a precomputed local cost matrix.
pub fn soft_dtw_costs(costs: &Matrix, lambda: f64) -> Result<(f64, DpTable)> {
    if costs.rows() == 0 || costs.cols() == 0 {
        return Err(Error::Argument("empty cost matrix".to_string()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!("invalid smoothing {lambda}")));
    }
    let (p, r) = (costs.rows(), costs.cols());
    let cols = r + 1;
    let mut values = vec![BOUNDARY; (p + 1) * cols];
    values[0] = 0.0;
    for i in 1..=p {
        for j in 1..=r {
            let prev = [
                values[i * cols + j - 1],
                values[(i - 1) * cols + j],
                values[(i - 1) * cols + j - 1],
            ];
            values[i * cols + j] = costs.get(i - 1, j - 1) + soft_min_unchecked(&prev, lambda);
        }
    }
    let table = DpTable {
        rows: p + 1,
        cols,
        values,
    };
    let v = table.value();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "soft_dtw" });
    }
    Ok((v, table))
}

/// Soft-DTW between two scalar sequences of possibly different lengths.
pub fn soft_dtw(a: &[f64], b: &[f64], params: &SoftDtwParams) -> Result<(f64, DpTable)> {
    check_sequences(a, b)?;
    params.validate()?;
    soft_dtw_costs(&cost_matrix(a, b, params.cost), params.lambda)
}

/// Expected alignment matrix: the gradient of soft-DTW with respect to each
/// local cost, by the reverse recursion over the accumulation table.
fn expected_alignment(costs: &Matrix, table: &DpTable, lambda: f64) -> Matrix {
    let (p, r) = (costs.rows(), costs.cols());
    let w = r + 2;
    let mut rr = vec![-BOUNDARY; (p + 2) * w];
    let mut dd = vec![0.0; (p + 2) * w];
    for i in 0..=p {
        for j in 0..=r {
            rr[i * w + j] = table.get(i, j);
        }
    }
    for i in 1..=p {
        rr[i * w + r + 1] = -BOUNDARY;
        for j in 1..=r {
            dd[i * w + j] = costs.get(i - 1, j - 1);
        }
    }
    for j in 1..=r {
        rr[(p + 1) * w + j] = -BOUNDARY;
    }
    rr[(p + 1) * w + r + 1] = table.get(p, r);
    let mut e = vec![0.0; (p + 2) * w];
    e[(p + 1) * w + r + 1] = 1.0;
    for j in (1..=r).rev() {
        for i in (1..=p).rev() {
            let here = rr[i * w + j];
            let down = ((rr[(i + 1) * w + j] - here - dd[(i + 1) * w + j]) / lambda).exp();
            let right = ((rr[i * w + j + 1] - here - dd[i * w + j + 1]) / lambda).exp();
            let diag = ((rr[(i + 1) * w + j + 1] - here - dd[(i + 1) * w + j + 1]) / lambda).exp();
            e[i * w + j] = e[(i + 1) * w + j] * down + e[i * w + j + 1] * right + e[(i + 1) * w + j + 1] * diag;
        }
    }
    Matrix::from_fn(p, r, |i, j| e[(i + 1) * w + j + 1])
}

/// Normalized soft-DTW divergence `D(a, b) - (D(a, a) + D(b, b)) / 2`.
pub fn divergence(a: &[f64], b: &[f64], params: &SoftDtwParams) -> Result<f64> {
    let (ab, _) = soft_dtw(a, b, params)?;
    let (aa, _) = soft_dtw(a, a, params)?;
    let (bb, _) = soft_dtw(b, b, params)?;
    Ok(ab - 0.5 * (aa + bb))
}

/// Divergence value with gradients for both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Gradient of soft-DTW over sequences `x`, `y` with respect to both.
fn soft_dtw_grads(x: &[f64], y: &[f64], params: &SoftDtwParams) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let costs = cost_matrix(x, y, params.cost);
    let (v, table) = soft_dtw_costs(&costs, params.lambda)?;
    let e = expected_alignment(&costs, &table, params.lambda);
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    for (i, &xi) in x.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            let weight = e.get(i, j);
            if weight == 0.0 {
                continue;
            }
            let d = params.cost.dx(xi, yj);
            gx[i] += weight * d;
            gy[j] -= weight * d;
        }
    }
    Ok((v, gx, gy))
}

pub fn divergence_grads(a: &[f64], b: &[f64], params: &SoftDtwParams) -> Result<DivergenceGrad> {
    check_sequences(a, b)?;
    params.validate()?;
    if params.lambda == 0.0 {
        return Err(Error::NotDifferentiable(
            "soft-DTW divergence has no gradient at lambda = 0".to_string(),
        ));
    }
    let (ab, mut grad_a, mut grad_b) = soft_dtw_grads(a, b, params)?;
    let (aa, ga1, ga2) = soft_dtw_grads(a, a, params)?;
    let (bb, gb1, gb2) = soft_dtw_grads(b, b, params)?;
    for (i, g) in grad_a.iter_mut().enumerate() {
        *g -= 0.5 * (ga1[i] + ga2[i]);
    }
    for (j, g) in grad_b.iter_mut().enumerate() {
        *g -= 0.5 * (gb1[j] + gb2[j]);
    }
    Ok(DivergenceGrad {
        value: ab - 0.5 * (aa + bb),
        grad_a,
        grad_b,
    })
}

/// Gradient of the divergence with respect to its first argument.
pub fn divergence_grad(a: &[f64], b: &[f64], params: &SoftDtwParams) -> Result<Vec<f64>> {
    Ok(divergence_grads(a, b, params)?.grad_a)
}

/// Result of classic DTW on a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Sum of local costs along the optimal path.
    pub cost: f64,
    /// Visited `(row, col)` cells from `(0, 0)` to `(p - 1, q - 1)`.
    pub cells: Vec<(usize, usize)>,
    /// For every row, the mean column visited.
    pub path: AlignmentPath,
}

/// Hard-minimum DTW with backtracking. Rows are the performance axis.
/// Backtracking ties prefer the diagonal step, then the vertical one.
pub fn dtw_classic(costs: &Matrix) -> Result<DtwResult> {
    let (p, q) = (costs.rows(), costs.cols());
    let (cost, table) = soft_dtw_costs(costs, 0.0)?;
    let (mut i, mut j) = (p, q);
    let mut cells = vec![(p - 1, q - 1)];
    while (i, j) != (1, 1) {
        let diag = table.get(i - 1, j - 1);
        let vert = table.get(i - 1, j);
        let horiz = table.get(i, j - 1);
        if diag <= vert && diag <= horiz {
            i -= 1;
            j -= 1;
        } else if vert <= horiz {
            i -= 1;
        } else {
            j -= 1;
        }
        cells.push((i - 1, j - 1));
    }
    cells.reverse();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for &(r, c) in &cells {
        sums[r] += c as f64;
        counts[r] += 1;
    }
    let y = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    Ok(DtwResult {
        cost,
        cells,
        path: AlignmentPath::new(y),
    })
}

#[cfg(test)]
mod tests;
