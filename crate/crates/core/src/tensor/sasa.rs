//! Stand-alone self-attention over a local k x k memory block.
//!
//! For pixel `(i, j)` and head `h` with per-head width `d`:
//!
//! ```text
//! y_ij = sum_{(a,b) in M_k(i,j)} softmax_ab(q_ij . k_ab + q_ij . r_{a-i,b-j}) v_ab
//! ```
//!
//! where `q = W_q x`, `k = W_k x`, `v = W_v x` use per-head `d x d` maps and
//! `r_{a-i,b-j}` concatenates a row-offset embedding (first `d/2` query
//! channels) with a column-offset embedding (remaining channels).
//! Neighbours outside the map are excluded from the softmax.

use super::gemm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SasaSpec {
    pub heads: usize,
    /// Spatial extent of the memory block; odd.
    pub k: usize,
}

impl SasaSpec {
    pub fn head_dim(&self, channels: usize) -> usize {
        channels / self.heads
    }

    /// Query channels that attend to row offsets; the rest use column offsets.
    pub fn row_dim(&self, channels: usize) -> usize {
        self.head_dim(channels) / 2
    }

    pub fn col_dim(&self, channels: usize) -> usize {
        self.head_dim(channels) - self.row_dim(channels)
    }

    pub(crate) fn validate(&self, channels: usize) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::dim("sasa", format!("spatial extent {} must be odd", self.k)));
        }
        if self.heads == 0 || channels % self.heads != 0 {
            return Err(Error::dim(
                "sasa",
                format!("{channels} channels not divisible into {} heads", self.heads),
            ));
        }
        Ok(())
    }
}

pub(crate) struct SasaShapes {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug)]
pub(crate) struct SasaCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[N, heads, H*W, k*k]`, zero on masked slots.
    attn: Vec<f64>,
}

pub(crate) struct SasaWeightsRef<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub row: &'a [f64],
    pub col: &'a [f64],
}

pub(crate) struct SasaGrads {
    pub x: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

fn project(spec: &SasaSpec, s: &SasaShapes, weights: &[f64], x: &[f64]) -> Vec<f64> {
    let d = spec.head_dim(s.c);
    let hw = s.h * s.w;
    let mut out = vec![0.0; x.len()];
    for n in 0..s.n {
        for head in 0..spec.heads {
            let off = (n * s.c + head * d) * hw;
            let wm = &weights[head * d * d..(head + 1) * d * d];
            gemm(d, d, hw, 1.0, wm, false, &x[off..off + d * hw], false, 0.0, &mut out[off..off + d * hw]);
        }
    }
    out
}

/// `[d, hw]` channel-major block to `[hw, d]` pixel-major.
fn to_pixel_major(src: &[f64], d: usize, hw: usize, dst: &mut [f64]) {
    for c in 0..d {
        for p in 0..hw {
            dst[p * d + c] = src[c * hw + p];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn forward(
    spec: &SasaSpec,
    s: &SasaShapes,
    x: &[f64],
    wts: &SasaWeightsRef<'_>,
) -> (Vec<f64>, SasaCache) {
    let d = spec.head_dim(s.c);
    let dr = spec.row_dim(s.c);
    let dc = spec.col_dim(s.c);
    let kk = spec.k;
    let radius = (kk / 2) as isize;
    let hw = s.h * s.w;
    let q = project(spec, s, wts.wq, x);
    let k = project(spec, s, wts.wk, x);
    let v = project(spec, s, wts.wv, x);
    let mut out = vec![0.0; x.len()];
    let mut attn = vec![0.0; s.n * spec.heads * hw * kk * kk];
    let mut rel_row = vec![0.0; kk];
    let mut rel_col = vec![0.0; kk];
    let mut logits = vec![f64::NEG_INFINITY; kk * kk];
    let (mut qt, mut kt, mut vt) = (vec![0.0; d * hw], vec![0.0; d * hw], vec![0.0; d * hw]);
    let mut ot = vec![0.0; d * hw];
    for n in 0..s.n {
        for head in 0..spec.heads {
            let off = (n * s.c + head * d) * hw;
            to_pixel_major(&q[off..off + d * hw], d, hw, &mut qt);
            to_pixel_major(&k[off..off + d * hw], d, hw, &mut kt);
            to_pixel_major(&v[off..off + d * hw], d, hw, &mut vt);
            ot.fill(0.0);
            let row_t = &wts.row[head * kk * dr..(head + 1) * kk * dr];
            let col_t = &wts.col[head * kk * dc..(head + 1) * kk * dc];
            for i in 0..s.h {
                for j in 0..s.w {
                    let p = i * s.w + j;
                    let qp = &qt[p * d..(p + 1) * d];
                    for t in 0..kk {
                        rel_row[t] = dot(&qp[..dr], &row_t[t * dr..(t + 1) * dr]);
                        rel_col[t] = dot(&qp[dr..], &col_t[t * dc..(t + 1) * dc]);
                    }
                    let mut max = f64::NEG_INFINITY;
                    for ta in 0..kk {
                        let a = i as isize + ta as isize - radius;
                        for tb in 0..kk {
                            let b = j as isize + tb as isize - radius;
                            let slot = ta * kk + tb;
                            if a < 0 || a >= s.h as isize || b < 0 || b >= s.w as isize {
                                logits[slot] = f64::NEG_INFINITY;
                                continue;
                            }
                            let nb = a as usize * s.w + b as usize;
                            let l = dot(qp, &kt[nb * d..(nb + 1) * d]) + rel_row[ta] + rel_col[tb];
                            logits[slot] = l;
                            max = max.max(l);
                        }
                    }
                    let a_off = ((n * spec.heads + head) * hw + p) * kk * kk;
                    let weights = &mut attn[a_off..a_off + kk * kk];
                    let mut z = 0.0;
                    for (wgt, &l) in weights.iter_mut().zip(&logits) {
                        *wgt = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
                        z += *wgt;
                    }
                    for wgt in weights.iter_mut() {
                        *wgt /= z;
                    }
                    let op = &mut ot[p * d..(p + 1) * d];
                    for ta in 0..kk {
                        let a = i as isize + ta as isize - radius;
                        for tb in 0..kk {
                            let wgt = weights[ta * kk + tb];
                            if wgt == 0.0 {
                                continue;
                            }
                            let b = j as isize + tb as isize - radius;
                            let nb = a as usize * s.w + b as usize;
                            for (o, &vv) in op.iter_mut().zip(&vt[nb * d..(nb + 1) * d]) {
                                *o += wgt * vv;
                            }
                        }
                    }
                }
            }
            for c in 0..d {
                for p in 0..hw {
                    out[off + c * hw + p] = ot[p * d + c];
                }
            }
        }
    }
    (out, SasaCache { q, k, v, attn })
}

pub(crate) fn backward(
    spec: &SasaSpec,
    s: &SasaShapes,
    x: &[f64],
    wts: &SasaWeightsRef<'_>,
    cache: &SasaCache,
    gy: &[f64],
) -> SasaGrads {
    let d = spec.head_dim(s.c);
    let dr = spec.row_dim(s.c);
    let dc = spec.col_dim(s.c);
    let kk = spec.k;
    let radius = (kk / 2) as isize;
    let hw = s.h * s.w;
    let mut gx = vec![0.0; x.len()];
    let mut gwq = vec![0.0; wts.wq.len()];
    let mut gwk = vec![0.0; wts.wk.len()];
    let mut gwv = vec![0.0; wts.wv.len()];
    let mut grow = vec![0.0; wts.row.len()];
    let mut gcol = vec![0.0; wts.col.len()];
    let mut gq = vec![0.0; d * hw];
    let mut gk = vec![0.0; d * hw];
    let mut gv = vec![0.0; d * hw];
    // pixel-major working copies
    let (mut qt, mut kt, mut vt, mut gyt) = (vec![0.0; d * hw], vec![0.0; d * hw], vec![0.0; d * hw], vec![0.0; d * hw]);
    let (mut gqt, mut gkt, mut gvt) = (vec![0.0; d * hw], vec![0.0; d * hw], vec![0.0; d * hw]);
    let mut dlogit = vec![0.0; kk * kk];
    let mut dl_row = vec![0.0; kk];
    let mut dl_col = vec![0.0; kk];
    for n in 0..s.n {
        for head in 0..spec.heads {
            let off = (n * s.c + head * d) * hw;
            to_pixel_major(&cache.q[off..off + d * hw], d, hw, &mut qt);
            to_pixel_major(&cache.k[off..off + d * hw], d, hw, &mut kt);
            to_pixel_major(&cache.v[off..off + d * hw], d, hw, &mut vt);
            to_pixel_major(&gy[off..off + d * hw], d, hw, &mut gyt);
            let row_t = &wts.row[head * kk * dr..(head + 1) * kk * dr];
            let col_t = &wts.col[head * kk * dc..(head + 1) * kk * dc];
            gqt.fill(0.0);
            gkt.fill(0.0);
            gvt.fill(0.0);
            for i in 0..s.h {
                for j in 0..s.w {
                    let p = i * s.w + j;
                    let a_off = ((n * spec.heads + head) * hw + p) * kk * kk;
                    let weights = &cache.attn[a_off..a_off + kk * kk];
                    let gp = &gyt[p * d..(p + 1) * d];
                    let mut expect = 0.0;
                    for ta in 0..kk {
                        let a = i as isize + ta as isize - radius;
                        for tb in 0..kk {
                            let slot = ta * kk + tb;
                            let wgt = weights[slot];
                            dlogit[slot] = 0.0;
                            if wgt == 0.0 {
                                continue;
                            }
                            let b = j as isize + tb as isize - radius;
                            let nb = a as usize * s.w + b as usize;
                            let da = dot(gp, &vt[nb * d..(nb + 1) * d]);
                            for (gvv, &g) in gvt[nb * d..(nb + 1) * d].iter_mut().zip(gp) {
                                *gvv += wgt * g;
                            }
                            dlogit[slot] = da;
                            expect += wgt * da;
                        }
                    }
                    dl_row.fill(0.0);
                    dl_col.fill(0.0);
                    let qp = &qt[p * d..(p + 1) * d];
                    for ta in 0..kk {
                        let a = i as isize + ta as isize - radius;
                        for tb in 0..kk {
                            let slot = ta * kk + tb;
                            let wgt = weights[slot];
                            if wgt == 0.0 {
                                continue;
                            }
                            let dl = wgt * (dlogit[slot] - expect);
                            dl_row[ta] += dl;
                            dl_col[tb] += dl;
                            let b = j as isize + tb as isize - radius;
                            let nb = a as usize * s.w + b as usize;
                            let kn = &kt[nb * d..(nb + 1) * d];
                            for (g, &kv) in gqt[p * d..(p + 1) * d].iter_mut().zip(kn) {
                                *g += dl * kv;
                            }
                            for (g, &qv) in gkt[nb * d..(nb + 1) * d].iter_mut().zip(qp) {
                                *g += dl * qv;
                            }
                        }
                    }
                    let grow_h = &mut grow[head * kk * dr..(head + 1) * kk * dr];
                    let gcol_h = &mut gcol[head * kk * dc..(head + 1) * kk * dc];
                    let gqp = &mut gqt[p * d..(p + 1) * d];
                    for t in 0..kk {
                        for c in 0..dr {
                            gqp[c] += dl_row[t] * row_t[t * dr + c];
                            grow_h[t * dr + c] += dl_row[t] * qp[c];
                        }
                        for c in 0..dc {
                            gqp[dr + c] += dl_col[t] * col_t[t * dc + c];
                            gcol_h[t * dc + c] += dl_col[t] * qp[dr + c];
                        }
                    }
                }
            }
            for c in 0..d {
                for p in 0..hw {
                    gq[c * hw + p] = gqt[p * d + c];
                    gk[c * hw + p] = gkt[p * d + c];
                    gv[c * hw + p] = gvt[p * d + c];
                }
            }
            let xg = &x[off..off + d * hw];
            let gxg = &mut gx[off..off + d * hw];
            for (wm, gwm, gproj) in [
                (wts.wq, &mut gwq, &gq),
                (wts.wk, &mut gwk, &gk),
                (wts.wv, &mut gwv, &gv),
            ] {
                let wh = &wm[head * d * d..(head + 1) * d * d];
                gemm(d, hw, d, 1.0, gproj, false, xg, true, 1.0, &mut gwm[head * d * d..(head + 1) * d * d]);
                gemm(d, d, hw, 1.0, wh, true, gproj, false, 1.0, gxg);
            }
        }
    }
    SasaGrads {
        x: gx,
        wq: gwq,
        wk: gwk,
        wv: gwv,
        row: grow,
        col: gcol,
    }
}
