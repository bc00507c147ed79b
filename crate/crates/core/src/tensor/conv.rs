//! 2-D convolution by im2col followed by a matrix product.

use super::gemm;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, out) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *out = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let gxc = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            gxc[ii as usize * g.w + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the im2col buffers of every sample.
pub(crate) fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ckk = g.ckk();
    let plane = g.out_plane();
    let mut cols = vec![0.0; g.n * ckk * plane];
    let mut out = vec![0.0; g.n * g.f * plane];
    for n in 0..g.n {
        let xs = &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
        let cs = &mut cols[n * ckk * plane..(n + 1) * ckk * plane];
        im2col(g, xs, cs);
        let os = &mut out[n * g.f * plane..(n + 1) * g.f * plane];
        for (f, row) in os.chunks_mut(plane).enumerate() {
            row.fill(b[f]);
        }
        gemm(g.f, ckk, plane, 1.0, w, false, cs, false, 1.0, os);
    }
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub x: Option<Vec<f64>>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

pub(crate) fn backward(g: &ConvGeom, w: &[f64], cols: &[f64], gy: &[f64], need_x: bool) -> ConvGrads {
    let ckk = g.ckk();
    let plane = g.out_plane();
    let mut gw = vec![0.0; g.f * ckk];
    let mut gb = vec![0.0; g.f];
    let mut gx = need_x.then(|| vec![0.0; g.n * g.c * g.h * g.w]);
    let mut gcols = vec![0.0; ckk * plane];
    for n in 0..g.n {
        let gys = &gy[n * g.f * plane..(n + 1) * g.f * plane];
        let cs = &cols[n * ckk * plane..(n + 1) * ckk * plane];
        gemm(g.f, plane, ckk, 1.0, gys, false, cs, true, 1.0, &mut gw);
        for (f, row) in gys.chunks(plane).enumerate() {
            gb[f] += row.iter().sum::<f64>();
        }
        if let Some(gx) = gx.as_mut() {
            gemm(ckk, g.f, plane, 1.0, w, true, gys, false, 0.0, &mut gcols);
            let gxs = &mut gx[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
            col2im(g, &gcols, gxs);
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}
