//! Batch normalization and dropout.

use rand::Rng;
use rand::RngCore;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report updated running statistics.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug)]
pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

pub(crate) struct BnForward {
    pub out: Vec<f64>,
    pub cache: BnCache,
    pub updated: Option<RunningStats>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward(
    shape: [usize; 4],
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    stats: &RunningStats,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<BnForward> {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let count = n * plane;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim(
            "batchnorm2d",
            format!("{c} channels but affine/stat vectors of different length"),
        ));
    }
    if mode == BnMode::Train && count < 2 {
        return Err(Error::dim(
            "batchnorm2d",
            "training mode needs at least 2 values per channel",
        ));
    }
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    let mut updated = (mode == BnMode::Train).then(|| stats.clone());
    for ch in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sum += x[off..off + plane].iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    sq += x[off..off + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = sq / count as f64;
                if let Some(u) = updated.as_mut() {
                    let unbiased = sq / (count - 1) as f64;
                    u.mean[ch] = (1.0 - momentum) * u.mean[ch] + momentum * mean;
                    u.var[ch] = (1.0 - momentum) * u.var[ch] + momentum * unbiased;
                }
                (mean, var)
            }
            BnMode::Eval => (stats.mean[ch], stats.var[ch]),
        };
        let is = 1.0 / (var + eps).sqrt();
        inv_std[ch] = is;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean) * is;
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(BnForward {
        out,
        cache: BnCache {
            xhat,
            inv_std,
            train: mode == BnMode::Train,
        },
        updated,
    })
}

/// Gradients with respect to input, gamma and beta.
pub(crate) fn bn_backward(
    shape: [usize; 4],
    gamma: &[f64],
    cache: &BnCache,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut gx = vec![0.0; gy.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                sum_g += gy[i];
                sum_gx += gy[i] * cache.xhat[i];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gamma[ch] * cache.inv_std[ch];
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                gx[i] = if cache.train {
                    scale * (gy[i] - sum_g / m - cache.xhat[i] * sum_gx / m)
                } else {
                    scale * gy[i]
                };
            }
        }
    }
    (gx, ggamma, gbeta)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
