//! Training objectives on network outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softdtw::{divergence_grads, SoftDtwParams};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Soft-DTW divergence between predicted and true grid paths.
    Custom,
    /// Per-frame cross-entropy over score bins.
    Ce,
}

/// Loss for a batch. `targets` holds one grid path (length `L`, values in
/// `[0, L - 1]`) per sample.
///
/// `Custom` expects `out` of shape `[N, L]` and compares both paths after
/// division by `L - 1`; `Ce` expects `[N * L, L]` logits and rounds targets.
pub fn loss(tape: &mut Tape, out: Var, targets: &[Vec<f64>], kind: LossKind, params: &SoftDtwParams) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n = targets.len();
    if n == 0 {
        return Err(Error::Argument("empty batch".to_string()));
    }
    let l = targets[0].len();
    if targets.iter().any(|t| t.len() != l) || l < 2 {
        return Err(Error::dim("loss", "targets must share a length of at least 2"));
    }
    match kind {
        LossKind::Custom => {
            if shape != [n, l] {
                return Err(Error::dim("loss", format!("output {shape:?}, expected [{n}, {l}]")));
            }
            if params.lambda == 0.0 {
                return Err(Error::NotDifferentiable(
                    "custom loss needs a positive smoothing parameter".to_string(),
                ));
            }
            let scale = (l - 1) as f64;
            let values = tape.value(out).data().to_vec();
            let mut total = 0.0;
            let mut local = Vec::with_capacity(values.len());
            for (pred, gt) in values.chunks(l).zip(targets) {
                let a: Vec<f64> = pred.iter().map(|v| v / scale).collect();
                let b: Vec<f64> = gt.iter().map(|v| v / scale).collect();
                let d = divergence_grads(&a, &b, params)?;
                total += d.value;
                local.extend(d.grad_a.iter().map(|g| g / (scale * n as f64)));
            }
            tape.scalar_fn(out, total / n as f64, local)
        }
        LossKind::Ce => {
            if shape != [n * l, l] {
                return Err(Error::dim("loss", format!("logits {shape:?}, expected [{}, {l}]", n * l)));
            }
            let classes: Vec<usize> = targets
                .iter()
                .flatten()
                .map(|&y| y.round().clamp(0.0, (l - 1) as f64) as usize)
                .collect();
            tape.cross_entropy(out, &classes)
        }
    }
}
