//! Central-difference verification of tape gradients.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ensure_finite, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Check at most this many coordinates, sampled uniformly; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Compare the analytic gradient of the scalar produced by `f` with central
/// differences over the trainable tensors of `store`.
///
/// Returns `max |analytic - numeric| / max(1, |analytic|)` over the checked
/// coordinates. `f` must be deterministic (evaluation mode, no dropout).
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, opts: GradCheckOptions) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    let analytic: HashMap<String, Vec<f64>> = tape
        .named_grads(&grads)
        .map(|(n, g)| (n.to_string(), g.to_vec()))
        .collect();
    for g in analytic.values() {
        ensure_finite("grad_check", g)?;
    }

    let coords: Vec<(String, usize)> = store
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .flat_map(|(n, t)| (0..t.numel()).map(move |i| (n.to_string(), i)))
        .collect();
    let picked: Vec<usize> = match opts.max_coords {
        Some(m) if m < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..coords.len()).collect(),
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(store, &mut t)?;
        Ok(t.value(v).data()[0])
    };

    let mut worst: f64 = 0.0;
    for ci in picked {
        let (name, i) = &coords[ci];
        let a = analytic.get(name).map_or(0.0, |g| g[*i]);
        let orig = store.get(name).expect("listed parameter").data()[*i];
        store.get_mut(name).expect("listed parameter").data_mut()[*i] = orig + opts.eps;
        let plus = eval(store);
        store.get_mut(name).expect("listed parameter").data_mut()[*i] = orig - opts.eps;
        let minus = eval(store);
        store.get_mut(name).expect("listed parameter").data_mut()[*i] = orig;
        let numeric = (plus? - minus?) / (2.0 * opts.eps);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
