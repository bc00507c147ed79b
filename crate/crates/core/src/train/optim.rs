//! First-order optimizers over a [`ParamStore`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: HashMap<String, Vec<f64>>,
    second: HashMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    /// One update from `(name, gradient)` pairs; names absent from the store are ignored.
    pub fn step<'a>(&mut self, params: &mut ParamStore, grads: impl IntoIterator<Item = (&'a str, &'a [f64])>) {
        self.step += 1;
        let t = self.step;
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            if !p.requires_grad {
                continue;
            }
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    for ((w, v), gi) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(g) {
                        *v = MOMENTUM * *v + gi;
                        *w -= self.lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let s = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    for (((w, m1), m2), gi) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(s.iter_mut()).zip(g) {
                        *m1 = BETA1 * *m1 + (1.0 - BETA1) * gi;
                        *m2 = BETA2 * *m2 + (1.0 - BETA2) * gi * gi;
                        let mh = *m1 / c1;
                        let vh = *m2 / c2;
                        *w -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
