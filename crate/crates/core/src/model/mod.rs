//! Convolutional-attentional alignment network.
//!
//! The input is an `L x L` performance-by-score similarity matrix. A stack
//! of `[conv 3x3 -> batchnorm -> relu -> maxpool 2x2]` blocks encodes it; the
//! decoder unpools once with the last pooling mask, applies local
//! self-attention layers (or plain convolutions for the ablation), and a
//! two-layer dense block emits the whole path at once.

mod checkpoint;

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synth::{rescale_path, resize_and_pad, AlignmentPath, PerformancePair, ResizeMeta};
use crate::tensor::{BnMode, IndexMask, ParamStore, RunningStats, SasaSpec, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Sasa,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `L` sigmoid outputs scaled to `[0, L - 1]`.
    Regression,
    /// `L x L` logits, one score-bin distribution per performance frame.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Side of the square input grid.
    pub grid_len: usize,
    pub enc_channels: Vec<usize>,
    pub heads: usize,
    pub spatial_extent_k: usize,
    pub sasa_layers: usize,
    pub decoder_kind: DecoderKind,
    pub head_kind: HeadKind,
    pub dropout: f64,
    pub fc_hidden: usize,
    /// Longest performance (in frames) accepted by `predict_alignment`.
    pub max_perf_frames: usize,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid_len: 64,
            enc_channels: vec![16, 32, 64, 64],
            heads: 4,
            spatial_extent_k: 7,
            sasa_layers: 2,
            decoder_kind: DecoderKind::Sasa,
            head_kind: HeadKind::Regression,
            dropout: 0.4,
            fc_hidden: 256,
            max_perf_frames: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.enc_channels.len();
        if blocks == 0 || blocks > 16 {
            return Err(Error::Config("enc_channels must list 1 to 16 blocks".to_string()));
        }
        if self.enc_channels.contains(&0) {
            return Err(Error::Config("encoder channel widths must be positive".to_string()));
        }
        let down = 1usize << blocks;
        if self.grid_len < down || self.grid_len % down != 0 {
            return Err(Error::Config(format!(
                "grid_len {} must be a positive multiple of {down} for {blocks} pooling blocks",
                self.grid_len
            )));
        }
        let c = self.stage_channels();
        if self.decoder_kind == DecoderKind::Sasa {
            if self.heads == 0 || c % self.heads != 0 {
                return Err(Error::Config(format!(
                    "{c} decoder channels not divisible into {} heads",
                    self.heads
                )));
            }
            if self.spatial_extent_k % 2 == 0 {
                return Err(Error::Config(format!(
                    "spatial_extent_k must be odd, got {}",
                    self.spatial_extent_k
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.fc_hidden == 0 {
            return Err(Error::Config("fc_hidden must be positive".to_string()));
        }
        if self.max_perf_frames < 2 {
            return Err(Error::Config("max_perf_frames must be at least 2".to_string()));
        }
        Ok(())
    }

    fn stage_channels(&self) -> usize {
        *self.enc_channels.last().expect("validated non-empty")
    }

    /// Spatial side of the decoder maps (one unpooling above the bottleneck).
    pub fn decoder_side(&self) -> usize {
        self.grid_len >> (self.enc_channels.len() - 1)
    }

    fn sasa_spec(&self) -> SasaSpec {
        SasaSpec {
            heads: self.heads,
            k: self.spatial_extent_k,
        }
    }

    fn head_outputs(&self) -> usize {
        match self.head_kind {
            HeadKind::Regression => self.grid_len,
            HeadKind::Classification => self.grid_len * self.grid_len,
        }
    }

    /// Every tensor of the model in name order: `(name, shape, trainable)`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        let mut c_in = 1;
        for (b, &c) in self.enc_channels.iter().enumerate() {
            let p = format!("enc.block{b}");
            out.push((format!("{p}.conv.weight"), vec![c, c_in, 3, 3], true));
            out.push((format!("{p}.conv.bias"), vec![c], true));
            out.push((format!("{p}.bn.gamma"), vec![c], true));
            out.push((format!("{p}.bn.beta"), vec![c], true));
            out.push((format!("{p}.bn.running_mean"), vec![c], false));
            out.push((format!("{p}.bn.running_var"), vec![c], false));
            c_in = c;
        }
        let c = self.stage_channels();
        for l in 0..self.sasa_layers {
            let p = format!("dec.layer{l}");
            match self.decoder_kind {
                DecoderKind::Sasa => {
                    let spec = self.sasa_spec();
                    let (h, d, k) = (self.heads, spec.head_dim(c), spec.k);
                    out.push((format!("{p}.sasa.wq"), vec![h, d, d], true));
                    out.push((format!("{p}.sasa.wk"), vec![h, d, d], true));
                    out.push((format!("{p}.sasa.wv"), vec![h, d, d], true));
                    out.push((format!("{p}.sasa.row_offsets"), vec![h, k, spec.row_dim(c).max(1)], true));
                    out.push((format!("{p}.sasa.col_offsets"), vec![h, k, spec.col_dim(c)], true));
                }
                DecoderKind::Conv => {
                    out.push((format!("{p}.conv.weight"), vec![c, c, 3, 3], true));
                    out.push((format!("{p}.conv.bias"), vec![c], true));
                }
            }
        }
        let side = self.decoder_side();
        let flat = c * side * side;
        out.push(("head.fc1.weight".to_string(), vec![flat, self.fc_hidden], true));
        out.push(("head.fc1.bias".to_string(), vec![self.fc_hidden], true));
        out.push(("head.fc2.weight".to_string(), vec![self.fc_hidden, self.head_outputs()], true));
        out.push(("head.fc2.bias".to_string(), vec![self.head_outputs()], true));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.layout()
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Network output for one input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPrediction {
    /// Predicted score index for each of the `L` grid rows, in `[0, L - 1]`.
    pub y_hat: Vec<f64>,
    /// `L x L` logits (classification head only).
    pub logits: Option<Matrix>,
}

/// Encoder activations and the pooling masks needed by the decoder.
pub struct Encoded {
    pub out: Var,
    pub masks: Vec<IndexMask>,
}

/// Running-statistics updates produced by a training-mode forward pass.
pub type BnUpdates = Vec<(String, RunningStats)>;

#[derive(Clone, PartialEq)]
pub struct CaModel {
    config: ModelConfig,
    params: ParamStore,
}

impl fmt::Debug for CaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CaModel")
            .field("config", &self.config)
            .field("parameters", &self.config.parameter_count())
            .finish()
    }
}

impl CaModel {
    /// Freshly initialized model: Kaiming-uniform conv and dense weights,
    /// zero biases and offsets, unit batchnorm scale.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, shape, trainable) in config.layout() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".weight") {
                let fan_in = if shape.len() == 4 { shape[1] * shape[2] * shape[3] } else { shape[0] };
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            } else if name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv") {
                let bound = (3.0 / shape[1] as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            let t = Tensor::new(shape, data)?;
            params.insert(name, if trainable { t.with_grad() } else { t })?;
        }
        Ok(CaModel { config, params })
    }

    /// Wrap existing parameters, checking names and shapes against the layout.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "{} stored tensors, layout expects {}",
                params.len(),
                layout.len()
            )));
        }
        let mut params = params;
        for (name, shape, trainable) in layout {
            let t = params
                .get_mut(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            t.requires_grad = trainable;
        }
        Ok(CaModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn running_stats(&self, prefix: &str) -> RunningStats {
        let get = |s: &str| self.params.get(&format!("{prefix}.{s}")).expect("layout tensor").data().to_vec();
        RunningStats {
            mean: get("running_mean"),
            var: get("running_var"),
        }
    }

    /// Encoder over `x [N, 1, L, L]`. Passing `bn_updates` selects
    /// training-mode batch normalization and collects the new statistics.
    pub fn encode(&self, tape: &mut Tape, x: Var, mut bn_updates: Option<&mut BnUpdates>) -> Result<Encoded> {
        let s = tape.value(x).shape();
        let l = self.config.grid_len;
        if s.len() != 4 || s[1] != 1 || s[2] != l || s[3] != l {
            return Err(Error::dim("encode", format!("input shape {s:?}, expected [N, 1, {l}, {l}]")));
        }
        let mode = if bn_updates.is_some() { BnMode::Train } else { BnMode::Eval };
        let mut h = x;
        let mut masks = Vec::with_capacity(self.config.enc_channels.len());
        for b in 0..self.config.enc_channels.len() {
            let p = format!("enc.block{b}");
            let w = tape.param(&self.params, &format!("{p}.conv.weight"))?;
            let bias = tape.param(&self.params, &format!("{p}.conv.bias"))?;
            h = tape.conv2d(h, w, bias, 1, 1)?;
            let gamma = tape.param(&self.params, &format!("{p}.bn.gamma"))?;
            let beta = tape.param(&self.params, &format!("{p}.bn.beta"))?;
            let bn = format!("{p}.bn");
            let (y, upd) = tape.batchnorm2d(h, gamma, beta, &self.running_stats(&bn), mode, BN_MOMENTUM, BN_EPS)?;
            if let (Some(list), Some(stats)) = (bn_updates.as_deref_mut(), upd) {
                list.push((bn, stats));
            }
            h = tape.relu(y)?;
            let (pooled, mask) = tape.maxpool2d_with_indices(h)?;
            h = pooled;
            masks.push(mask);
        }
        Ok(Encoded { out: h, masks })
    }

    /// Decoder and head. Returns `[N, L]` grid indices (regression) or
    /// `[N * L, L]` logits (classification). `rng` enables dropout.
    pub fn decode(&self, tape: &mut Tape, enc: &Encoded, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let mask = enc
            .masks
            .last()
            .ok_or_else(|| Error::dim("decode", "no pooling masks"))?;
        let side = self.config.decoder_side();
        let mut h = tape.max_unpool2d(enc.out, mask, (side, side))?;
        for l in 0..self.config.sasa_layers {
            let p = format!("dec.layer{l}");
            h = match self.config.decoder_kind {
                DecoderKind::Sasa => {
                    let mut w = [h; 5];
                    for (slot, s) in w.iter_mut().zip(["wq", "wk", "wv", "row_offsets", "col_offsets"]) {
                        *slot = tape.param(&self.params, &format!("{p}.sasa.{s}"))?;
                    }
                    tape.sasa(h, w, self.config.sasa_spec())?
                }
                DecoderKind::Conv => {
                    let w = tape.param(&self.params, &format!("{p}.conv.weight"))?;
                    let b = tape.param(&self.params, &format!("{p}.conv.bias"))?;
                    tape.conv2d(h, w, b, 1, 1)?
                }
            };
            h = tape.relu(h)?;
        }
        let n = tape.value(h).shape()[0];
        let flat = tape.value(h).numel() / n;
        h = tape.reshape(h, vec![n, flat])?;
        let w1 = tape.param(&self.params, "head.fc1.weight")?;
        let b1 = tape.param(&self.params, "head.fc1.bias")?;
        h = tape.dense(h, w1, b1)?;
        h = tape.relu(h)?;
        h = tape.dropout(h, self.config.dropout, rng)?;
        let w2 = tape.param(&self.params, "head.fc2.weight")?;
        let b2 = tape.param(&self.params, "head.fc2.bias")?;
        h = tape.dense(h, w2, b2)?;
        let l = self.config.grid_len;
        match self.config.head_kind {
            HeadKind::Regression => {
                let s = tape.sigmoid(h)?;
                tape.scale(s, (l - 1) as f64)
            }
            HeadKind::Classification => tape.reshape(h, vec![n * l, l]),
        }
    }

    /// Full forward pass. With `train = Some(rng)` batchnorm uses batch
    /// statistics (the updates are returned, not applied) and dropout is active.
    pub fn forward(&self, tape: &mut Tape, x: Var, train: Option<&mut dyn RngCore>) -> Result<(Var, BnUpdates)> {
        let mut updates = Vec::new();
        let enc = self.encode(tape, x, train.is_some().then_some(&mut updates))?;
        let out = self.decode(tape, &enc, train)?;
        Ok((out, updates))
    }

    pub fn apply_bn_updates(&mut self, updates: BnUpdates) {
        for (prefix, stats) in updates {
            for (suffix, values) in [("running_mean", stats.mean), ("running_var", stats.var)] {
                let t = self
                    .params
                    .get_mut(&format!("{prefix}.{suffix}"))
                    .expect("layout tensor");
                t.data_mut().copy_from_slice(&values);
            }
        }
    }

    /// Evaluation-mode prediction on an `L x L` grid.
    pub fn predict(&self, grid: &Matrix) -> Result<PathPrediction> {
        let l = self.config.grid_len;
        if grid.rows() != l || grid.cols() != l {
            return Err(Error::dim(
                "predict",
                format!("grid is {}x{}, model expects {l}x{l}", grid.rows(), grid.cols()),
            ));
        }
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 1, l, l], grid.data().to_vec())?);
        let (out, _) = self.forward(&mut tape, x, None)?;
        let values = tape.value(out).data();
        Ok(match self.config.head_kind {
            HeadKind::Regression => PathPrediction {
                y_hat: values.to_vec(),
                logits: None,
            },
            HeadKind::Classification => {
                let logits = Matrix::new(l, l, values.to_vec())?;
                let y_hat = (0..l).map(|i| argmax(logits.row(i)) as f64).collect();
                PathPrediction {
                    y_hat,
                    logits: Some(logits),
                }
            }
        })
    }

    /// Resize the pair's similarity matrix, predict on the grid, and map the
    /// path back to the pair's `p` performance frames.
    pub fn predict_alignment(&self, pair: &PerformancePair) -> Result<AlignmentPath> {
        Ok(self.predict_with_grid(pair)?.0)
    }

    /// Like [`CaModel::predict_alignment`], also returning the grid input,
    /// the grid prediction and the resize metadata.
    pub fn predict_with_grid(&self, pair: &PerformancePair) -> Result<(AlignmentPath, Matrix, PathPrediction, ResizeMeta)> {
        self.predict_matrix(&pair.similarity)
    }

    /// Alignment for a raw `p x q` similarity matrix.
    pub fn predict_matrix(&self, similarity: &Matrix) -> Result<(AlignmentPath, Matrix, PathPrediction, ResizeMeta)> {
        let (grid, meta) = resize_and_pad(similarity, self.config.grid_len, self.config.max_perf_frames)?;
        let pred = self.predict(&grid)?;
        let path = rescale_path(&pred.y_hat, &meta)?;
        Ok((path, grid, pred, meta))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
