//! Corpus generation and the on-disk layout.
//!
//! A corpus directory holds `manifest.json` and one binary file per pair
//! under `pairs/`. Each binary file concatenates four arrays (score
//! features, performance features, similarity matrix, ground-truth path),
//! each prefixed by a 16-byte header: magic `SSYN`, `u16` version, `u16`
//! ndim, `u32[2]` extents, all little-endian; the payload is row-major
//! little-endian `f64`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    chroma_features, cross_similarity, generate_piece, render_performance, AlignmentPath,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::DEFAULT_FRAME_SECONDS;

const MAGIC: &[u8; 4] = b"SSYN";
const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const PAIR_RETRIES: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub pieces: usize,
    /// Fraction of pairs that carry a structural deviation.
    pub structural_frac: f64,
    pub min_score_frames: usize,
    pub max_score_frames: usize,
    pub polyphony: usize,
    pub tempo_lo: f64,
    pub tempo_hi: f64,
    pub frame_seconds: f64,
    /// Fractions of the non-structural pairs held out for validation and test.
    pub val_frac: f64,
    pub test_frac: f64,
    /// Longest performance accepted, in frames.
    pub max_perf_frames: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            pieces: 64,
            structural_frac: 0.2,
            min_score_frames: 24,
            max_score_frames: 40,
            polyphony: 2,
            tempo_lo: 1.0,
            tempo_hi: 1.8,
            frame_seconds: DEFAULT_FRAME_SECONDS,
            val_frac: 0.125,
            test_frac: 0.125,
            max_perf_frames: 256,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.structural_frac) {
            return Err(Error::Config(format!(
                "structural-frac must lie in [0, 1], got {}",
                self.structural_frac
            )));
        }
        if self.pieces == 0 {
            return Err(Error::Config("pieces must be at least 1".to_string()));
        }
        if self.min_score_frames < 16 || self.max_score_frames < self.min_score_frames {
            return Err(Error::Config(format!(
                "score length range [{}, {}] invalid (minimum 16)",
                self.min_score_frames, self.max_score_frames
            )));
        }
        if !(self.frame_seconds > 0.0 && self.frame_seconds.is_finite()) {
            return Err(Error::Config("frame_seconds must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.val_frac)
            || !(0.0..1.0).contains(&self.test_frac)
            || self.val_frac + self.test_frac >= 1.0
        {
            return Err(Error::Config("val_frac + test_frac must lie in [0, 1)".to_string()));
        }
        Ok(())
    }

    pub fn structural_count(&self) -> usize {
        (self.pieces as f64 * self.structural_frac).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformancePair {
    pub id: String,
    /// `q x 12`
    pub score_features: Matrix,
    /// `p x 12`
    pub perf_features: Matrix,
    /// `p x q` Euclidean cross-similarity.
    pub similarity: Matrix,
    /// Length `p`, values in `[0, q - 1]`.
    pub gt_path: AlignmentPath,
    pub structural: bool,
    pub frame_seconds: f64,
    pub split: Split,
    /// Segment order such as `"A B A"`.
    pub plan: String,
}

impl PerformancePair {
    pub fn p(&self) -> usize {
        self.perf_features.rows()
    }

    pub fn q(&self) -> usize {
        self.score_features.rows()
    }

    /// Build one pair from its seeds.
    pub fn synthesize(id: String, seed: u64, structural: bool, cfg: &CorpusConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..PAIR_RETRIES {
            let q = rng.gen_range(cfg.min_score_frames..=cfg.max_score_frames);
            let score = generate_piece(rng.gen(), q, cfg.polyphony)?;
            let r = match render_performance(&score, rng.gen(), (cfg.tempo_lo, cfg.tempo_hi), structural) {
                Ok(r) => r,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let p = r.n_perf_frames;
            // the grid mapping stretches the score by L/p, so it must fit
            if p < q || p > cfg.max_perf_frames {
                continue;
            }
            let score_features = chroma_features(&score, q);
            let perf_features = chroma_features(&r.perf_events, p);
            let similarity = cross_similarity(&perf_features, &score_features)?;
            return Ok(PerformancePair {
                id,
                score_features,
                perf_features,
                similarity,
                gt_path: r.gt_path,
                structural,
                frame_seconds: cfg.frame_seconds,
                split: Split::Train,
                plan: r.plan.label(),
            });
        }
        Err(last_err.unwrap_or_else(|| {
            Error::Config(format!(
                "no admissible performance for {id} in {PAIR_RETRIES} attempts; widen tempo or length limits"
            ))
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub pairs: Vec<PerformancePair>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&PerformancePair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&PerformancePair> {
        self.pairs.iter().find(|p| p.id == id)
    }
}

/// Deterministic corpus: exactly `round(pieces * structural_frac)`
/// structural pairs, half of them in training and half in test; the
/// non-structural pairs are divided by `val_frac` and `test_frac`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.pieces;
    let n_struct = cfg.structural_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut structural = vec![false; n];
    let mut split = vec![Split::Train; n];
    for (rank, &idx) in order.iter().take(n_struct).enumerate() {
        structural[idx] = true;
        split[idx] = if rank < n_struct / 2 { Split::Train } else { Split::Test };
    }
    let plain: Vec<usize> = order[n_struct..].to_vec();
    let n_val = (plain.len() as f64 * cfg.val_frac).round() as usize;
    let n_test = (plain.len() as f64 * cfg.test_frac).round() as usize;
    for (rank, &idx) in plain.iter().enumerate() {
        split[idx] = if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    let seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let pairs = (0..n)
        .map(|k| {
            let mut pair = PerformancePair::synthesize(format!("pair{k:04}"), seeds[k], structural[k], cfg)?;
            pair.split = split[k];
            Ok(pair)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: cfg.clone(),
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayOffsets {
    score_features: usize,
    perf_features: usize,
    similarity: usize,
    gt_path: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    p: usize,
    q: usize,
    structural: bool,
    split: Split,
    plan: String,
    frame_seconds: f64,
    file: String,
    offsets: ArrayOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u16,
    config: CorpusConfig,
    pairs: Vec<ManifestEntry>,
}

fn push_array(buf: &mut Vec<u8>, ndim: u16, extents: [u32; 2], data: &[f64]) -> usize {
    let offset = buf.len();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ndim.to_le_bytes());
    buf.extend_from_slice(&extents[0].to_le_bytes());
    buf.extend_from_slice(&extents[1].to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    offset
}

fn read_array(bytes: &[u8], offset: usize, path: &Path) -> Result<(u16, [u32; 2], Vec<f64>)> {
    let header = bytes
        .get(offset..offset + HEADER_LEN)
        .ok_or_else(|| Error::format(path, format!("truncated header at byte {offset}")))?;
    if &header[..4] != MAGIC {
        return Err(Error::format(path, format!("bad magic at byte {offset}")));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported array version {version}")));
    }
    let ndim = u16::from_le_bytes([header[6], header[7]]);
    let e0 = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    let e1 = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes"));
    let n = e0 as usize * e1 as usize;
    let start = offset + HEADER_LEN;
    let payload = bytes
        .get(start..start + 8 * n)
        .ok_or_else(|| Error::format(path, format!("truncated payload at byte {start}")))?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((ndim, [e0, e1], data))
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let pair_dir = dir.join("pairs");
    fs::create_dir_all(&pair_dir).map_err(|e| Error::io(&pair_dir, e))?;
    let mut entries = Vec::with_capacity(corpus.pairs.len());
    for pair in &corpus.pairs {
        let (p, q) = (pair.p() as u32, pair.q() as u32);
        let mut buf = Vec::new();
        let offsets = ArrayOffsets {
            score_features: push_array(&mut buf, 2, [q, 12], pair.score_features.data()),
            perf_features: push_array(&mut buf, 2, [p, 12], pair.perf_features.data()),
            similarity: push_array(&mut buf, 2, [p, q], pair.similarity.data()),
            gt_path: push_array(&mut buf, 1, [p, 1], &pair.gt_path.y_indices),
        };
        let file = format!("pairs/{}.bin", pair.id);
        let path = dir.join(&file);
        fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: pair.id.clone(),
            p: pair.p(),
            q: pair.q(),
            structural: pair.structural,
            split: pair.split,
            plan: pair.plan.clone(),
            frame_seconds: pair.frame_seconds,
            file,
            offsets,
        });
    }
    let manifest = Manifest {
        format: "ssyn-corpus".to_string(),
        version: FORMAT_VERSION,
        config: corpus.config.clone(),
        pairs: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for entry in manifest.pairs {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (p, q) = (entry.p as u32, entry.q as u32);
        let take = |offset: usize, ndim: u16, extents: [u32; 2]| -> Result<Vec<f64>> {
            let (nd, ext, data) = read_array(&bytes, offset, &path)?;
            if nd != ndim || ext != extents {
                return Err(Error::format(
                    &path,
                    format!("array at {offset}: ndim {nd} extents {ext:?}, expected {ndim} {extents:?}"),
                ));
            }
            Ok(data)
        };
        let score = take(entry.offsets.score_features, 2, [q, 12])?;
        let perf = take(entry.offsets.perf_features, 2, [p, 12])?;
        let sim = take(entry.offsets.similarity, 2, [p, q])?;
        let gt = take(entry.offsets.gt_path, 1, [p, 1])?;
        pairs.push(PerformancePair {
            id: entry.id,
            score_features: Matrix::new(entry.q, 12, score)?,
            perf_features: Matrix::new(entry.p, 12, perf)?,
            similarity: Matrix::new(entry.p, entry.q, sim)?,
            gt_path: AlignmentPath::new(gt),
            structural: entry.structural,
            frame_seconds: entry.frame_seconds,
            split: entry.split,
            plan: entry.plan,
        });
    }
    Ok(Corpus {
        config: manifest.config,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            pieces: 10,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn structural_count_and_splits() {
        let c = generate_corpus(&small()).unwrap();
        let st: Vec<_> = c.pairs.iter().filter(|p| p.structural).collect();
        assert_eq!(st.len(), 2);
        assert_eq!(st.iter().filter(|p| p.split == Split::Train).count(), 1);
        assert_eq!(st.iter().filter(|p| p.split == Split::Test).count(), 1);
        for p in &c.pairs {
            assert_eq!(p.gt_path.is_monotone(), !p.structural, "{}", p.id);
            assert!(p.gt_path.y_indices.iter().all(|&y| y >= 0.0 && y <= (p.q() - 1) as f64));
            assert!(p.p() >= p.q());
            assert!(p.similarity.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(generate_corpus(&small()).unwrap(), generate_corpus(&small()).unwrap());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small()).unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back, c);
        let bytes = fs::read(dir.path().join("pairs/pair0000.bin")).unwrap();
        assert_eq!(&bytes[..4], b"SSYN");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
    }

    #[test]
    fn corrupted_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small()).unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let f = dir.path().join("pairs/pair0003.bin");
        let mut bytes = fs::read(&f).unwrap();
        bytes[0] = b'X';
        fs::write(&f, bytes).unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let cfg = CorpusConfig {
            structural_frac: 1.5,
            ..small()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }
}
