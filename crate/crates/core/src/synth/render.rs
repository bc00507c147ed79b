use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlignmentPath, NoteEvent};
use crate::error::{Error, Result};

const MIN_SEGMENT: usize = 4;
const BOUNDARY_RETRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// The score played once, front to back.
    Linear,
    /// A section played again after the following one (`A B A`, `A B A B`, `A B C B C`).
    Repeat,
    /// A second pass that leaves out a section (`A B A C`).
    Skip,
}

/// A contiguous score span played at a constant tempo factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpPiece {
    pub score_start: f64,
    pub score_end: f64,
    pub perf_start: f64,
    /// Performance frames per score frame.
    pub factor: f64,
}

impl WarpPiece {
    pub fn perf_end(&self) -> f64 {
        self.perf_start + (self.score_end - self.score_start) * self.factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub kind: PlanKind,
    /// Segment edges in score frames, from 0 to q inclusive.
    pub boundaries: Vec<usize>,
    /// Segment indices in performance order.
    pub order: Vec<usize>,
    pub pieces: Vec<WarpPiece>,
}

impl SegmentPlan {
    /// Order written with segment letters, e.g. `"A B A"`.
    pub fn label(&self) -> String {
        self.order
            .iter()
            .map(|&s| ((b'A' + s as u8) as char).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub perf_events: Vec<NoteEvent>,
    pub gt_path: AlignmentPath,
    pub plan: SegmentPlan,
    pub n_perf_frames: usize,
}

fn check_tempo(tempo: (f64, f64)) -> Result<()> {
    let (lo, hi) = tempo;
    if !(lo > 0.0 && lo <= hi && hi / lo <= 4.0 && hi.is_finite()) {
        return Err(Error::Config(format!(
            "tempo range ({lo}, {hi}) must satisfy 0 < lo <= hi and hi/lo <= 4"
        )));
    }
    Ok(())
}

fn score_length(events: &[NoteEvent]) -> Result<usize> {
    events
        .iter()
        .map(NoteEvent::end_frame)
        .max()
        .ok_or_else(|| Error::Argument("score has no events".to_string()))
}

fn draw_factor(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Cut `[0, len)` at `cuts` distinct interior points, each part at least `min_len` long.
fn draw_cuts(rng: &mut ChaCha8Rng, len: usize, cuts: usize, min_len: usize) -> Result<Vec<usize>> {
    for _ in 0..BOUNDARY_RETRIES {
        let mut inner: Vec<usize> = (0..cuts).map(|_| rng.gen_range(1..len)).collect();
        inner.sort_unstable();
        let mut edges = vec![0];
        edges.extend(inner);
        edges.push(len);
        if edges.windows(2).all(|w| w[1] - w[0] >= min_len) {
            return Ok(edges);
        }
    }
    Err(Error::Argument(format!(
        "could not split {len} frames into {} segments of at least {min_len} frames",
        cuts + 1
    )))
}

/// Warp a score to a performance.
///
/// Without `structural`, a tempo curve of 3 to 6 constant pieces with
/// factors in `tempo` stretches the score; the ground truth is the inverse
/// warp and is monotone. With `structural`, the score is cut at one or two
/// boundaries and the performance plays the segments in a repeat or skip
/// order, each occurrence at its own tempo.
pub fn render_performance(
    score_events: &[NoteEvent],
    seed: u64,
    tempo: (f64, f64),
    structural: bool,
) -> Result<Rendering> {
    check_tempo(tempo)?;
    let q = score_length(score_events)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !structural {
        let n_pieces = rng.gen_range(3..=6).min(q);
        let edges = draw_cuts(&mut rng, q, n_pieces - 1, 1)?;
        let factors: Vec<f64> = (0..n_pieces).map(|_| draw_factor(&mut rng, tempo)).collect();
        let mut pieces = Vec::with_capacity(n_pieces);
        let mut t = 0.0;
        for (w, &f) in edges.windows(2).zip(&factors) {
            let piece = WarpPiece {
                score_start: w[0] as f64,
                score_end: w[1] as f64,
                perf_start: t,
                factor: f,
            };
            t = piece.perf_end();
            pieces.push(piece);
        }
        let plan = SegmentPlan {
            kind: PlanKind::Linear,
            boundaries: vec![0, q],
            order: vec![0],
            pieces,
        };
        return realize(score_events, q, plan);
    }

    let two_cuts = q >= 3 * MIN_SEGMENT && rng.gen_bool(0.5);
    let (edges, order, kind) = if two_cuts {
        let edges = draw_cuts(&mut rng, q, 2, MIN_SEGMENT)?;
        if rng.gen_bool(0.5) {
            (edges, vec![0, 1, 2, 1, 2], PlanKind::Repeat)
        } else {
            (edges, vec![0, 1, 0, 2], PlanKind::Skip)
        }
    } else {
        let edges = draw_cuts(&mut rng, q, 1, MIN_SEGMENT)?;
        let order = if rng.gen_bool(0.5) { vec![0, 1, 0] } else { vec![0, 1, 0, 1] };
        (edges, order, PlanKind::Repeat)
    };
    let factors: Vec<f64> = order.iter().map(|_| draw_factor(&mut rng, tempo)).collect();
    render_with_plan(score_events, kind, &edges, &order, &factors)
}

/// Render an explicit segment order; `factors` holds one tempo factor per occurrence.
pub fn render_with_plan(
    score_events: &[NoteEvent],
    kind: PlanKind,
    boundaries: &[usize],
    order: &[usize],
    factors: &[f64],
) -> Result<Rendering> {
    let q = score_length(score_events)?;
    let segments = boundaries.len().saturating_sub(1);
    if boundaries.first() != Some(&0) || boundaries.last() != Some(&q) || boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument(format!("boundaries {boundaries:?} must rise from 0 to {q}")));
    }
    if order.is_empty() || order.iter().any(|&s| s >= segments) || factors.len() != order.len() {
        return Err(Error::Argument("segment order or tempo factors inconsistent with boundaries".to_string()));
    }
    if factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::Config("tempo factors must be positive".to_string()));
    }
    let mut pieces = Vec::with_capacity(order.len());
    let mut t = 0.0;
    for (&seg, &f) in order.iter().zip(factors) {
        let piece = WarpPiece {
            score_start: boundaries[seg] as f64,
            score_end: boundaries[seg + 1] as f64,
            perf_start: t,
            factor: f,
        };
        t = piece.perf_end();
        pieces.push(piece);
    }
    let plan = SegmentPlan {
        kind,
        boundaries: boundaries.to_vec(),
        order: order.to_vec(),
        pieces,
    };
    realize(score_events, q, plan)
}

fn realize(score_events: &[NoteEvent], q: usize, plan: SegmentPlan) -> Result<Rendering> {
    let total = plan.pieces.last().map_or(0.0, WarpPiece::perf_end);
    let p = total.round() as usize;
    if p < 2 {
        return Err(Error::Argument("performance shorter than two frames".to_string()));
    }
    let mut perf_events = Vec::new();
    for piece in &plan.pieces {
        let to_perf = |s: f64| (piece.perf_start + (s - piece.score_start) * piece.factor).round() as usize;
        for e in score_events {
            let on = (e.onset_frame as f64).max(piece.score_start);
            let off = (e.end_frame() as f64).min(piece.score_end);
            if off <= on {
                continue;
            }
            let (a, b) = (to_perf(on), to_perf(off).min(p));
            if b > a {
                perf_events.push(NoteEvent {
                    onset_frame: a,
                    duration_frames: b - a,
                    midi_pitch: e.midi_pitch,
                });
            }
        }
    }
    perf_events.sort_by_key(|e| (e.onset_frame, e.midi_pitch));

    let max_y = (q - 1) as f64;
    let mut y = Vec::with_capacity(p);
    let mut k = 0;
    for i in 0..p {
        let t = i as f64;
        while k + 1 < plan.pieces.len() && t >= plan.pieces[k].perf_end() {
            k += 1;
        }
        let piece = &plan.pieces[k];
        let s = piece.score_start + (t - piece.perf_start) / piece.factor;
        y.push(s.clamp(0.0, max_y));
    }
    Ok(Rendering {
        perf_events,
        gt_path: AlignmentPath::new(y),
        plan,
        n_perf_frames: p,
    })
}
