use super::NoteEvent;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Symbolic chromagram: each sounding note adds 1 to bin `pitch mod 12`,
/// then every non-zero frame is scaled to unit L2 norm.
pub fn chroma_features(events: &[NoteEvent], n_frames: usize) -> Matrix {
    let mut m = Matrix::zeros(n_frames, 12);
    for e in events {
        let bin = (e.midi_pitch % 12) as usize;
        for f in e.onset_frame..e.end_frame().min(n_frames) {
            m.set(f, bin, m.get(f, bin) + 1.0);
        }
    }
    for f in 0..n_frames {
        let norm = m.row(f).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for b in 0..12 {
                m.set(f, b, m.get(f, b) / norm);
            }
        }
    }
    m
}

/// Euclidean distance between every performance row and every score row.
pub fn cross_similarity(perf: &Matrix, score: &Matrix) -> Result<Matrix> {
    if perf.rows() == 0 || score.rows() == 0 {
        return Err(Error::Argument("empty feature sequence".to_string()));
    }
    if perf.cols() != score.cols() {
        return Err(Error::dim(
            "cross_similarity",
            format!("feature dimension {} vs {}", perf.cols(), score.cols()),
        ));
    }
    Ok(Matrix::from_fn(perf.rows(), score.rows(), |i, j| {
        perf.row(i)
            .iter()
            .zip(score.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }))
}
