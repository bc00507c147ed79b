//! Synthetic performance-score corpora.
//!
//! Scores are random diatonic note sequences on a frame grid. Performances
//! replay the score under a piecewise-constant tempo warp, optionally with a
//! structural deviation (a repeat or a skipped section on a second pass).
//! Features are symbolic chromagrams; the model input is the Euclidean
//! cross-similarity matrix between them.

mod corpus;
mod features;
mod piece;
mod render;
mod resize;

pub use corpus::{
    generate_corpus, read_corpus, write_corpus, Corpus, CorpusConfig, PerformancePair, Split,
};
pub use features::{chroma_features, cross_similarity};
pub use piece::{generate_piece, NoteEvent};
pub use render::{render_performance, render_with_plan, PlanKind, Rendering, SegmentPlan};
pub use resize::{path_to_grid, rescale_path, resize_and_pad, resize_meta, ResizeMeta};

use serde::{Deserialize, Serialize};

/// Score position (fractional frame index) for every performance frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub y_indices: Vec<f64>,
}

impl AlignmentPath {
    pub fn new(y_indices: Vec<f64>) -> Self {
        AlignmentPath { y_indices }
    }

    pub fn len(&self) -> usize {
        self.y_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_indices.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.y_indices.windows(2).all(|w| w[1] >= w[0])
    }

    /// Number of strict decreases between consecutive frames.
    pub fn decreases(&self) -> usize {
        self.y_indices.windows(2).filter(|w| w[1] < w[0]).count()
    }
}
