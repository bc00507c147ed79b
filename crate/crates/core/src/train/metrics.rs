//! Error-margin accuracy and corpus-level evaluation reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaModel, ModelConfig};
use crate::softdtw::dtw_classic;
use crate::synth::{AlignmentPath, PerformancePair};

/// Margins (seconds) used when none are given.
pub const DEFAULT_MARGINS: [f64; 3] = [0.05, 0.1, 0.2];

pub fn check_margins(margins: &[f64]) -> Result<()> {
    if margins.is_empty() {
        return Err(Error::Argument("margin list is empty".to_string()));
    }
    if let Some(m) = margins.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::Argument(format!("margin {m} is not a positive number of seconds")));
    }
    Ok(())
}

/// Percentage of frames whose score position lies within each margin of
/// the truth, in margin order.
pub fn alignment_accuracy(
    pred: &AlignmentPath,
    gt: &AlignmentPath,
    frame_seconds: f64,
    margins: &[f64],
) -> Result<Vec<f64>> {
    check_margins(margins)?;
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::dim(
            "alignment_accuracy",
            format!("prediction has {} frames, truth {}", pred.len(), gt.len()),
        ));
    }
    let errors: Vec<f64> = pred
        .y_indices
        .iter()
        .zip(&gt.y_indices)
        .map(|(a, b)| (a - b).abs() * frame_seconds)
        .collect();
    Ok(margins
        .iter()
        .map(|&m| 100.0 * errors.iter().filter(|&&e| e <= m).count() as f64 / errors.len() as f64)
        .collect())
}

/// Mean accuracies over a group of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pairs: usize,
    /// Network accuracy (%) per margin.
    pub model: Vec<f64>,
    /// Classic DTW accuracy (%) per margin.
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPaths {
    pub truth: Vec<f64>,
    pub model: Vec<f64>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub structural: bool,
    pub plan: String,
    pub p: usize,
    pub q: usize,
    pub model: Vec<f64>,
    pub baseline: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<PairPaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub margins: Vec<f64>,
    pub overall: Summary,
    /// Absent when the evaluated pairs contain no structural deviation.
    pub structural: Option<Summary>,
    pub non_structural: Option<Summary>,
    pub records: Vec<PairRecord>,
    pub model_config: ModelConfig,
    pub config_fingerprint: String,
}

fn summarize<'a>(records: impl Iterator<Item = &'a PairRecord>, n_margins: usize) -> Option<Summary> {
    let mut model = vec![0.0; n_margins];
    let mut baseline = vec![0.0; n_margins];
    let mut count = 0;
    for r in records {
        for k in 0..n_margins {
            model[k] += r.model[k];
            baseline[k] += r.baseline[k];
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    for v in model.iter_mut().chain(baseline.iter_mut()) {
        *v /= count as f64;
    }
    Some(Summary {
        pairs: count,
        model,
        baseline,
    })
}

/// Network and classic DTW accuracy on every pair, averaged per pair.
pub fn evaluate(pairs: &[&PerformancePair], model: &CaModel, margins: &[f64], keep_paths: bool) -> Result<EvalReport> {
    check_margins(margins)?;
    if pairs.is_empty() {
        return Err(Error::Argument("no pairs to evaluate".to_string()));
    }
    let mut records = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let pred = model.predict_alignment(pair)?;
        let base = dtw_classic(&pair.similarity)?.path;
        let fs = pair.frame_seconds;
        records.push(PairRecord {
            id: pair.id.clone(),
            structural: pair.structural,
            plan: pair.plan.clone(),
            p: pair.p(),
            q: pair.q(),
            model: alignment_accuracy(&pred, &pair.gt_path, fs, margins)?,
            baseline: alignment_accuracy(&base, &pair.gt_path, fs, margins)?,
            paths: keep_paths.then(|| PairPaths {
                truth: pair.gt_path.y_indices.clone(),
                model: pred.y_indices,
                baseline: base.y_indices,
            }),
        });
    }
    let k = margins.len();
    Ok(EvalReport {
        margins: margins.to_vec(),
        overall: summarize(records.iter(), k).expect("non-empty"),
        structural: summarize(records.iter().filter(|r| r.structural), k),
        non_structural: summarize(records.iter().filter(|r| !r.structural), k),
        records,
        model_config: model.config().clone(),
        config_fingerprint: model.config().fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};

    #[test]
    fn hand_example() {
        let gt = AlignmentPath::new(vec![0.0, 1.0, 2.0, 3.0]);
        let pred = AlignmentPath::new(vec![0.04, 1.2, 2.0, 3.3]);
        assert_eq!(alignment_accuracy(&pred, &gt, 1.0, &DEFAULT_MARGINS).unwrap(), vec![50.0, 50.0, 75.0]);
        assert_eq!(alignment_accuracy(&gt, &gt, 1.0, &DEFAULT_MARGINS).unwrap(), vec![100.0; 3]);
    }

    #[test]
    fn bad_inputs() {
        let a = AlignmentPath::new(vec![0.0, 1.0]);
        let b = AlignmentPath::new(vec![0.0]);
        assert!(matches!(alignment_accuracy(&a, &b, 1.0, &[0.1]), Err(Error::Dimension { .. })));
        assert!(alignment_accuracy(&a, &a, 1.0, &[]).is_err());
        assert!(alignment_accuracy(&a, &a, 1.0, &[0.1, -0.2]).is_err());
    }

    #[test]
    fn report_sections() {
        let corpus = generate_corpus(&CorpusConfig {
            pieces: 6,
            structural_frac: 0.0,
            ..CorpusConfig::default()
        })
        .unwrap();
        let model = CaModel::new(ModelConfig::default()).unwrap();
        let pairs: Vec<_> = corpus.pairs.iter().collect();
        let r = evaluate(&pairs, &model, &DEFAULT_MARGINS, false).unwrap();
        assert!(r.structural.is_none());
        assert_eq!(r.non_structural.as_ref().unwrap().pairs, 6);
        assert_eq!(r.overall.baseline.len(), 3);
        assert!(r.records.iter().all(|x| x.paths.is_none()));
        assert_eq!(r, evaluate(&pairs, &model, &DEFAULT_MARGINS, false).unwrap());
        assert!(evaluate(&[], &model, &DEFAULT_MARGINS, false).is_err());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["structural"].is_null());
    }

    proptest! {
        #[test]
        fn monotone_in_margin_and_permutation_invariant(
            pairs in proptest::collection::vec((0.0f64..30.0, 0.0f64..30.0), 1..40),
            rot in 0usize..40,
        ) {
            let pred = AlignmentPath::new(pairs.iter().map(|x| x.0).collect());
            let gt = AlignmentPath::new(pairs.iter().map(|x| x.1).collect());
            let margins = [0.01, 0.05, 0.1, 0.2, 0.5];
            let acc = alignment_accuracy(&pred, &gt, 0.023, &margins).unwrap();
            prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(acc.iter().all(|&a| (0.0..=100.0).contains(&a)));
            let k = rot % pairs.len();
            let mut p2 = pred.y_indices.clone();
            let mut g2 = gt.y_indices.clone();
            p2.rotate_left(k);
            g2.rotate_left(k);
            let acc2 = alignment_accuracy(&AlignmentPath::new(p2), &AlignmentPath::new(g2), 0.023, &margins).unwrap();
            prop_assert_eq!(acc, acc2);
        }
    }
}
