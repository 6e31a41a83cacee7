//! Seizure / non-seizure scoring of per-window features.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for comparing window edges against annotation times (seconds).
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub onset_s: f64,
    pub offset_s: f64,
}

impl SeizureAnnotation {
    pub fn new(onset_s: f64, offset_s: f64) -> Result<Self> {
        if !(onset_s >= 0.0 && onset_s < offset_s && offset_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "annotation needs 0 <= onset < offset, got [{onset_s}, {offset_s}]"
            )));
        }
        Ok(Self { onset_s, offset_s })
    }
}

/// A span excluded from the non-seizure class (e.g. movement artifacts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub start_s: f64,
    pub end_s: f64,
}

/// Validates annotations against the recording and each other.
pub fn validate_annotations(ann: &[SeizureAnnotation], recording_len_s: f64) -> Result<()> {
    for a in ann {
        SeizureAnnotation::new(a.onset_s, a.offset_s)?;
        if a.offset_s > recording_len_s + EDGE_EPS {
            return Err(Error::InvalidInput(format!(
                "annotation [{}, {}] ends after the recording ({recording_len_s} s)",
                a.onset_s, a.offset_s
            )));
        }
    }
    let mut sorted = ann.to_vec();
    sorted.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    if let Some(w) = sorted.windows(2).find(|w| w[1].onset_s < w[0].offset_s) {
        return Err(Error::InvalidInput(format!(
            "annotations [{}, {}] and [{}, {}] overlap",
            w[0].onset_s, w[0].offset_s, w[1].onset_s, w[1].offset_s
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowLabel {
    Seizure,
    NonSeizure,
    Discarded,
}

/// Labels each window `[start, start + window_s)`.
///
/// Seizure windows lie fully inside an annotation; non-seizure windows lie
/// fully before the first onset and outside every exclusion. Everything else
/// is discarded.
pub fn window_labels(
    window_starts: &[f64],
    window_s: f64,
    ann: &[SeizureAnnotation],
    exclusions: &[Exclusion],
) -> Vec<WindowLabel> {
    let first_onset = ann.iter().map(|a| a.onset_s).fold(f64::INFINITY, f64::min);
    window_starts
        .iter()
        .map(|&start| {
            let end = start + window_s;
            let inside = ann
                .iter()
                .any(|a| start >= a.onset_s - EDGE_EPS && end <= a.offset_s + EDGE_EPS);
            let excluded = exclusions
                .iter()
                .any(|e| start < e.end_s - EDGE_EPS && end > e.start_s + EDGE_EPS);
            if inside {
                WindowLabel::Seizure
            } else if end <= first_onset + EDGE_EPS && !excluded {
                WindowLabel::NonSeizure
            } else {
                WindowLabel::Discarded
            }
        })
        .collect()
}

/// Window indices used for scoring, after balancing the two classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledWindows {
    pub seizure: Vec<usize>,
    pub nonseizure: Vec<usize>,
}

impl LabeledWindows {
    pub fn scores(&self, values: &[Option<f64>]) -> LabeledScores {
        let pick = |idx: &[usize]| idx.iter().filter_map(|&i| values[i]).collect();
        LabeledScores {
            seizure: pick(&self.seizure),
            nonseizure: pick(&self.nonseizure),
        }
    }
}

/// Picks labeled windows that have a score and subsamples the larger class
/// (seeded, without replacement) down to the size of the smaller one.
pub fn balanced_windows(
    labels: &[WindowLabel],
    valid: &[bool],
    recording_len_s: f64,
    ann: &[SeizureAnnotation],
    seed: u64,
) -> Result<LabeledWindows> {
    validate_annotations(ann, recording_len_s)?;
    let collect = |want: WindowLabel| -> Vec<usize> {
        labels
            .iter()
            .zip(valid)
            .enumerate()
            .filter(|(_, (l, ok))| **l == want && **ok)
            .map(|(i, _)| i)
            .collect()
    };
    let mut seizure = collect(WindowLabel::Seizure);
    let mut nonseizure = collect(WindowLabel::NonSeizure);
    if seizure.is_empty() {
        return Err(Error::LabelingFailed(
            "no window lies fully inside a seizure".into(),
        ));
    }
    if nonseizure.is_empty() {
        return Err(Error::LabelingFailed(
            "no window lies fully before the first onset".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsample = |v: &mut Vec<usize>, k: usize, rng: &mut ChaCha8Rng| {
        let mut picked: Vec<usize> = index::sample(rng, v.len(), k)
            .into_iter()
            .map(|i| v[i])
            .collect();
        picked.sort_unstable();
        *v = picked;
    };
    if nonseizure.len() > seizure.len() {
        let k = seizure.len();
        subsample(&mut nonseizure, k, &mut rng);
    } else if seizure.len() > nonseizure.len() {
        let k = nonseizure.len();
        subsample(&mut seizure, k, &mut rng);
    }
    Ok(LabeledWindows {
        seizure,
        nonseizure,
    })
}

/// Labels one score series and returns balanced class scores. `None` scores are gaps.
pub fn label_windows(
    window_starts: &[f64],
    window_s: f64,
    scores: &[Option<f64>],
    ann: &[SeizureAnnotation],
    exclusions: &[Exclusion],
    recording_len_s: f64,
    seed: u64,
) -> Result<LabeledScores> {
    let labels = window_labels(window_starts, window_s, ann, exclusions);
    let valid: Vec<bool> = scores
        .iter()
        .map(|s| s.is_some_and(f64::is_finite))
        .collect();
    Ok(balanced_windows(&labels, &valid, recording_len_s, ann, seed)?.scores(scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub seizure: Vec<f64>,
    pub nonseizure: Vec<f64>,
}

impl LabeledScores {
    pub fn new(seizure: Vec<f64>, nonseizure: Vec<f64>) -> Self {
        Self {
            seizure,
            nonseizure,
        }
    }

    /// Class labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            seizure: self.nonseizure.clone(),
            nonseizure: self.seizure.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.seizure.is_empty() || self.nonseizure.is_empty() {
            return Err(Error::InvalidInput(format!(
                "both classes need scores (seizure {}, non-seizure {})",
                self.seizure.len(),
                self.nonseizure.len()
            )));
        }
        if self
            .seizure
            .iter()
            .chain(&self.nonseizure)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        Ok(())
    }
}

/// Mann-Whitney AUC with mid-ranks for ties.
pub fn rank_auc(s: &LabeledScores) -> Result<f64> {
    s.check()?;
    let mut all: Vec<(f64, bool)> = s
        .seizure
        .iter()
        .map(|&v| (v, true))
        .chain(s.nonseizure.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j, mid-rank (i + 1 + j) / 2
        let twice_mid = (i + 1 + j) as u64;
        let positives = all[i..j].iter().filter(|e| e.1).count() as u64;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let n_s = s.seizure.len() as u64;
    let n_n = s.nonseizure.len() as u64;
    let twice_u = twice_rank_sum - n_s * (n_s + 1);
    Ok(twice_u as f64 / (2 * n_s * n_n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold of `points[i + 1]`; a score `>= threshold` is called seizure.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        trapezoid(&self.points)
    }
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

/// ROC over every distinct threshold, with the rank-statistic AUC.
pub fn roc_auc(s: &LabeledScores) -> Result<RocCurve> {
    let auc = rank_auc(s)?;
    let mut thresholds: Vec<f64> = s.seizure.iter().chain(&s.nonseizure).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pos = s.seizure.clone();
    let mut neg = s.nonseizure.clone();
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| b.total_cmp(a));
    let (n_p, n_n) = (pos.len() as f64, neg.len() as f64);
    let (mut ip, mut ineg) = (0usize, 0usize);
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push((0.0, 0.0));
    for &t in &thresholds {
        while ip < pos.len() && pos[ip] >= t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] >= t {
            ineg += 1;
        }
        points.push((ineg as f64 / n_n, ip as f64 / n_p));
    }
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

/// Row-normalized 2x2 confusion matrix.
///
/// Rows are actual labels and columns predicted labels, both ordered
/// `[seizure, non-seizure]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[f64; 2]; 2]);

impl ConfusionMatrix {
    /// Calls a score `>= threshold` seizure.
    pub fn at_threshold(s: &LabeledScores, threshold: f64) -> Self {
        let rate =
            |v: &[f64]| v.iter().filter(|&&x| x >= threshold).count() as f64 / v.len() as f64;
        let tpr = rate(&s.seizure);
        let fpr = rate(&s.nonseizure);
        Self([[tpr, 1.0 - tpr], [fpr, 1.0 - fpr]])
    }

    pub fn tpr(&self) -> f64 {
        self.0[0][0]
    }

    pub fn fpr(&self) -> f64 {
        self.0[1][0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
}

/// Threshold maximizing Youden's J = tpr - fpr (highest threshold on ties).
pub fn operating_point(s: &LabeledScores) -> Result<OperatingPoint> {
    let roc = roc_auc(s)?;
    let (best, _) = roc.points.iter().skip(1).enumerate().fold(
        (0usize, f64::NEG_INFINITY),
        |(bi, bj), (i, &(fpr, tpr))| {
            let j = tpr - fpr;
            if j > bj {
                (i, j)
            } else {
                (bi, bj)
            }
        },
    );
    let threshold = roc.thresholds[best];
    Ok(OperatingPoint {
        threshold,
        confusion: ConfusionMatrix::at_threshold(s, threshold),
    })
}

/// Bias-corrected standardized mean difference, seizure minus non-seizure.
pub fn hedges_g(s: &LabeledScores) -> Result<f64> {
    let (a, b) = (&s.seizure, &s.nonseizure);
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedEffectSize(format!(
            "each class needs at least 2 scores (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let (ma, mb) = (mean(a), mean(b));
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled_var = (ss(a, ma) + ss(b, mb)) / (n1 + n2 - 2.0);
    if !(pooled_var > 0.0) {
        return Err(Error::UndefinedEffectSize("pooled variance is zero".into()));
    }
    let correction = 1.0 - 3.0 / (4.0 * (n1 + n2) - 9.0);
    Ok(correction * (ma - mb) / pooled_var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub roc_points: Vec<(f64, f64)>,
    pub auc: f64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    /// `None` when the pooled variance is zero.
    pub hedges_g: Option<f64>,
    pub n_seizure: usize,
    pub n_nonseizure: usize,
}

pub fn evaluate(s: &LabeledScores) -> Result<EvaluationReport> {
    let roc = roc_auc(s)?;
    let op = operating_point(s)?;
    let g = match hedges_g(s) {
        Ok(g) => Some(g),
        Err(Error::UndefinedEffectSize(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport {
        roc_points: roc.points,
        auc: roc.auc,
        threshold: op.threshold,
        confusion: op.confusion,
        hedges_g: g,
        n_seizure: s.seizure.len(),
        n_nonseizure: s.nonseizure.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn starts(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn patient_a_windowing() {
        let ann = [SeizureAnnotation::new(100.0, 171.0).unwrap()];
        let labels = window_labels(&starts(286), 15.0, &ann, &[]);
        let seizure: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == WindowLabel::Seizure)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(seizure.len(), 57);
        assert_eq!(seizure.first(), Some(&100));
        assert_eq!(seizure.last(), Some(&156));
        // straddling the onset
        assert_eq!(labels[90], WindowLabel::Discarded);
        assert_eq!(labels[85], WindowLabel::NonSeizure);
        assert_eq!(labels[86], WindowLabel::Discarded);
    }

    #[test]
    fn exclusions_remove_nonseizure_windows() {
        let ann = [SeizureAnnotation::new(100.0, 171.0).unwrap()];
        let ex = [Exclusion {
            start_s: 20.0,
            end_s: 30.0,
        }];
        let labels = window_labels(&starts(286), 15.0, &ann, &ex);
        assert_eq!(labels[5], WindowLabel::NonSeizure);
        assert_eq!(labels[6], WindowLabel::Discarded);
        assert_eq!(labels[29], WindowLabel::Discarded);
        assert_eq!(labels[30], WindowLabel::NonSeizure);
    }

    #[test]
    fn subsampling_is_seeded() {
        let ann = [SeizureAnnotation::new(100.0, 171.0).unwrap()];
        let scores: Vec<Option<f64>> = (0..286).map(|i| Some(i as f64)).collect();
        let run =
            |seed| label_windows(&starts(286), 15.0, &scores, &ann, &[], 300.0, seed).unwrap();
        let a = run(3);
        assert_eq!(a, run(3));
        assert_eq!(a.seizure.len(), 57);
        assert_eq!(a.nonseizure.len(), 57);
        assert_ne!(a, run(4));
    }

    #[test]
    fn labeling_failures() {
        let ann = [SeizureAnnotation::new(100.0, 110.0).unwrap()];
        let scores: Vec<Option<f64>> = vec![Some(1.0); 286];
        assert!(matches!(
            label_windows(&starts(286), 15.0, &scores, &ann, &[], 300.0, 0),
            Err(Error::LabelingFailed(_))
        ));
        let overlapping = [
            SeizureAnnotation::new(100.0, 150.0).unwrap(),
            SeizureAnnotation::new(140.0, 200.0).unwrap(),
        ];
        assert!(validate_annotations(&overlapping, 300.0).is_err());
        assert!(SeizureAnnotation::new(5.0, 5.0).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = LabeledScores::new(vec![2.0, 3.0], vec![0.0, 1.0]);
        assert_eq!(rank_auc(&s).unwrap(), 1.0);
        let same = LabeledScores::new(vec![1.0, 2.0, 2.0], vec![1.0, 2.0, 2.0]);
        assert_eq!(rank_auc(&same).unwrap(), 0.5);
        let roc = roc_auc(&same).unwrap();
        assert!((roc.trapezoid_area() - 0.5).abs() < 1e-12);
        assert!(rank_auc(&LabeledScores::new(vec![], vec![1.0])).is_err());
    }

    #[test]
    fn perfect_separation_confusion() {
        let s = LabeledScores::new(vec![2.0, 3.0, 4.0], vec![0.0, 1.0]);
        let op = operating_point(&s).unwrap();
        assert_eq!(op.confusion, ConfusionMatrix([[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(op.threshold, 2.0);
        // Same threshold with the class labels exchanged: rows swap, identity becomes anti-diagonal.
        let swapped = ConfusionMatrix::at_threshold(&s.swapped(), op.threshold);
        assert_eq!(swapped, ConfusionMatrix([[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn hedges_examples() {
        let s = LabeledScores::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        assert_eq!(hedges_g(&s).unwrap(), 0.0);
        let flat = LabeledScores::new(vec![1.0, 1.0], vec![1.0, 1.0]);
        assert!(matches!(
            hedges_g(&flat),
            Err(Error::UndefinedEffectSize(_))
        ));
        assert!(evaluate(&flat).unwrap().hedges_g.is_none());
        // means 1 and 0, each group {m - 1, m + 1} repeated: pooled sd -> 1 for large n
        let n = 5000;
        let a: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let b: Vec<f64> = a.iter().map(|v| v - 1.0).collect();
        let g = hedges_g(&LabeledScores::new(a, b)).unwrap();
        assert!((g - 1.0).abs() < 1e-3, "{g}");
    }
}
