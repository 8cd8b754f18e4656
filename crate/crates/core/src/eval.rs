//! Failed-interruption metrics: one-vs-rest AUC, TPR at a target FPR and
//! the thresholded confusion matrix.
//!
//! A sample is *emitted* as class `c` only when `argmax(probs) == c` and
//! `probs[c] >= τ`. Samples whose argmax is the positive class but fall
//! under τ land in a separate below-threshold column.

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub clip_id: String,
    pub true_label: Class,
    pub probs: [f64; 4],
}

impl ScoredSample {
    pub fn new(clip_id: impl Into<String>, true_label: Class, probs: [f64; 4]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("probabilities {probs:?} do not form a distribution")));
        }
        Ok(ScoredSample { clip_id: clip_id.into(), true_label, probs })
    }

    /// First index of the maximum probability.
    pub fn argmax(&self) -> Class {
        let mut best = 0;
        for i in 1..4 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Class::from_index(best).expect("4 classes")
    }

    fn emits(&self, class: Class, tau: f64) -> bool {
        self.argmax() == class && self.probs[class.index()] >= tau
    }
}

fn split_counts(samples: &[ScoredSample], positive: Class) -> Result<(usize, usize)> {
    let pos = samples.iter().filter(|s| s.true_label == positive).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(format!(
            "AUC for {positive} needs positives and negatives (got {pos} and {neg})"
        )));
    }
    Ok((pos, neg))
}

/// Area under the one-vs-rest ROC curve via the rank-sum statistic; tied
/// scores contribute one half.
pub fn roc_auc(samples: &[ScoredSample], positive: Class) -> Result<f64> {
    let (n_pos, n_neg) = split_counts(samples, positive)?;
    let mut scored: Vec<(f64, bool)> =
        samples.iter().map(|s| (s.probs[positive.index()], s.true_label == positive)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    // doubled rank sum of positives, mid-ranks for ties
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u64; // ranks i+1..=j
        let positives = scored[i..j].iter().filter(|s| s.1).count() as u64;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let n_pos_u = n_pos as u64;
    let twice_u = twice_rank_sum - n_pos_u * (n_pos_u + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// One point of the one-vs-rest ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve over the distinct positive-class scores, highest threshold first.
pub fn roc_curve(samples: &[ScoredSample], positive: Class) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = split_counts(samples, positive)?;
    let mut scored: Vec<(f64, bool)> =
        samples.iter().map(|s| (s.probs[positive.index()], s.true_label == positive)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: t });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tpr: f64,
    pub fpr: f64,
    pub threshold: f64,
}

/// Smallest threshold whose emitted false-positive rate is at most `target_fpr`.
pub fn tpr_at_fpr(samples: &[ScoredSample], positive: Class, target_fpr: f64) -> Result<OperatingPoint> {
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::InvalidInput(format!("target FPR {target_fpr} outside [0, 1]")));
    }
    let n_pos = samples.iter().filter(|s| s.true_label == positive).count();
    let n_neg = samples.len() - n_pos;
    if n_neg == 0 {
        return Err(Error::InvalidInput("no negatives; FPR undefined".into()));
    }
    if target_fpr > 0.0 && (n_neg as f64) < (1.0 / target_fpr).ceil() {
        log::warn!("only {n_neg} negatives; FPR resolution is coarser than the {target_fpr} target");
    }
    let idx = positive.index();
    // largest k with k / n_neg <= target
    let mut allowed = (target_fpr * n_neg as f64).floor() as usize;
    while allowed > 0 && allowed as f64 / n_neg as f64 > target_fpr {
        allowed -= 1;
    }
    while (allowed + 1) as f64 / n_neg as f64 <= target_fpr && allowed < n_neg {
        allowed += 1;
    }

    let mut neg_scores: Vec<f64> = samples
        .iter()
        .filter(|s| s.true_label != positive && s.argmax() == positive)
        .map(|s| s.probs[idx])
        .collect();
    neg_scores.sort_by(|a, b| b.total_cmp(a));

    let threshold = if neg_scores.len() <= allowed {
        0.0
    } else {
        // τ must exceed the (allowed+1)-th highest negative score
        let bar = neg_scores[allowed];
        samples
            .iter()
            .filter(|s| s.argmax() == positive && s.probs[idx] > bar)
            .map(|s| s.probs[idx])
            .min_by(f64::total_cmp)
            .unwrap_or_else(|| next_up(bar))
    };
    let tp = samples.iter().filter(|s| s.true_label == positive && s.emits(positive, threshold)).count();
    let fp = samples.iter().filter(|s| s.true_label != positive && s.emits(positive, threshold)).count();
    Ok(OperatingPoint {
        tpr: if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 },
        fpr: fp as f64 / n_neg as f64,
        threshold,
    })
}

fn next_up(x: f64) -> f64 {
    x.next_up()
}

/// Rows = ground truth; columns = emitted class, then below-threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedConfusion {
    pub counts: [[usize; 5]; 4],
    pub threshold: f64,
    pub positive: Class,
}

impl ThresholdedConfusion {
    pub const BELOW: usize = 4;

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: Class) -> usize {
        self.counts[class.index()].iter().sum()
    }

    /// Emitted false positives of the positive class over all negatives.
    pub fn positive_fpr(&self) -> f64 {
        let p = self.positive.index();
        let neg: usize = Class::ALL.iter().filter(|&&c| c != self.positive).map(|&c| self.row_sum(c)).sum();
        let fp: usize = (0..4).filter(|&r| r != p).map(|r| self.counts[r][p]).sum();
        fp as f64 / neg as f64
    }
}

/// Confusion with the below-threshold column for `positive` (normally the
/// failed-interruption class).
pub fn thresholded_confusion(samples: &[ScoredSample], positive: Class, threshold: f64) -> ThresholdedConfusion {
    let mut counts = [[0usize; 5]; 4];
    for s in samples {
        let pred = s.argmax();
        let col = if pred == positive && s.probs[positive.index()] < threshold {
            ThresholdedConfusion::BELOW
        } else {
            pred.index()
        };
        counts[s.true_label.index()][col] += 1;
    }
    ThresholdedConfusion { counts, threshold, positive }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: Class,
    /// 0 when nothing was emitted as this class.
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// Precision and recall per class; below-threshold samples are never
/// counted as emitted positives.
pub fn per_class_report(confusion: &ThresholdedConfusion) -> Vec<ClassReport> {
    Class::ALL
        .iter()
        .map(|&c| {
            let i = c.index();
            let tp = confusion.counts[i][i];
            let predicted: usize = (0..4).map(|r| confusion.counts[r][i]).sum();
            let support = confusion.row_sum(c);
            ClassReport {
                class: c,
                precision: if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 },
                recall: if support == 0 { 0.0 } else { tp as f64 / support as f64 },
                support,
            }
        })
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const POS: Class = Class::FailedInterruption;

    /// Binary sample: the positive class gets `score`, the rest share the remainder.
    fn bin(score: f64, positive: bool) -> ScoredSample {
        let rest = (1.0 - score) / 3.0;
        let label = if positive { POS } else { Class::Backchannel };
        ScoredSample::new("s", label, [rest, score, rest, rest]).unwrap()
    }

    #[test]
    fn auc_hand_cases() {
        let perfect: Vec<_> = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)].iter().map(|&(s, p)| bin(s, p)).collect();
        assert_eq!(roc_auc(&perfect, POS).unwrap(), 1.0);
        let ties: Vec<_> = [(0.5, true), (0.5, false), (0.5, false)].iter().map(|&(s, p)| bin(s, p)).collect();
        assert_eq!(roc_auc(&ties, POS).unwrap(), 0.5);
        let hand: Vec<_> = [(0.9, true), (0.7, true), (0.4, true), (0.8, false), (0.3, false), (0.2, false)]
            .iter()
            .map(|&(s, p)| bin(s, p))
            .collect();
        assert!((roc_auc(&hand, POS).unwrap() - 7.0 / 9.0).abs() < 1e-15);
        assert!(roc_auc(&perfect[..2], POS).is_err());
    }

    #[test]
    fn operating_point_extremes() {
        let sep: Vec<_> = (0..200).map(|i| bin(if i < 50 { 0.9 } else { 0.3 }, i < 50)).collect();
        let op = tpr_at_fpr(&sep, POS, 0.01).unwrap();
        assert_eq!((op.tpr, op.fpr), (1.0, 0.0));

        // positives are the argmax but always below every negative
        let inv: Vec<_> = (0..200).map(|i| bin(if i < 50 { 0.4 } else { 0.9 }, i < 50)).collect();
        let op = tpr_at_fpr(&inv, POS, 0.01).unwrap();
        assert_eq!(op.tpr, 0.0);
        assert!(op.fpr <= 0.01);

        let pos_only: Vec<_> = (0..3).map(|_| bin(0.9, true)).collect();
        assert!(tpr_at_fpr(&pos_only, POS, 0.01).is_err());
    }

    #[test]
    fn below_threshold_boundary() {
        let tau = 0.6;
        let s = bin(tau - 1e-9, true);
        let c = thresholded_confusion(&[s], POS, tau);
        assert_eq!(c.counts[1][ThresholdedConfusion::BELOW], 1);
        let at = thresholded_confusion(&[bin(tau, true)], POS, tau);
        assert_eq!(at.counts[1][1], 1);

        let bc = ScoredSample::new("b", Class::Laughter, [0.7, 0.1, 0.1, 0.1]).unwrap();
        let c = thresholded_confusion(&[bc], POS, 0.99);
        assert_eq!(c.counts[3][0], 1);
    }

    #[test]
    fn identity_confusion_report() {
        let samples: Vec<_> = Class::ALL
            .iter()
            .map(|&c| {
                let mut p = [0.0; 4];
                p[c.index()] = 1.0;
                ScoredSample::new("x", c, p).unwrap()
            })
            .collect();
        let conf = thresholded_confusion(&samples, POS, 0.5);
        for r in per_class_report(&conf) {
            assert_eq!((r.precision, r.recall), (1.0, 1.0));
        }
    }

    #[test]
    fn roc_curve_ends_at_one() {
        let s: Vec<_> = [(0.9, true), (0.4, false), (0.4, true)].iter().map(|&(s, p)| bin(s, p)).collect();
        let c = roc_curve(&s, POS).unwrap();
        assert_eq!(c.last().unwrap().fpr, 1.0);
        assert_eq!(c.last().unwrap().tpr, 1.0);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
