//! Crowd-label aggregation and inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};

/// Default fraction of votes the modal label needs.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Annotation categories, including `other` which the classifier never sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Backchannel,
    FailedInterruption,
    Interruption,
    Laughter,
    Other,
}

impl Label {
    pub const ALL: [Label; 5] =
        [Label::Backchannel, Label::FailedInterruption, Label::Interruption, Label::Laughter, Label::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Backchannel => "backchannel",
            Label::FailedInterruption => "failed_interruption",
            Label::Interruption => "interruption",
            Label::Laughter => "laughter",
            Label::Other => "other",
        }
    }

    /// The classifier class, if this label is one of the four trained on.
    pub fn class(self) -> Option<Class> {
        match self {
            Label::Backchannel => Some(Class::Backchannel),
            Label::FailedInterruption => Some(Class::FailedInterruption),
            Label::Interruption => Some(Class::Interruption),
            Label::Laughter => Some(Class::Laughter),
            Label::Other => None,
        }
    }

    /// Rank among no-interruption categories; lower wins.
    fn precedence(self) -> Option<u8> {
        match self {
            Label::FailedInterruption => Some(0),
            Label::Backchannel => Some(1),
            Label::Laughter => Some(2),
            Label::Other => Some(3),
            Label::Interruption => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown label {s:?}")))
    }
}

impl From<Class> for Label {
    fn from(c: Class) -> Self {
        match c {
            Class::Backchannel => Label::Backchannel,
            Class::FailedInterruption => Label::FailedInterruption,
            Class::Interruption => Label::Interruption,
            Class::Laughter => Label::Laughter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub clip_id: String,
    pub annotator_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub clip_id: String,
    /// `None` when the clip was rejected.
    pub label: Option<Label>,
    pub agreement_fraction: f64,
    pub vote_count: usize,
}

impl ConsensusResult {
    pub fn accepted(&self) -> bool {
        self.label.is_some()
    }
}

/// Consensus over the votes for a single clip.
///
/// The modal label is accepted iff its share reaches `threshold`. A tie for
/// the modal count is rejected regardless of threshold.
pub fn aggregate(votes: &[VoteRecord], threshold: f64) -> Result<ConsensusResult> {
    let first = votes.first().ok_or_else(|| Error::InvalidInput("no votes".into()))?;
    let mut annotators = BTreeSet::new();
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for v in votes {
        if v.clip_id != first.clip_id {
            return Err(Error::InvalidInput(format!(
                "votes for clips {} and {} mixed in one aggregate",
                first.clip_id, v.clip_id
            )));
        }
        if !annotators.insert(v.annotator_id.as_str()) {
            return Err(Error::DuplicateVote { clip: v.clip_id.clone(), annotator: v.annotator_id.clone() });
        }
        *counts.entry(v.label).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let modal: Vec<Label> = counts.iter().filter(|(_, &c)| c == top).map(|(&l, _)| l).collect();
    let agreement = top as f64 / votes.len() as f64;
    let label = (modal.len() == 1 && agreement >= threshold).then(|| modal[0]);
    Ok(ConsensusResult {
        clip_id: first.clip_id.clone(),
        label,
        agreement_fraction: agreement,
        vote_count: votes.len(),
    })
}

/// Groups votes by clip and aggregates each group, in clip-id order.
pub fn aggregate_all(votes: &[VoteRecord], threshold: f64) -> Result<Vec<ConsensusResult>> {
    let mut by_clip: BTreeMap<&str, Vec<VoteRecord>> = BTreeMap::new();
    for v in votes {
        by_clip.entry(v.clip_id.as_str()).or_default().push(v.clone());
    }
    by_clip.values().map(|v| aggregate(v, threshold)).collect()
}

/// Picks one label for a clip showing several no-interruption categories:
/// failed interruption > backchannel > laughter > other.
pub fn precedence_resolve(categories: &[Label]) -> Result<Label> {
    if categories.is_empty() {
        return Err(Error::InvalidInput("no categories to resolve".into()));
    }
    if categories.contains(&Label::Interruption) {
        return Err(Error::InvalidInput(
            "successful interruption is decided before precedence resolution".into(),
        ));
    }
    Ok(*categories.iter().min_by_key(|l| l.precedence()).expect("non-empty"))
}

/// Builds a clips x categories count table from votes, dropping clips with
/// a vote count other than `raters`.
pub fn rating_table(votes: &[VoteRecord], raters: usize) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut by_clip: BTreeMap<&str, [usize; 5]> = BTreeMap::new();
    for v in votes {
        by_clip.entry(v.clip_id.as_str()).or_default()[v.label as usize] += 1;
    }
    by_clip
        .into_iter()
        .filter(|(_, row)| row.iter().sum::<usize>() == raters)
        .map(|(id, row)| (id.to_string(), row.to_vec()))
        .unzip()
}

/// Fleiss' kappa for a clips x categories table where every row sums to `raters`.
pub fn fleiss_kappa(table: &[Vec<usize>], raters: usize) -> Result<f64> {
    if table.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 clips, got {}", table.len())));
    }
    if raters < 2 {
        return Err(Error::InvalidInput("need at least 2 raters per clip".into()));
    }
    let k = table[0].len();
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Shape(format!("row {i} has {} categories, expected {k}", row.len())));
        }
        let s: usize = row.iter().sum();
        if s != raters {
            return Err(Error::InvalidInput(format!("clip {i} has {s} ratings, expected {raters}")));
        }
    }
    let n = raters as f64;
    let total = table.len() as f64 * n;
    let p_bar = table
        .iter()
        .map(|row| row.iter().map(|&c| (c * c) as f64).sum::<f64>() - n)
        .sum::<f64>()
        / (table.len() as f64 * n * (n - 1.0));
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = table.iter().map(|r| r[j]).sum::<usize>() as f64 / total;
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::KappaUndefined);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-annotator `(correct, total)` against golden clip labels.
pub fn golden_accuracy(
    votes: &[VoteRecord],
    golden: &BTreeMap<String, Label>,
) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for v in votes {
        if let Some(&truth) = golden.get(&v.clip_id) {
            let e = out.entry(v.annotator_id.clone()).or_default();
            e.1 += 1;
            if v.label == truth {
                e.0 += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(labels: &[Label]) -> Vec<VoteRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| VoteRecord { clip_id: "c".into(), annotator_id: format!("a{i}"), label })
            .collect()
    }

    use Label::*;

    #[test]
    fn five_of_seven_accepted() {
        let r = aggregate(&votes(&[Backchannel, Backchannel, Laughter, Backchannel, Other, Backchannel, Backchannel]), 0.7).unwrap();
        assert_eq!(r.label, Some(Backchannel));
        assert!((r.agreement_fraction - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.vote_count, 7);
    }

    #[test]
    fn unanimity_and_split() {
        let r = aggregate(&votes(&[Laughter; 7]), 0.7).unwrap();
        assert_eq!((r.label, r.agreement_fraction), (Some(Laughter), 1.0));
        let r = aggregate(&votes(&[Other, Other, Other, Other, Laughter, Laughter, Laughter]), 0.7).unwrap();
        assert_eq!(r.label, None);
    }

    #[test]
    fn tie_is_rejected_even_with_low_threshold() {
        let r = aggregate(&votes(&[Other, Other, Laughter, Laughter]), 0.3).unwrap();
        assert_eq!(r.label, None);
    }

    #[test]
    fn duplicate_annotator_is_an_error() {
        let mut v = votes(&[Other, Other]);
        v[1].annotator_id = "a0".into();
        assert!(matches!(aggregate(&v, 0.7), Err(Error::DuplicateVote { .. })));
        assert!(aggregate(&[], 0.7).is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(precedence_resolve(&[Backchannel, FailedInterruption]).unwrap(), FailedInterruption);
        assert_eq!(precedence_resolve(&[Laughter]).unwrap(), Laughter);
        assert_eq!(precedence_resolve(&[Other, Laughter, Backchannel]).unwrap(), Backchannel);
        assert!(precedence_resolve(&[]).is_err());
    }

    #[test]
    fn kappa_hand_cases() {
        assert_eq!(fleiss_kappa(&[vec![2, 0], vec![0, 2]], 2).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec![5, 0, 0], vec![0, 0, 5], vec![0, 5, 0]], 5).unwrap(), 1.0);
        assert!(matches!(fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3), Err(Error::KappaUndefined)));
        assert!(fleiss_kappa(&[vec![3, 0]], 3).is_err());
        assert!(fleiss_kappa(&[vec![3, 0], vec![2, 0]], 3).is_err());
    }

    #[test]
    fn golden_accuracy_counts() {
        let v = votes(&[Other, Laughter]);
        let golden = BTreeMap::from([("c".to_string(), Laughter)]);
        let acc = golden_accuracy(&v, &golden);
        assert_eq!(acc["a0"], (0, 1));
        assert_eq!(acc["a1"], (1, 1));
    }
}
