//! Python bindings for `interrupt_core`.
//!
//! Arrays cross the boundary as nested lists; errors map onto `OSError`,
//! `ArithmeticError` or `ValueError` by error family.

use std::collections::BTreeMap;

use interrupt_core::audio::{AudioChannel, SAMPLE_RATE};
use interrupt_core::causal::{self, MeetingRecord};
use interrupt_core::eval::{self, ScoredSample};
use interrupt_core::features::{self, sie, FeatureMatrix, LayeredEmbedding};
use interrupt_core::labels::{self, Label, VoteRecord};
use interrupt_core::model::{self as core_model, AttentionPooler, InterruptionModel};
use interrupt_core::overlap::{self, CandidateClip, VadParams};
use interrupt_core::{Class, Error, ErrorFamily};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.family() {
        ErrorFamily::Io => PyOSError::new_err(e.to_string()),
        ErrorFamily::Numerical => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    FeatureMatrix::from_rows(&rows).map_err(py_err)
}

fn to_rows(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Attention pooling of a `d x M` matrix with template `w` (length `d`).
#[pyfunction]
fn attention_pool(h: Vec<Vec<f64>>, w: Vec<f64>) -> PyResult<Vec<f64>> {
    core_model::attention_pool(&matrix(h)?, &AttentionPooler { template: w }).map_err(py_err)
}

fn scored(labels: Vec<String>, probs: Vec<[f64; 4]>) -> PyResult<Vec<ScoredSample>> {
    if labels.len() != probs.len() {
        return Err(PyValueError::new_err(format!("{} labels for {} score rows", labels.len(), probs.len())));
    }
    labels
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (l, p))| ScoredSample::new(i.to_string(), parse::<Class>(l)?, p).map_err(py_err))
        .collect()
}

/// One-vs-rest AUC of `positive` from true labels and 4-class probabilities.
#[pyfunction]
#[pyo3(signature = (labels, probs, positive = "failed_interruption"))]
fn roc_auc(labels: Vec<String>, probs: Vec<[f64; 4]>, positive: &str) -> PyResult<f64> {
    eval::roc_auc(&scored(labels, probs)?, parse(positive)?).map_err(py_err)
}

/// `(tpr, fpr, threshold)` at the smallest threshold with FPR within the target.
#[pyfunction]
#[pyo3(signature = (labels, probs, target_fpr = 0.01, positive = "failed_interruption"))]
fn tpr_at_fpr(labels: Vec<String>, probs: Vec<[f64; 4]>, target_fpr: f64, positive: &str) -> PyResult<(f64, f64, f64)> {
    let op = eval::tpr_at_fpr(&scored(labels, probs)?, parse(positive)?, target_fpr).map_err(py_err)?;
    Ok((op.tpr, op.fpr, op.threshold))
}

/// 4 x 5 counts: rows are true classes, the last column holds below-threshold samples.
#[pyfunction]
#[pyo3(signature = (labels, probs, threshold, positive = "failed_interruption"))]
fn thresholded_confusion(labels: Vec<String>, probs: Vec<[f64; 4]>, threshold: f64, positive: &str) -> PyResult<Vec<Vec<usize>>> {
    let table = eval::thresholded_confusion(&scored(labels, probs)?, parse(positive)?, threshold);
    Ok(table.counts.iter().map(|r| r.to_vec()).collect())
}

#[pyfunction]
fn fleiss_kappa(table: Vec<Vec<usize>>, raters: usize) -> PyResult<f64> {
    labels::fleiss_kappa(&table, raters).map_err(py_err)
}

/// Consensus per clip from `(clip_id, annotator_id, label)` triples:
/// `(clip_id, label or None, agreement, vote_count)`.
#[pyfunction]
#[pyo3(signature = (votes, threshold = labels::DEFAULT_THRESHOLD))]
fn aggregate(votes: Vec<(String, String, String)>, threshold: f64) -> PyResult<Vec<(String, Option<String>, f64, usize)>> {
    let votes = votes
        .into_iter()
        .map(|(clip_id, annotator_id, label)| Ok(VoteRecord { clip_id, annotator_id, label: parse::<Label>(&label)? }))
        .collect::<PyResult<Vec<_>>>()?;
    let results = labels::aggregate_all(&votes, threshold).map_err(py_err)?;
    Ok(results
        .into_iter()
        .map(|r| (r.clip_id, r.label.map(|l| l.as_str().to_string()), r.agreement_fraction, r.vote_count))
        .collect())
}

/// Speech segments `(start_s, end_s)` of a 16 kHz mono signal.
#[pyfunction]
#[pyo3(signature = (samples, energy_db = -45.0))]
fn vad(samples: Vec<f32>, energy_db: f64) -> PyResult<Vec<(f64, f64)>> {
    let ch = AudioChannel::new("x", samples, SAMPLE_RATE).map_err(py_err)?;
    let params = VadParams { energy_threshold_db: energy_db, ..VadParams::default() };
    Ok(overlap::vad(&ch, &params).map_err(py_err)?.into_iter().map(|s| (s.start_s, s.end_s)).collect())
}

fn clip(left: Vec<f32>, right: Vec<f32>) -> PyResult<CandidateClip> {
    let l = AudioChannel::new("left", left, SAMPLE_RATE).map_err(py_err)?;
    let r = AudioChannel::new("right", right, SAMPLE_RATE).map_err(py_err)?;
    CandidateClip::from_channels("clip", "meeting", "right", 5.0, l, r).map_err(py_err)
}

/// `80 x 401` MFCC matrix of a 10 s stereo clip (left rows first).
#[pyfunction]
fn mfcc(left: Vec<f32>, right: Vec<f32>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&features::mfcc(&clip(left, right)?).map_err(py_err)?))
}

/// `514 x 313` magnitude spectrogram of a 10 s stereo clip.
#[pyfunction]
fn spectrogram(left: Vec<f32>, right: Vec<f32>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&features::spectrogram(&clip(left, right)?).map_err(py_err)?))
}

/// Layered features from an SIE1 file.
#[pyclass(frozen)]
struct Embedding {
    inner: LayeredEmbedding,
}

#[pymethods]
impl Embedding {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Embedding { inner: sie::read(path).map_err(py_err)? })
    }

    /// `(channels, layers, dim, frames)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let e = &self.inner;
        (e.channels(), e.layers(), e.dim(), e.frames())
    }

    /// One `dim x frames` block.
    fn block(&self, channel: usize, layer: usize) -> PyResult<Vec<Vec<f32>>> {
        let e = &self.inner;
        if channel >= e.channels() || layer >= e.layers() {
            return Err(PyValueError::new_err(format!("no block ({channel}, {layer})")));
        }
        Ok(e.block(channel, layer).chunks(e.frames()).map(<[f32]>::to_vec).collect())
    }
}

/// A trained classifier checkpoint.
#[pyclass(frozen)]
struct Model {
    inner: InterruptionModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model { inner: core_model::load_checkpoint(path).map_err(py_err)? })
    }

    #[getter]
    fn profile(&self) -> String {
        self.inner.profile_name()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Class probabilities keyed by class name.
    fn predict(&self, embedding: &Embedding) -> PyResult<BTreeMap<String, f64>> {
        let p = self.inner.forward(&embedding.inner).map_err(py_err)?;
        Ok(Class::ALL.iter().map(|c| (c.as_str().to_string(), p[c.index()])).collect())
    }
}

/// Propensity-stratified effect estimate from column lists.
///
/// Returns `delta`, `se`, `ci_low`, `ci_high` and `naive_delta`.
#[pyfunction]
#[pyo3(signature = (participants, duration_min, video, screenshare, treated, outcome, bins = 5))]
fn estimate_impact(
    participants: Vec<u32>,
    duration_min: Vec<f64>,
    video: Vec<bool>,
    screenshare: Vec<bool>,
    treated: Vec<bool>,
    outcome: Vec<bool>,
    bins: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let n = participants.len();
    if [duration_min.len(), video.len(), screenshare.len(), treated.len(), outcome.len()].iter().any(|&l| l != n) {
        return Err(PyValueError::new_err("all columns must have the same length"));
    }
    let records: Vec<MeetingRecord> = (0..n)
        .map(|i| MeetingRecord {
            meeting_id: i.to_string(),
            participant_count: participants[i],
            duration_min: duration_min[i],
            video_used: video[i],
            screenshare_used: screenshare[i],
            extra: Vec::new(),
            vrh_used: treated[i],
            predicted_inclusive: outcome[i],
        })
        .collect();
    let model = causal::fit_propensity(&records).map_err(py_err)?;
    let strata = causal::stratify(&records, &model, bins).map_err(py_err)?;
    let est = causal::estimate_impact(&records, &strata).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("delta".to_string(), est.delta),
        ("se".to_string(), est.se),
        ("ci_low".to_string(), est.ci95.0),
        ("ci_high".to_string(), est.ci95.1),
        ("naive_delta".to_string(), est.naive_delta),
    ]))
}

#[pymodule]
fn interrupt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CLASSES", Class::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(attention_pool, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(tpr_at_fpr, m)?)?;
    m.add_function(wrap_pyfunction!(thresholded_confusion, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(vad, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_impact, m)?)?;
    m.add_class::<Embedding>()?;
    m.add_class::<Model>()?;
    Ok(())
}
