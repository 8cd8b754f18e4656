//! Propensity-score stratification estimate of a feature's effect on a
//! binary meeting outcome.
//!
//! A logistic propensity model is fitted by IRLS on standardized
//! confounders, records are cut into equal-sized propensity bins, and the
//! treated-minus-control outcome rate is averaged over bins by bin size.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;
const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-8;
/// Standardized-scale coefficient magnitude treated as divergence.
const DIVERGENCE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingRecord {
    pub meeting_id: String,
    pub participant_count: u32,
    pub duration_min: f64,
    pub video_used: bool,
    pub screenshare_used: bool,
    /// Additional numeric confounders, same length for every record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<f64>,
    /// Treatment: the feature was used at least once.
    pub vrh_used: bool,
    /// Outcome from an external predictor.
    pub predicted_inclusive: bool,
}

impl MeetingRecord {
    pub fn validate(&self) -> Result<()> {
        if self.participant_count < 2 {
            return Err(Error::InvalidInput(format!(
                "meeting {} has {} participants",
                self.meeting_id, self.participant_count
            )));
        }
        if !(self.duration_min > 0.0 && self.duration_min.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "meeting {} has duration {}",
                self.meeting_id, self.duration_min
            )));
        }
        if self.extra.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("extra confounder of meeting {}", self.meeting_id)));
        }
        Ok(())
    }

    /// Raw confounder values; booleans as 0/1.
    pub fn confounders(&self) -> Vec<f64> {
        let mut v = vec![
            f64::from(self.participant_count),
            self.duration_min,
            f64::from(u8::from(self.video_used)),
            f64::from(u8::from(self.screenshare_used)),
        ];
        v.extend_from_slice(&self.extra);
        v
    }
}

pub fn confounder_names(extra: usize) -> Vec<String> {
    let mut names: Vec<String> =
        ["participant_count", "duration_min", "video_used", "screenshare_used"].map(String::from).to_vec();
    names.extend((0..extra).map(|i| format!("extra_{i}")));
    names
}

fn check_records(records: &[MeetingRecord]) -> Result<usize> {
    let extra = records.first().map_or(0, |r| r.extra.len());
    for r in records {
        r.validate()?;
        if r.extra.len() != extra {
            return Err(Error::Shape(format!("meeting {} has {} extra columns, expected {extra}", r.meeting_id, r.extra.len())));
        }
    }
    Ok(extra)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic propensity model over standardized confounders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsModel {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    /// 0 for constant columns, which are left out of the fit.
    pub scales: Vec<f64>,
    /// Intercept first, then one coefficient per confounder.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PsModel {
    fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }

    pub fn linear_predictor(&self, record: &MeetingRecord) -> f64 {
        let z = self.standardize(&record.confounders());
        self.coefficients[0] + z.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Propensity score in (0, 1).
    pub fn score(&self, record: &MeetingRecord) -> f64 {
        sigmoid(self.linear_predictor(record))
    }
}

/// Mean and population standard deviation per column.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds = (0..k)
        .map(|j| (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (means, sds)
}

fn is_binary(rows: &[Vec<f64>], j: usize) -> bool {
    rows.iter().all(|r| r[j] == 0.0 || r[j] == 1.0)
}

/// Maximum-likelihood logistic fit of treatment on confounders (IRLS).
///
/// Continuous columns are z-scored; 0/1 columns enter as-is. Stops when
/// the largest coefficient change drops below 1e-8 or after 100 iterations.
pub fn fit_propensity(records: &[MeetingRecord]) -> Result<PsModel> {
    let extra = check_records(records)?;
    let treated = records.iter().filter(|r| r.vrh_used).count();
    if treated == 0 || treated == records.len() {
        return Err(Error::SingleClassTreatment);
    }
    let raw: Vec<Vec<f64>> = records.iter().map(MeetingRecord::confounders).collect();
    let (mut means, mut scales) = column_stats(&raw);
    for j in 0..scales.len() {
        if scales[j] > 0.0 && is_binary(&raw, j) {
            means[j] = 0.0;
            scales[j] = 1.0;
        }
    }
    let active: Vec<usize> = (0..scales.len()).filter(|&j| scales[j] > 0.0).collect();
    let p = active.len() + 1;
    let n = records.len();
    let x = DMatrix::from_fn(n, p, |i, c| {
        if c == 0 {
            1.0
        } else {
            let j = active[c - 1];
            (raw[i][j] - means[j]) / scales[j]
        }
    });
    let y = DVector::from_iterator(n, records.iter().map(|r| f64::from(u8::from(r.vrh_used))));

    let mut beta = DVector::<f64>::zeros(p);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let grad = x.tr_mul(&(&y - &mu));
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = x.tr_mul(&xw);
        let step = hessian.cholesky().ok_or(Error::PerfectSeparation)?.solve(&grad);
        beta += &step;
        if beta.iter().any(|b| !b.is_finite() || b.abs() > DIVERGENCE) {
            return Err(Error::PerfectSeparation);
        }
        if step.amax() < TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("propensity fit did not converge in {MAX_ITERATIONS} iterations");
    }
    let mut coefficients = vec![0.0; scales.len() + 1];
    coefficients[0] = beta[0];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j + 1] = beta[c + 1];
    }
    Ok(PsModel { names: confounder_names(extra), means, scales, coefficients, iterations, converged })
}

/// Propensity-bin assignment, one entry per record in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub n_bins: usize,
    pub bin: Vec<usize>,
    pub score: Vec<f64>,
}

impl Strata {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_bins];
        for &b in &self.bin {
            s[b] += 1;
        }
        s
    }
}

/// Sorts records by propensity and cuts them into `n_bins` bins whose sizes
/// differ by at most one (earlier bins take the remainder).
pub fn stratify(records: &[MeetingRecord], model: &PsModel, n_bins: usize) -> Result<Strata> {
    if n_bins < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 bins, got {n_bins}")));
    }
    if records.len() < n_bins {
        return Err(Error::InvalidInput(format!("{} records for {n_bins} bins", records.len())));
    }
    let score: Vec<f64> = records.iter().map(|r| model.score(r)).collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        score[a]
            .total_cmp(&score[b])
            .then_with(|| records[a].meeting_id.cmp(&records[b].meeting_id))
            .then(a.cmp(&b))
    });
    let (base, rem) = (records.len() / n_bins, records.len() % n_bins);
    let mut bin = vec![0; records.len()];
    let mut pos = 0;
    for b in 0..n_bins {
        let size = base + usize::from(b < rem);
        for &i in &order[pos..pos + size] {
            bin[i] = b;
        }
        pos += size;
    }
    Ok(Strata { n_bins, bin, score })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub bin: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub treated_rate: f64,
    pub control_rate: f64,
    pub delta: f64,
    /// False when the stratum lacks treated or control records and was dropped.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEstimate {
    pub delta: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Unadjusted treated-minus-control difference.
    pub naive_delta: f64,
    pub per_stratum: Vec<StratumEstimate>,
}

/// Bin-size-weighted difference in outcome rates with a stratified
/// normal-approximation 95% interval.
pub fn estimate_impact(records: &[MeetingRecord], strata: &Strata) -> Result<ImpactEstimate> {
    if strata.bin.len() != records.len() {
        return Err(Error::Shape(format!("{} bin labels for {} records", strata.bin.len(), records.len())));
    }
    // (treated, treated positive, control, control positive)
    let mut counts = vec![[0usize; 4]; strata.n_bins];
    for (r, &b) in records.iter().zip(&strata.bin) {
        let c = &mut counts[b];
        if r.vrh_used {
            c[0] += 1;
            c[1] += usize::from(r.predicted_inclusive);
        } else {
            c[2] += 1;
            c[3] += usize::from(r.predicted_inclusive);
        }
    }
    let per_stratum: Vec<StratumEstimate> = counts
        .iter()
        .enumerate()
        .map(|(bin, c)| {
            let used = c[0] > 0 && c[2] > 0;
            let rate = |pos: usize, n: usize| if n == 0 { 0.0 } else { pos as f64 / n as f64 };
            let (pt, pc) = (rate(c[1], c[0]), rate(c[3], c[2]));
            StratumEstimate { bin, n_treated: c[0], n_control: c[2], treated_rate: pt, control_rate: pc, delta: pt - pc, used }
        })
        .collect();
    let used_total: usize = per_stratum.iter().filter(|s| s.used).map(|s| s.n_treated + s.n_control).sum();
    if used_total == 0 {
        return Err(Error::NoValidStrata);
    }
    for s in per_stratum.iter().filter(|s| !s.used) {
        log::warn!("stratum {} has {} treated / {} control records; excluded", s.bin, s.n_treated, s.n_control);
    }
    let mut delta = 0.0;
    let mut var = 0.0;
    for s in per_stratum.iter().filter(|s| s.used) {
        let w = (s.n_treated + s.n_control) as f64 / used_total as f64;
        delta += w * s.delta;
        var += w * w
            * (s.treated_rate * (1.0 - s.treated_rate) / s.n_treated as f64
                + s.control_rate * (1.0 - s.control_rate) / s.n_control as f64);
    }
    let se = var.sqrt();
    let naive_delta = naive_difference(records);
    Ok(ImpactEstimate { delta, se, ci95: (delta - Z_95 * se, delta + Z_95 * se), naive_delta, per_stratum })
}

/// Unadjusted treated-minus-control outcome rate (NaN if a group is empty).
pub fn naive_difference(records: &[MeetingRecord]) -> f64 {
    let (mut nt, mut yt, mut nc, mut yc) = (0usize, 0usize, 0usize, 0usize);
    for r in records {
        if r.vrh_used {
            nt += 1;
            yt += usize::from(r.predicted_inclusive);
        } else {
            nc += 1;
            yc += usize::from(r.predicted_inclusive);
        }
    }
    yt as f64 / nt as f64 - yc as f64 / nc as f64
}

/// Standardized mean difference of one confounder between treated and control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    /// `None` for the unstratified population.
    pub bin: Option<usize>,
    pub confounder: String,
    pub smd: f64,
}

fn smd(treated: &[f64], control: &[f64]) -> f64 {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (m, var)
    };
    let ((mt, vt), (mc, vc)) = (stats(treated), stats(control));
    let pooled = ((vt + vc) / 2.0).sqrt();
    match pooled.partial_cmp(&0.0) {
        Some(Ordering::Greater) => (mt - mc) / pooled,
        _ if mt == mc => 0.0,
        _ => f64::INFINITY.copysign(mt - mc),
    }
}

/// SMD of every confounder, overall and within each usable stratum.
pub fn balance(records: &[MeetingRecord], strata: &Strata) -> Vec<BalanceRow> {
    let extra = records.first().map_or(0, |r| r.extra.len());
    let names = confounder_names(extra);
    let raw: Vec<Vec<f64>> = records.iter().map(MeetingRecord::confounders).collect();
    let mut out = Vec::new();
    let groups: Vec<Option<usize>> = std::iter::once(None).chain((0..strata.n_bins).map(Some)).collect();
    for g in groups {
        let members: Vec<usize> = (0..records.len()).filter(|&i| g.is_none_or(|b| strata.bin[i] == b)).collect();
        let has_both = members.iter().any(|&i| records[i].vrh_used) && members.iter().any(|&i| !records[i].vrh_used);
        if !has_both {
            continue;
        }
        for (j, name) in names.iter().enumerate() {
            let t: Vec<f64> = members.iter().filter(|&&i| records[i].vrh_used).map(|&i| raw[i][j]).collect();
            let c: Vec<f64> = members.iter().filter(|&&i| !records[i].vrh_used).map(|&i| raw[i][j]).collect();
            out.push(BalanceRow { bin: g, confounder: name.clone(), smd: smd(&t, &c) });
        }
    }
    out
}
