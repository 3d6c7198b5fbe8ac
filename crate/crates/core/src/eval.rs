//! ROC curves, AUC, Youden operating points, grouped folds and the
//! calibration/test evaluation of a method.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::method::{FittedModel, MethodConfig};
use crate::pairs::enumerate_pairs;
use crate::stats;
use crate::trace::TraceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by decreasing threshold, so sensitivity is non-decreasing.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "sensitivity", "specificity"])?;
        for p in &self.points {
            w.write_record([
                p.threshold.to_string(),
                p.sensitivity.to_string(),
                p.specificity.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<roc output>", e))?;
        Ok(())
    }
}

/// Mann–Whitney AUC: P(s > t) + ½ P(s = t), via average ranks.
pub fn auc(scores_ss: &[f64], scores_ds: &[f64]) -> Result<f64> {
    if scores_ss.is_empty() || scores_ds.is_empty() {
        return Err(Error::Evaluation(format!(
            "both classes need scores (same-source {}, different-source {})",
            scores_ss.len(),
            scores_ds.len()
        )));
    }
    if scores_ss.iter().chain(scores_ds).any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    let all: Vec<f64> = scores_ss.iter().chain(scores_ds).copied().collect();
    let ranks = stats::average_ranks(&all);
    let n1 = scores_ss.len() as f64;
    let n2 = scores_ds.len() as f64;
    let w: f64 = ranks[..scores_ss.len()].iter().sum();
    Ok((w - n1 * (n1 + 1.0) / 2.0) / (n1 * n2))
}

/// ROC curve with thresholds at midpoints between consecutive distinct
/// scores plus the two infinite endpoints. A pair is called same-source when
/// its score exceeds the threshold.
pub fn roc_auc(scores_ss: &[f64], scores_ds: &[f64]) -> Result<RocCurve> {
    roc_with_threshold_map(scores_ss, scores_ds, |t| t)
}

/// As [`roc_auc`], with reported thresholds passed through a monotone map
/// (e.g. ranking on ln LR while reporting posterior thresholds).
pub fn roc_with_threshold_map(
    scores_ss: &[f64],
    scores_ds: &[f64],
    map: impl Fn(f64) -> f64,
) -> Result<RocCurve> {
    let auc = auc(scores_ss, scores_ds)?;
    let mut tagged: Vec<(f64, bool)> = scores_ss
        .iter()
        .map(|&s| (s, true))
        .chain(scores_ds.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_ss = scores_ss.len() as f64;
    let n_ds = scores_ds.len() as f64;
    let mut points = vec![RocPoint {
        threshold: map(f64::INFINITY),
        sensitivity: 0.0,
        specificity: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let v = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == v {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < tagged.len() {
            midpoint(v, tagged[i].0)
        } else {
            f64::NEG_INFINITY
        };
        points.push(RocPoint {
            threshold: map(threshold),
            sensitivity: tp as f64 / n_ss,
            specificity: 1.0 - fp as f64 / n_ds,
        });
    }
    Ok(RocCurve { points, auc })
}

/// A value strictly between `a > b`.
fn midpoint(a: f64, b: f64) -> f64 {
    match (a == f64::INFINITY, b == f64::NEG_INFINITY) {
        (true, true) => 0.0,
        (true, false) => b.abs() * 3.0 + 1.0,
        (false, true) => -(a.abs() * 3.0 + 1.0),
        (false, false) => a / 2.0 + b / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub youden: f64,
}

/// Point maximizing Sn + Sp − 1; ties go to the higher specificity.
pub fn youden_best(roc: &RocCurve) -> Result<OperatingPoint> {
    let mut best: Option<OperatingPoint> = None;
    for p in &roc.points {
        let j = p.sensitivity + p.specificity - 1.0;
        let better = match &best {
            None => true,
            Some(b) => j > b.youden || (j == b.youden && p.specificity > b.specificity),
        };
        if better {
            best = Some(OperatingPoint {
                threshold: p.threshold,
                sensitivity: p.sensitivity,
                specificity: p.specificity,
                youden: j,
            });
        }
    }
    best.ok_or_else(|| Error::Evaluation("empty ROC curve".into()))
}

/// Subjects per fold; every subject in exactly one fold, sizes within 1.
pub fn grouped_kfold(m: &TraceMatrix, k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut subjects: Vec<String> = m.subjects().into_iter().map(String::from).collect();
    if k < 2 {
        return Err(Error::Cv(format!("k must be at least 2, got {k}")));
    }
    if subjects.len() < k {
        return Err(Error::Cv(format!(
            "{k} folds requested but only {} subjects",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(folds)
}

/// Train/held-out matrices for each fold.
pub fn fold_matrices(m: &TraceMatrix, folds: &[Vec<String>]) -> Vec<(TraceMatrix, TraceMatrix)> {
    (0..folds.len())
        .map(|f| {
            let train: Vec<&String> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, s)| s)
                .collect();
            (m.subset_subjects(&train), m.subset_subjects(&folds[f]))
        })
        .collect()
}

/// Table-style summary of one data set: AUC, Sn, Sp in percent, threshold on
/// the posterior scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub threshold: f64,
    pub sn: f64,
    pub sp: f64,
    pub n_ss: usize,
    pub n_ds: usize,
    pub method: String,
    pub feature_count: usize,
    pub dataset: String,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>6.1} {:>9.2} {:>6.1} {:>6.1}",
            self.auc, self.threshold, self.sn, self.sp
        )
    }
}

/// Natural-log LRs of scored pairs, split by true label.
#[derive(Debug, Clone, Default)]
pub struct ScoredPairs {
    pub ss: Vec<f64>,
    pub ds: Vec<f64>,
}

impl ScoredPairs {
    /// ROC on the ln LR ranking, thresholds reported as posteriors for the
    /// given prior. The ranking, hence the AUC, does not depend on the prior.
    pub fn roc(&self, prior_ss: f64) -> Result<RocCurve> {
        let shift = stats::logit(prior_ss);
        roc_with_threshold_map(&self.ss, &self.ds, |t| stats::sigmoid(t + shift))
    }

    pub fn report(
        &self,
        prior_ss: f64,
        method: &str,
        feature_count: usize,
        dataset: &str,
    ) -> Result<EvalReport> {
        let roc = self.roc(prior_ss)?;
        let op = youden_best(&roc)?;
        Ok(EvalReport {
            auc: 100.0 * roc.auc,
            threshold: op.threshold,
            sn: 100.0 * op.sensitivity,
            sp: 100.0 * op.specificity,
            n_ss: self.ss.len(),
            n_ds: self.ds.len(),
            method: method.to_string(),
            feature_count,
            dataset: dataset.to_string(),
        })
    }
}

/// Reports on both sets plus the model fitted on the calibration set.
#[derive(Debug, Clone)]
pub struct MethodEvaluation {
    pub model: FittedModel,
    pub calibration: EvalReport,
    pub test: EvalReport,
    pub calibration_scores: ScoredPairs,
    pub test_scores: ScoredPairs,
}

pub fn check_disjoint(cal: &TraceMatrix, test: &TraceMatrix) -> Result<()> {
    let a: HashSet<&str> = cal.subjects().into_iter().collect();
    let shared = test
        .subjects()
        .into_iter()
        .filter(|s| a.contains(s))
        .count();
    if shared > 0 {
        return Err(Error::Leakage(shared));
    }
    Ok(())
}

/// Fit on calibration pairs; score both sets with prior `prior_ss`
/// (equal priors by default in the CLI).
pub fn evaluate_method(
    cal: &TraceMatrix,
    test: &TraceMatrix,
    cfg: &MethodConfig,
    prior_ss: f64,
) -> Result<MethodEvaluation> {
    check_disjoint(cal, test)?;
    crate::direct::check_prior(prior_ss)?;
    let cal_pairs = enumerate_pairs(cal)?;
    let test_pairs = enumerate_pairs(test)?;
    let model = FittedModel::fit(cal, &cal_pairs, cfg)?;
    let calibration_scores = model.score_pairs(cal, &cal_pairs)?;
    let test_scores = model.score_pairs(test, &test_pairs)?;
    let tag = cfg.method.to_string();
    let count = cfg.feature_count(cal.n_features());
    Ok(MethodEvaluation {
        calibration: calibration_scores.report(prior_ss, &tag, count, "calibration")?,
        test: test_scores.report(prior_ss, &tag, count, "test")?,
        model,
        calibration_scores,
        test_scores,
    })
}
