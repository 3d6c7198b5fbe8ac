//! Filter feature selection: per-feature one-sided tests on pair differences,
//! and choice of the feature count by grouped cross-validation.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{auc, fold_matrices, grouped_kfold};
use crate::method::{FittedModel, MethodConfig};
use crate::pairs::{enumerate_pairs, PairSet};
use crate::stats;
use crate::trace::{Mode, TraceMatrix};

/// Largest pooled sample size handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 12;

/// One-sided rank-sum p-value for "x is stochastically smaller than y".
///
/// Exact by enumerating every assignment of the pooled (average) ranks when
/// |x| + |y| <= 12, otherwise the normal approximation with tie-corrected
/// variance and continuity correction.
pub fn wilcoxon_ranksum_p(x: &[f64], y: &[f64]) -> Result<f64> {
    wilcoxon_tail(x, y).map(|t| match t {
        Tail::P(p) => p,
        Tail::LnP(l) => l.exp(),
    })
}

/// Natural log of [`wilcoxon_ranksum_p`]; stays finite where p underflows.
pub fn wilcoxon_ranksum_ln_p(x: &[f64], y: &[f64]) -> Result<f64> {
    wilcoxon_tail(x, y).map(|t| match t {
        Tail::P(p) => p.ln(),
        Tail::LnP(l) => l,
    })
}

enum Tail {
    P(f64),
    LnP(f64),
}

fn wilcoxon_tail(x: &[f64], y: &[f64]) -> Result<Tail> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Test(format!(
            "rank-sum test needs two non-empty samples (sizes {} and {})",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Test("NaN observation".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = stats::average_ranks(&pooled);
    let nx = x.len();
    let n = pooled.len();
    let w: f64 = ranks[..nx].iter().sum();
    if n <= WILCOXON_EXACT_MAX {
        return Ok(Tail::P(exact_lower_tail(&ranks, nx, w)));
    }
    let (nxf, nyf, nf) = (nx as f64, y.len() as f64, n as f64);
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nxf * nyf / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        // every observation tied: no evidence either way
        return Ok(Tail::P(1.0));
    }
    let mean = nxf * (nf + 1.0) / 2.0;
    let z = (w - mean + 0.5) / var.sqrt();
    Ok(Tail::LnP(stats::ln_normal_cdf(z).min(0.0)))
}

/// P(W <= w) over all C(n, nx) equally likely rank assignments.
fn exact_lower_tail(ranks: &[f64], nx: usize, w: f64) -> f64 {
    let n = ranks.len();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != nx {
            continue;
        }
        total += 1;
        let s: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| ranks[i])
            .sum();
        // rank sums are multiples of 1/2: the slack only absorbs rounding
        if s <= w + 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// One-sided Fisher exact test on `[[a, b], [c, d]]`: P(X >= a) under the
/// hypergeometric law with the observed margins. With rows (same-source,
/// different-source) and columns (difference 0, difference 1), small values
/// mean same-source pairs show fewer unit differences.
pub fn fisher_exact_p(table: [[u64; 2]; 2]) -> f64 {
    fisher_exact_ln_p(table).exp()
}

/// Natural log of [`fisher_exact_p`].
pub fn fisher_exact_ln_p(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let row1 = a + b;
    let col1 = a + c;
    let n = a + b + c + d;
    if row1 == 0 || row1 == n || col1 == 0 || col1 == n {
        return 0.0;
    }
    let hi = row1.min(col1);
    // log pmf at x = a, then the ratio recurrence up the tail
    let ln_denom = stats::ln_choose(n, row1);
    let ln_first = stats::ln_choose(col1, a) + stats::ln_choose(n - col1, row1 - a) - ln_denom;
    let mut ln_term = ln_first;
    let mut terms = vec![ln_first];
    let mut peak = ln_first;
    let mut x = a;
    while x < hi {
        let num = ((col1 - x) as f64) * ((row1 - x) as f64);
        let den = ((x + 1) as f64) * ((d + (x - a) + 1) as f64);
        ln_term += (num / den).ln();
        x += 1;
        terms.push(ln_term);
        peak = peak.max(ln_term);
        // past the mode the terms fall geometrically; stop once negligible
        if num < den && ln_term < peak - 60.0 {
            break;
        }
    }
    let s: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + s.ln()).min(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Wilcoxon,
    Fisher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Feature indices, most discriminative (smallest p) first.
    pub order: Vec<usize>,
    /// Indexed by feature.
    pub p_values: Vec<f64>,
    /// ln p, indexed by feature; orders features whose p underflows to 0.
    pub ln_p_values: Vec<f64>,
    pub test_kind: TestKind,
}

impl FeatureRanking {
    pub fn top(&self, count: usize) -> Vec<usize> {
        let mut v = self.order[..count.min(self.order.len())].to_vec();
        v.sort_unstable();
        v
    }

    /// CSV `rank,feature_index,feature_name,p_value`.
    pub fn write_csv<W: Write>(&self, out: W, m: &TraceMatrix) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "feature_index", "feature_name", "p_value"])?;
        for (r, &k) in self.order.iter().enumerate() {
            w.write_record([
                (r + 1).to_string(),
                k.to_string(),
                m.feature_name(k),
                self.p_values[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ranking output>", e))?;
        Ok(())
    }
}

/// Rank features by the one-sided test of smaller same-source than
/// different-source absolute differences.
pub fn rank_features(m: &TraceMatrix, p: &PairSet) -> Result<FeatureRanking> {
    if p.fingerprint() != m.fingerprint() {
        return Err(Error::StalePairSet {
            expected: p.fingerprint(),
            got: m.fingerprint(),
        });
    }
    let kind = match m.mode() {
        Mode::Raw => {
            return Err(Error::Mode(
                "feature ranking needs a normalized or dichotomized matrix".into(),
            ))
        }
        Mode::NormalizedLog => TestKind::Wilcoxon,
        Mode::Dichotomized => TestKind::Fisher,
    };
    if p.n_ss() == 0 || p.n_ds() == 0 {
        return Err(Error::Test(
            "ranking needs both same-source and different-source pairs".into(),
        ));
    }
    let ln_p: Vec<f64> = (0..m.n_features())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            match kind {
                TestKind::Fisher => {
                    let mut t = [[0u64; 2]; 2];
                    for pr in p.pairs() {
                        let diff = (m.row(pr.i)[k] != m.row(pr.j)[k]) as usize;
                        t[(!pr.label.is_ss()) as usize][diff] += 1;
                    }
                    Ok(fisher_exact_ln_p(t))
                }
                TestKind::Wilcoxon => {
                    let mut ss = Vec::with_capacity(p.n_ss());
                    let mut ds = Vec::with_capacity(p.n_ds());
                    for pr in p.pairs() {
                        let d = (m.row(pr.i)[k] - m.row(pr.j)[k]).abs();
                        if pr.label.is_ss() {
                            ss.push(d)
                        } else {
                            ds.push(d)
                        }
                    }
                    wilcoxon_ranksum_ln_p(&ss, &ds)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..m.n_features()).collect();
    order.sort_by(|&a, &b| ln_p[a].total_cmp(&ln_p[b]).then(a.cmp(&b)));
    Ok(FeatureRanking {
        order,
        p_values: ln_p.iter().map(|v| v.exp()).collect(),
        ln_p_values: ln_p,
        test_kind: kind,
    })
}

/// Candidate counts {1, 2, 5, 10, 20, 50, 100, 200, ..., 600, min(741, n)}
/// restricted to counts <= n.
pub fn default_grid(n: usize) -> Vec<usize> {
    let mut g: Vec<usize> = [1, 2, 5, 10, 20, 50, 100, 200, 300, 400, 500, 600]
        .into_iter()
        .filter(|&c| c <= n)
        .collect();
    g.push(n.min(741));
    g.sort_unstable();
    g.dedup();
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvStat {
    /// Mean held-out AUC (fraction, not percent).
    pub mean: f64,
    /// Sample standard deviation of the per-fold AUCs.
    pub sd: f64,
    pub fold_aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best_count: usize,
    pub cv_auc_by_count: BTreeMap<usize, CvStat>,
    pub grid: Vec<usize>,
    /// Counts the method could not be fitted or evaluated at, with the reason.
    pub skipped: Vec<(usize, String)>,
    /// Subjects of each fold.
    pub folds: Vec<Vec<String>>,
    /// Ranking used in each fold, computed from that fold's training pairs.
    pub fold_rankings: Vec<Vec<usize>>,
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::UndefinedCorrelation(_)
            | Error::PairDistance { .. }
            | Error::Fit(_)
            | Error::DegenerateFit(_)
            | Error::IndeterminateLr(_)
            | Error::Evaluation(_)
    )
}

/// Grouped k-fold choice of the number of top-ranked features.
///
/// For each fold the ranking is recomputed on the training subjects only;
/// the method (from `cfg`, whose own feature subset is ignored) is fitted on
/// training pairs restricted to the top `c` features and scored on the
/// held-out pairs.
pub fn select_count_cv(
    cal: &TraceMatrix,
    cfg: &MethodConfig,
    grid: &[usize],
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    if grid.is_empty() {
        return Err(Error::Cv("empty grid".into()));
    }
    if let Some(&c) = grid.iter().find(|&&c| c == 0 || c > cal.n_features()) {
        return Err(Error::Cv(format!(
            "grid count {c} outside 1..={}",
            cal.n_features()
        )));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let folds = grouped_kfold(cal, k, seed)?;
    let mats = fold_matrices(cal, &folds);
    let mut per_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut skipped: BTreeMap<usize, String> = BTreeMap::new();
    let mut fold_rankings = Vec::with_capacity(k);
    for (train, held) in &mats {
        let train_pairs = enumerate_pairs(train)?;
        let held_pairs = enumerate_pairs(held)?;
        let ranking = rank_features(train, &train_pairs)?;
        for &c in &grid {
            if skipped.contains_key(&c) {
                continue;
            }
            let fold_cfg = cfg.clone().with_features(Some(ranking.top(c)));
            let outcome = FittedModel::fit(train, &train_pairs, &fold_cfg)
                .and_then(|model| model.score_pairs(held, &held_pairs))
                .and_then(|s| auc(&s.ss, &s.ds));
            match outcome {
                Ok(a) => per_count.entry(c).or_default().push(a),
                Err(e) if recoverable(&e) => {
                    per_count.remove(&c);
                    skipped.insert(c, e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        fold_rankings.push(ranking.order);
    }
    let cv_auc_by_count: BTreeMap<usize, CvStat> = per_count
        .into_iter()
        .map(|(c, aucs)| {
            (
                c,
                CvStat {
                    mean: stats::mean(&aucs),
                    sd: stats::sample_sd(&aucs),
                    fold_aucs: aucs,
                },
            )
        })
        .collect();
    // Ascending iteration + strict improvement keeps the smallest count on ties.
    let mut best: Option<(usize, f64)> = None;
    for (&c, s) in &cv_auc_by_count {
        if best.is_none_or(|(_, m)| s.mean > m) {
            best = Some((c, s.mean));
        }
    }
    let (best_count, _) = best.ok_or_else(|| {
        Error::Cv(format!(
            "no grid count could be evaluated: {}",
            skipped.values().next().cloned().unwrap_or_default()
        ))
    })?;
    Ok(SelectionResult {
        best_count,
        cv_auc_by_count,
        grid,
        skipped: skipped.into_iter().collect(),
        folds,
        fold_rankings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Gender, Trace};

    /// P(W <= w) by listing every permutation of the pooled sample.
    fn permutation_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let ranks = stats::average_ranks(&pooled);
        let w: f64 = ranks[..x.len()].iter().sum();
        let mut idx: Vec<usize> = (0..pooled.len()).collect();
        let (mut hit, mut total) = (0u64, 0u64);
        permute(&mut idx, 0, &mut |perm| {
            total += 1;
            let s: f64 = perm[..x.len()].iter().map(|&i| ranks[i]).sum();
            if s <= w + 1e-9 {
                hit += 1;
            }
        });
        hit as f64 / total as f64
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn wilcoxon_examples() {
        assert!((wilcoxon_ranksum_p(&[1.0, 2.0], &[3.0, 4.0]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((permutation_p(&[1.0, 2.0], &[3.0, 4.0]) - 1.0 / 6.0).abs() < 1e-15);
        let s = [0.3, 0.1, 0.7, 0.7];
        assert!(wilcoxon_ranksum_p(&s, &s).unwrap() >= 0.5);
        assert!(wilcoxon_ranksum_p(&[], &[1.0]).is_err());
        assert_eq!(wilcoxon_ranksum_p(&[0.0; 20], &[0.0; 30]).unwrap(), 1.0);
    }

    #[test]
    fn wilcoxon_small_matches_permutations() {
        let x = [0.2, 0.5, 0.5, 0.9];
        let y = [0.5, 1.1, 0.3, 2.0, 0.9];
        assert!((wilcoxon_ranksum_p(&x, &y).unwrap() - permutation_p(&x, &y)).abs() < 1e-15);
    }

    #[test]
    fn fisher_examples() {
        assert!((fisher_exact_p([[3, 1], [1, 3]]) - 17.0 / 70.0).abs() < 1e-15);
        assert_eq!(fisher_exact_p([[0, 0], [4, 2]]), 1.0);
        assert_eq!(fisher_exact_p([[3, 0], [5, 0]]), 1.0);
        assert_eq!(fisher_exact_p([[0, 3], [0, 5]]), 1.0);
        // one-sided in the other direction is large
        assert!(fisher_exact_p([[1, 3], [3, 1]]) > 0.9);
    }

    #[test]
    fn default_grid_shape() {
        assert_eq!(default_grid(50), vec![1, 2, 5, 10, 20, 50]);
        assert_eq!(default_grid(741).last(), Some(&741));
        assert_eq!(default_grid(1000).last(), Some(&741));
        assert_eq!(default_grid(7), vec![1, 2, 5, 7]);
    }

    fn dich(rows: &[(&str, [f64; 3])]) -> TraceMatrix {
        let traces = rows
            .iter()
            .enumerate()
            .map(|(r, (s, f))| Trace {
                subject_id: s.to_string(),
                replicate_id: r.to_string(),
                gender: Gender::Unknown,
                age: None,
                features: f.to_vec(),
            })
            .collect();
        TraceMatrix::new(traces, 3, None, Mode::Dichotomized).unwrap()
    }

    #[test]
    fn ranking_rules() {
        // feature 0 constant, feature 1 perfect discriminator, feature 2 equals feature 1
        let m = dich(&[
            ("a", [1.0, 1.0, 1.0]),
            ("a", [1.0, 1.0, 1.0]),
            ("b", [1.0, 0.0, 0.0]),
            ("b", [1.0, 0.0, 0.0]),
        ]);
        let p = enumerate_pairs(&m).unwrap();
        let r = rank_features(&m, &p).unwrap();
        assert_eq!(r.test_kind, TestKind::Fisher);
        assert_eq!(r.p_values[0], 1.0);
        assert_eq!(r.order, vec![1, 2, 0]);
        assert_eq!(r.p_values[1], r.p_values[2]);
        assert_eq!(r.top(2), vec![1, 2]);
    }

    #[test]
    fn ranking_rejects_raw() {
        let traces = vec![
            Trace {
                subject_id: "a".into(),
                replicate_id: "1".into(),
                gender: Gender::Unknown,
                age: None,
                features: vec![1.0, 2.0],
            },
            Trace {
                subject_id: "b".into(),
                replicate_id: "1".into(),
                gender: Gender::Unknown,
                age: None,
                features: vec![2.0, 1.0],
            },
        ];
        let m = TraceMatrix::new(traces, 2, None, Mode::Raw).unwrap();
        let p = enumerate_pairs(&m).unwrap();
        assert!(matches!(rank_features(&m, &p), Err(Error::Mode(_))));
    }
}
