//! Same-source / different-source pair enumeration and pair distances.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace::TraceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Same source.
    Ss,
    /// Different source.
    Ds,
}

impl Label {
    pub fn is_ss(self) -> bool {
        self == Label::Ss
    }

    fn as_str(self) -> &'static str {
        match self {
            Label::Ss => "ss",
            Label::Ds => "ds",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: Label,
}

/// Every unordered trace pair of one matrix, labeled by subject equality.
#[derive(Debug, Clone)]
pub struct PairSet {
    pairs: Vec<Pair>,
    n_ss: usize,
    n_ds: usize,
    fingerprint: u64,
}

impl PairSet {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }
    pub fn len(&self) -> usize {
        self.pairs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
    pub fn n_ss(&self) -> usize {
        self.n_ss
    }
    pub fn n_ds(&self) -> usize {
        self.n_ds
    }
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.pairs.iter().map(|p| p.label)
    }

    fn check(&self, m: &TraceMatrix) -> Result<()> {
        let got = m.fingerprint();
        if got != self.fingerprint {
            return Err(Error::StalePairSet {
                expected: self.fingerprint,
                got,
            });
        }
        Ok(())
    }

    /// CSV `i,j,label,d`; `d` is left empty when no distances are given.
    pub fn write_csv<W: Write>(&self, out: W, distances: Option<&[f64]>) -> Result<()> {
        if let Some(d) = distances {
            if d.len() != self.len() {
                return Err(Error::Dimension {
                    expected: self.len(),
                    got: d.len(),
                });
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "label", "d"])?;
        for (k, p) in self.pairs.iter().enumerate() {
            let d = distances.map(|d| d[k].to_string()).unwrap_or_default();
            w.write_record([&p.i.to_string(), &p.j.to_string(), p.label.as_str(), &d])?;
        }
        w.flush().map_err(|e| Error::io("<pairs output>", e))?;
        Ok(())
    }
}

pub fn enumerate_pairs(m: &TraceMatrix) -> Result<PairSet> {
    let n = m.len();
    if n < 2 {
        return Err(Error::Pairing(format!("need at least 2 traces, found {n}")));
    }
    // Subject ids interned to integers keep the O(N^2) loop cheap.
    let mut ids = std::collections::HashMap::new();
    let subj: Vec<usize> = m
        .traces()
        .iter()
        .map(|t| {
            let next = ids.len();
            *ids.entry(t.subject_id.as_str()).or_insert(next)
        })
        .collect();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    let mut n_ss = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let label = if subj[i] == subj[j] {
                n_ss += 1;
                Label::Ss
            } else {
                Label::Ds
            };
            pairs.push(Pair { i, j, label });
        }
    }
    let n_ds = pairs.len() - n_ss;
    Ok(PairSet {
        pairs,
        n_ss,
        n_ds,
        fingerprint: m.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Euclidean,
    Pearson,
    Spearman,
    Vectorial,
}

impl DistanceKind {
    pub fn is_scalar(self) -> bool {
        self != DistanceKind::Vectorial
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Pearson => "pearson",
            DistanceKind::Spearman => "spearman",
            DistanceKind::Vectorial => "vectorial",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "pearson" => Ok(DistanceKind::Pearson),
            "spearman" => Ok(DistanceKind::Spearman),
            "vectorial" => Ok(DistanceKind::Vectorial),
            other => Err(Error::Invalid(format!("unknown distance '{other}'"))),
        }
    }
}

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    if x.is_empty() {
        return Err(Error::Invalid("empty vectors".into()));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Centered copy scaled to unit norm; `None` for zero variance.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let m = stats::mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(c.into_iter().map(|v| v / norm).collect())
}

fn correlation_distance(zx: &[f64], zy: &[f64]) -> f64 {
    let r: f64 = zx.iter().zip(zy).map(|(a, b)| a * b).sum();
    (1.0 - r).clamp(0.0, 2.0)
}

fn check_corr_input(x: &[f64], y: &[f64]) -> Result<()> {
    same_len(x, y)?;
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 features, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// 1 - Pearson correlation, in [0, 2].
pub fn pearson_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_corr_input(x, y)?;
    let zx = standardize(x)
        .ok_or_else(|| Error::UndefinedCorrelation("first vector is constant".into()))?;
    let zy = standardize(y)
        .ok_or_else(|| Error::UndefinedCorrelation("second vector is constant".into()))?;
    Ok(correlation_distance(&zx, &zy))
}

pub fn rank_transform(x: &[f64]) -> Vec<f64> {
    stats::average_ranks(x)
}

/// 1 - Spearman rank correlation (average ranks for ties), in [0, 2].
pub fn spearman_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_corr_input(x, y)?;
    pearson_distance(&rank_transform(x), &rank_transform(y))
}

/// Component-wise absolute difference.
pub fn vectorial_distance(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRecord {
    pub pair: usize,
    pub scalar: Option<f64>,
    pub vector: Option<Vec<f64>>,
}

/// Default ceiling for materialized vectorial distances.
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

fn gather(row: &[f64], subset: Option<&[usize]>) -> Vec<f64> {
    match subset {
        Some(s) => s.iter().map(|&k| row[k]).collect(),
        None => row.to_vec(),
    }
}

pub(crate) fn check_subset(m: &TraceMatrix, subset: Option<&[usize]>) -> Result<usize> {
    match subset {
        None => Ok(m.n_features()),
        Some(s) => {
            if s.is_empty() {
                return Err(Error::Invalid("empty feature subset".into()));
            }
            if let Some(&bad) = s.iter().find(|&&k| k >= m.n_features()) {
                return Err(Error::Dimension {
                    expected: m.n_features(),
                    got: bad + 1,
                });
            }
            Ok(s.len())
        }
    }
}

/// Scalar distances for every pair, in pair order.
///
/// Rows are prepared once per trace (ranked and/or standardized) so each
/// pair costs a single dot product.
pub fn scalar_distances(
    m: &TraceMatrix,
    p: &PairSet,
    kind: DistanceKind,
    subset: Option<&[usize]>,
) -> Result<Vec<f64>> {
    p.check(m)?;
    check_subset(m, subset)?;
    let rows: Vec<Vec<f64>> = (0..m.len()).map(|i| gather(m.row(i), subset)).collect();
    match kind {
        DistanceKind::Euclidean => p
            .pairs()
            .par_iter()
            .map(|pr| euclidean(&rows[pr.i], &rows[pr.j]))
            .collect(),
        DistanceKind::Pearson | DistanceKind::Spearman => {
            if rows[0].len() < 2 {
                return Err(Error::UndefinedCorrelation(format!(
                    "need at least 2 features, got {}",
                    rows[0].len()
                )));
            }
            let prepared: Vec<Option<Vec<f64>>> = rows
                .par_iter()
                .map(|r| {
                    if kind == DistanceKind::Spearman {
                        standardize(&rank_transform(r))
                    } else {
                        standardize(r)
                    }
                })
                .collect();
            p.pairs()
                .par_iter()
                .map(|pr| match (&prepared[pr.i], &prepared[pr.j]) {
                    (Some(a), Some(b)) => Ok(correlation_distance(a, b)),
                    (a, _) => {
                        let which = if a.is_none() { pr.i } else { pr.j };
                        let t = m.trace(which);
                        Err(Error::PairDistance {
                            i: pr.i,
                            j: pr.j,
                            source: Box::new(Error::UndefinedCorrelation(format!(
                                "trace {which} (subject {}, replicate {}) is constant over the selected features",
                                t.subject_id, t.replicate_id
                            ))),
                        })
                    }
                })
                .collect()
        }
        DistanceKind::Vectorial => Err(Error::Invalid("vectorial distance is not scalar".into())),
    }
}

/// Write vectorial distances of `pairs` into `out` (row-major, one row of
/// width `subset.len()` per pair).
pub fn vectorial_batch(m: &TraceMatrix, pairs: &[Pair], subset: Option<&[usize]>, out: &mut [f64]) {
    match subset {
        None => {
            let w = m.n_features();
            for (pr, dst) in pairs.iter().zip(out.chunks_exact_mut(w)) {
                let (a, b) = (m.row(pr.i), m.row(pr.j));
                for k in 0..w {
                    dst[k] = (a[k] - b[k]).abs();
                }
            }
        }
        Some(s) => {
            let w = s.len();
            for (pr, dst) in pairs.iter().zip(out.chunks_exact_mut(w)) {
                let (a, b) = (m.row(pr.i), m.row(pr.j));
                for (d, &k) in dst.iter_mut().zip(s) {
                    *d = (a[k] - b[k]).abs();
                }
            }
        }
    }
}

/// One record per pair, in pair order.
pub fn compute_distances(
    m: &TraceMatrix,
    p: &PairSet,
    kind: DistanceKind,
    subset: Option<&[usize]>,
) -> Result<Vec<DistanceRecord>> {
    compute_distances_with_budget(m, p, kind, subset, DEFAULT_MEMORY_BUDGET)
}

pub fn compute_distances_with_budget(
    m: &TraceMatrix,
    p: &PairSet,
    kind: DistanceKind,
    subset: Option<&[usize]>,
    budget_bytes: usize,
) -> Result<Vec<DistanceRecord>> {
    if kind.is_scalar() {
        let d = scalar_distances(m, p, kind, subset)?;
        return Ok(d
            .into_iter()
            .enumerate()
            .map(|(pair, d)| DistanceRecord {
                pair,
                scalar: Some(d),
                vector: None,
            })
            .collect());
    }
    p.check(m)?;
    let width = check_subset(m, subset)?;
    let needed = p.len().saturating_mul(width).saturating_mul(8);
    if needed > budget_bytes {
        return Err(Error::MemoryBudget {
            needed,
            budget: budget_bytes,
        });
    }
    Ok(p.pairs()
        .par_iter()
        .enumerate()
        .map(|(pair, pr)| {
            let mut v = vec![0.0; width];
            vectorial_batch(m, std::slice::from_ref(pr), subset, &mut v);
            DistanceRecord {
                pair,
                scalar: None,
                vector: Some(v),
            }
        })
        .collect())
}

/// Vectorial records as a CSV matrix plus a sidecar `i,j,label` pair index.
pub fn write_vectorial_csv<W1: Write, W2: Write>(
    p: &PairSet,
    records: &[DistanceRecord],
    matrix_out: W1,
    index_out: W2,
) -> Result<()> {
    let mut mw = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(matrix_out);
    let mut iw = csv::Writer::from_writer(index_out);
    iw.write_record(["i", "j", "label"])?;
    for r in records {
        let v = r
            .vector
            .as_ref()
            .ok_or_else(|| Error::Invalid("record has no vectorial distance".into()))?;
        let pr = p.pairs()[r.pair];
        mw.write_record(v.iter().map(|x| x.to_string()))?;
        iw.write_record([&pr.i.to_string(), &pr.j.to_string(), pr.label.as_str()])?;
    }
    mw.flush().map_err(|e| Error::io("<vectorial output>", e))?;
    iw.flush()
        .map_err(|e| Error::io("<pair index output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Gender, Mode, Trace};
    use proptest::prelude::*;

    fn matrix(spec: &[(&str, Vec<f64>)]) -> TraceMatrix {
        let traces = spec
            .iter()
            .enumerate()
            .map(|(r, (s, f))| Trace {
                subject_id: s.to_string(),
                replicate_id: r.to_string(),
                gender: Gender::Unknown,
                age: None,
                features: f.clone(),
            })
            .collect();
        TraceMatrix::new(traces, spec[0].1.len(), None, Mode::Raw).unwrap()
    }

    #[test]
    fn pair_counts() {
        let m = matrix(&[("a", vec![1.0]), ("a", vec![2.0]), ("a", vec![3.0])]);
        let p = enumerate_pairs(&m).unwrap();
        assert_eq!((p.n_ss(), p.n_ds()), (3, 0));

        let m = matrix(&[
            ("a", vec![1.0]),
            ("a", vec![2.0]),
            ("b", vec![3.0]),
            ("b", vec![4.0]),
        ]);
        let p = enumerate_pairs(&m).unwrap();
        assert_eq!((p.n_ss(), p.n_ds()), (2, 4));
        assert!(p.pairs().iter().all(|q| q.i < q.j));

        let one = matrix(&[("a", vec![1.0])]);
        assert!(matches!(enumerate_pairs(&one), Err(Error::Pairing(_))));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            euclidean(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn euclidean_matches_summation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let mut acc = 0.0;
            for k in 0..10 {
                let d = x[k] - y[k];
                acc += d * d;
            }
            assert!((euclidean(&x, &y).unwrap() - acc.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 5.0, 3.0];
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let yneg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(pearson_distance(&x, &y2).unwrap().abs() < 1e-15);
        assert!((pearson_distance(&x, &yneg).unwrap() - 2.0).abs() < 1e-15);
        // means 2 and 5/3; cross sum 1, sums of squares 2 and 2/3
        let d = pearson_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        let want = 1.0 - 1.0 / (2.0f64 * (2.0 / 3.0)).sqrt();
        assert!((d - want).abs() < 1e-15);
        assert!((d - (1.0 - 3f64.sqrt() / 2.0)).abs() < 1e-15);
        assert!((d - 0.13397).abs() < 1e-5);
        assert!(matches!(
            pearson_distance(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn ranks() {
        assert_eq!(
            rank_transform(&[1.0, 2.0, 2.0, 3.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(rank_transform(&[0.1, 0.5, 0.9]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_transform(&[7.0; 4]), vec![2.5; 4]);
    }

    #[test]
    fn spearman_examples() {
        assert!(
            spearman_distance(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0])
                .unwrap()
                .abs()
                < 1e-15
        );
        assert!(
            (spearman_distance(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]).unwrap() - 2.0).abs() < 1e-15
        );
        let d = spearman_distance(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let oracle = pearson_distance(&[1.0, 2.5, 2.5, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d, oracle);
        assert!(matches!(
            spearman_distance(&[2.0, 2.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn vectorial_examples() {
        assert_eq!(
            vectorial_distance(&[1.0, 0.5], &[0.25, 0.75]).unwrap(),
            vec![0.75, 0.25]
        );
        assert_eq!(
            vectorial_distance(&[0.3, 0.2], &[0.3, 0.2]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            vectorial_distance(&[0.0, 1.0, 1.0], &[1.0, 1.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn compute_distances_records() {
        let m = matrix(&[
            ("a", vec![1.0, 2.0, 3.0, 0.5]),
            ("a", vec![2.0, 2.5, 3.5, 0.1]),
            ("b", vec![4.0, 1.0, 0.2, 0.3]),
        ]);
        let p = enumerate_pairs(&m).unwrap();
        let recs = compute_distances(&m, &p, DistanceKind::Spearman, None).unwrap();
        assert_eq!(recs.len(), 3);
        for (r, pr) in recs.iter().zip(p.pairs()) {
            let want = spearman_distance(m.row(pr.i), m.row(pr.j)).unwrap();
            assert!((r.scalar.unwrap() - want).abs() < 1e-12);
        }
        let vrec = compute_distances(&m, &p, DistanceKind::Vectorial, Some(&[0, 3])).unwrap();
        assert_eq!(vrec[0].vector.as_deref(), Some(&[1.0, 0.4][..]));
        assert!(matches!(
            compute_distances_with_budget(&m, &p, DistanceKind::Vectorial, None, 10),
            Err(Error::MemoryBudget { .. })
        ));
    }

    #[test]
    fn stale_pairset_rejected() {
        let m = matrix(&[("a", vec![1.0, 2.0]), ("b", vec![2.0, 1.0])]);
        let other = matrix(&[("a", vec![1.0, 2.0]), ("b", vec![2.0, 1.5])]);
        let p = enumerate_pairs(&m).unwrap();
        assert!(matches!(
            compute_distances(&other, &p, DistanceKind::Euclidean, None),
            Err(Error::StalePairSet { .. })
        ));
    }

    #[test]
    fn constant_trace_reports_pair() {
        let m = matrix(&[("a", vec![1.0, 2.0]), ("b", vec![3.0, 3.0])]);
        let p = enumerate_pairs(&m).unwrap();
        match scalar_distances(&m, &p, DistanceKind::Pearson, None) {
            Err(Error::PairDistance { i: 0, j: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..10.0, n),
                proptest::collection::vec(0.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetry_identity_range((x, y) in vec_pair()) {
            prop_assert_eq!(euclidean(&x, &y).unwrap(), euclidean(&y, &x).unwrap());
            prop_assert_eq!(euclidean(&x, &x).unwrap(), 0.0);
            prop_assert_eq!(vectorial_distance(&x, &y).unwrap(), vectorial_distance(&y, &x).unwrap());
            if let (Ok(a), Ok(b)) = (pearson_distance(&x, &y), pearson_distance(&y, &x)) {
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=2.0).contains(&a));
                prop_assert!(pearson_distance(&x, &x).unwrap() < 1e-12);
            }
            if let (Ok(a), Ok(b)) = (spearman_distance(&x, &y), spearman_distance(&y, &x)) {
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=2.0).contains(&a));
            }
        }

        #[test]
        fn spearman_invariant_under_monotone_maps((x, y) in vec_pair()) {
            if let Ok(d) = spearman_distance(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
                prop_assert_eq!(spearman_distance(&tx, &y).unwrap(), d);
            }
        }
    }
}
