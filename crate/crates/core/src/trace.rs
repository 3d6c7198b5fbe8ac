//! Trace panels: loading, validation, normalization, dichotomization,
//! subject-level splitting and the repeatability diagnostic.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unknown,
}

impl Gender {
    fn parse(s: &str) -> Option<Gender> {
        match s.trim() {
            "M" | "m" => Some(Gender::M),
            "F" | "f" => Some(Gender::F),
            "" | "U" | "u" | "unknown" | "NA" => Some(Gender::Unknown),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unknown => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub subject_id: String,
    pub replicate_id: String,
    pub gender: Gender,
    pub age: Option<u32>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Raw,
    NormalizedLog,
    Dichotomized,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Raw => "raw",
            Mode::NormalizedLog => "normalized_log",
            Mode::Dichotomized => "dichotomized",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s.trim() {
            "raw" => Ok(Mode::Raw),
            "normalized_log" => Ok(Mode::NormalizedLog),
            "dichotomized" => Ok(Mode::Dichotomized),
            other => Err(Error::Schema(format!("unknown mode '{other}'"))),
        }
    }
}

/// Column names used to locate the identifier and covariate columns.
/// Every other column is a feature.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub subject: String,
    pub replicate: String,
    pub gender: String,
    pub age: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            subject: "subject_id".into(),
            replicate: "replicate_id".into(),
            gender: "gender".into(),
            age: "age".into(),
        }
    }
}

/// A validated panel of traces sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMatrix {
    traces: Vec<Trace>,
    n_features: usize,
    feature_names: Option<Vec<String>>,
    mode: Mode,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl TraceMatrix {
    pub fn new(
        traces: Vec<Trace>,
        n_features: usize,
        feature_names: Option<Vec<String>>,
        mode: Mode,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Schema("panel needs at least one feature".into()));
        }
        if let Some(names) = &feature_names {
            if names.len() != n_features {
                return Err(Error::Dimension {
                    expected: n_features,
                    got: names.len(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(traces.len());
        for (row, t) in traces.iter().enumerate() {
            if t.features.len() != n_features {
                return Err(Error::Dimension {
                    expected: n_features,
                    got: t.features.len(),
                });
            }
            if let Some(k) = t.features.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Parse {
                    row: row + 1,
                    msg: format!("feature {k} is negative or not finite"),
                });
            }
            if !seen.insert((t.subject_id.as_str(), t.replicate_id.as_str())) {
                return Err(Error::Duplicate {
                    subject: t.subject_id.clone(),
                    replicate: t.replicate_id.clone(),
                });
            }
            match mode {
                Mode::Raw => {}
                Mode::NormalizedLog => {
                    let s: f64 = t.features.iter().sum();
                    if (s - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::Mode(format!(
                            "row {} sums to {s}, normalized rows must sum to 1",
                            row + 1
                        )));
                    }
                }
                Mode::Dichotomized => {
                    if t.features.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::Mode(format!(
                            "row {} has non-binary entries in a dichotomized matrix",
                            row + 1
                        )));
                    }
                }
            }
        }
        Ok(TraceMatrix {
            traces,
            n_features,
            feature_names,
            mode,
        })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn trace(&self, i: usize) -> &Trace {
        &self.traces[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.traces[i].features
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn feature_name(&self, k: usize) -> String {
        match &self.feature_names {
            Some(n) => n[k].clone(),
            None => format!("f_{}", k + 1),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Distinct subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.traces
            .iter()
            .filter(|t| seen.insert(t.subject_id.as_str()))
            .map(|t| t.subject_id.as_str())
            .collect()
    }

    /// Trace indices grouped by subject, subjects in order of first appearance.
    pub fn subject_groups(&self) -> Vec<(&str, Vec<usize>)> {
        let mut pos: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, t) in self.traces.iter().enumerate() {
            let g = *pos.entry(t.subject_id.as_str()).or_insert_with(|| {
                groups.push((t.subject_id.as_str(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(i);
        }
        groups
    }

    /// Keep the traces of the given subjects, preserving row order.
    pub fn subset_subjects<S: AsRef<str>>(&self, subjects: &[S]) -> TraceMatrix {
        let keep: HashSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
        TraceMatrix {
            traces: self
                .traces
                .iter()
                .filter(|t| keep.contains(t.subject_id.as_str()))
                .cloned()
                .collect(),
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            mode: self.mode,
        }
    }

    /// 64-bit content fingerprint over (N, n, mode, ids, feature bits).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.traces.len() as u64).to_le_bytes());
        h.update((self.n_features as u64).to_le_bytes());
        h.update(self.mode.to_string().as_bytes());
        for t in &self.traces {
            h.update(t.subject_id.as_bytes());
            h.update([0u8]);
            h.update(t.replicate_id.as_bytes());
            h.update([0u8]);
            for v in &t.features {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Serialize in the panel CSV format, preceded by a `#mode:` line and any
    /// extra comment lines (written as `#key: value`).
    pub fn write_csv<W: Write>(&self, out: W, comments: &[(&str, String)]) -> Result<()> {
        let mut out = out;
        let io = |e| Error::io("<csv output>", e);
        writeln!(out, "#mode: {}", self.mode).map_err(io)?;
        for (k, v) in comments {
            writeln!(out, "#{k}: {v}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "subject_id".to_string(),
            "replicate_id".to_string(),
            "gender".to_string(),
            "age".to_string(),
        ];
        header.extend((0..self.n_features).map(|k| self.feature_name(k)));
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for t in &self.traces {
            rec.clear();
            rec.push(t.subject_id.clone());
            rec.push(t.replicate_id.clone());
            rec.push(t.gender.as_str().to_string());
            rec.push(t.age.map(|a| a.to_string()).unwrap_or_default());
            // Display prints the shortest representation that round-trips.
            rec.extend(t.features.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, &[])
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Read a panel from CSV text. Leading `#` lines are comments; a `#mode:`
/// comment sets the matrix mode (default raw).
pub fn read_csv<R: Read>(mut input: R, schema: &CsvSchema) -> Result<TraceMatrix> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<csv input>", e))?;
    let mut mode = Mode::Raw;
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let l = line.trim();
        if let Some(c) = l.strip_prefix('#') {
            if let Some(m) = c.trim().strip_prefix("mode:") {
                mode = m.parse()?;
            }
            body_start += line.len();
        } else if l.is_empty() {
            body_start += line.len();
        } else {
            break;
        }
    }
    let body = &text[body_start..];
    if body.trim().is_empty() {
        return Err(Error::Schema("empty input: no header row".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let subj = col(&schema.subject)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.subject)))?;
    let rep = col(&schema.replicate)
        .ok_or_else(|| Error::Schema(format!("missing column '{}'", schema.replicate)))?;
    let gender = col(&schema.gender);
    let age = col(&schema.age);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != subj && c != rep && Some(c) != gender && Some(c) != age)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&c| headers[c].trim().to_string())
        .collect();

    let mut traces = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let g = match gender {
            Some(c) => Gender::parse(&rec[c]).ok_or_else(|| Error::Parse {
                row,
                msg: format!("invalid gender '{}'", &rec[c]),
            })?,
            None => Gender::Unknown,
        };
        let a = match age {
            Some(c) if !rec[c].trim().is_empty() => {
                Some(rec[c].trim().parse::<u32>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("invalid age '{}'", &rec[c]),
                })?)
            }
            _ => None,
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let raw = rec[c].trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric value '{raw}' in column '{}'", &headers[c]),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    row,
                    msg: format!(
                        "value {raw} in column '{}' must be finite and >= 0",
                        &headers[c]
                    ),
                });
            }
            features.push(v);
        }
        traces.push(Trace {
            subject_id: rec[subj].trim().to_string(),
            replicate_id: rec[rep].trim().to_string(),
            gender: g,
            age: a,
            features,
        });
    }
    let n = feature_names.len();
    TraceMatrix::new(traces, n, Some(feature_names), mode)
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TraceMatrix> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), schema)
}

fn require_raw(m: &TraceMatrix, op: &str) -> Result<()> {
    if m.mode != Mode::Raw {
        return Err(Error::Mode(format!(
            "{op} needs a raw matrix, got {}",
            m.mode
        )));
    }
    Ok(())
}

/// Per trace: x_k = ln(1 + a_k) / sum_j ln(1 + a_j).
pub fn normalize_log(m: &TraceMatrix) -> Result<TraceMatrix> {
    require_raw(m, "normalize_log")?;
    let mut traces = Vec::with_capacity(m.len());
    for (index, t) in m.traces.iter().enumerate() {
        let logs: Vec<f64> = t.features.iter().map(|a| a.ln_1p()).collect();
        let total: f64 = logs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Normalization {
                index,
                subject: t.subject_id.clone(),
                replicate: t.replicate_id.clone(),
            });
        }
        traces.push(Trace {
            features: logs.iter().map(|v| v / total).collect(),
            ..t.clone()
        });
    }
    TraceMatrix::new(
        traces,
        m.n_features,
        m.feature_names.clone(),
        Mode::NormalizedLog,
    )
}

/// Presence/absence with presence meaning area > 0.
pub fn dichotomize(m: &TraceMatrix) -> Result<TraceMatrix> {
    dichotomize_with_threshold(m, 0.0)
}

pub fn dichotomize_with_threshold(m: &TraceMatrix, threshold: f64) -> Result<TraceMatrix> {
    require_raw(m, "dichotomize")?;
    let traces = m
        .traces
        .iter()
        .map(|t| Trace {
            features: t
                .features
                .iter()
                .map(|&a| if a > threshold { 1.0 } else { 0.0 })
                .collect(),
            ..t.clone()
        })
        .collect();
    TraceMatrix::new(
        traces,
        m.n_features,
        m.feature_names.clone(),
        Mode::Dichotomized,
    )
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitConfig {
    pub calibration_fraction: f64,
    pub stratify_gender: bool,
    pub seed: u64,
}

/// Subject-level calibration/test split.
///
/// Subjects are shuffled within each stratum (gender, or one stratum when
/// unstratified). The calibration subject total is round(fraction × subjects),
/// clamped so both sides are non-empty, and is apportioned to strata by
/// largest remainder, so every stratum's calibration count is within 1 of
/// fraction × stratum size.
pub fn split_calibration_test(
    m: &TraceMatrix,
    cfg: &SplitConfig,
) -> Result<(TraceMatrix, TraceMatrix)> {
    let f = cfg.calibration_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Split(format!(
            "calibration fraction {f} not in (0, 1)"
        )));
    }
    let groups = m.subject_groups();
    let n_subj = groups.len();
    if n_subj < 2 {
        return Err(Error::Split(format!(
            "need at least 2 subjects, found {n_subj}"
        )));
    }

    // Strata in a fixed order so the split does not depend on row order of genders.
    let mut strata: Vec<(Gender, Vec<&str>)> = if cfg.stratify_gender {
        [Gender::F, Gender::M, Gender::Unknown]
            .into_iter()
            .map(|g| {
                let s = groups
                    .iter()
                    .filter(|(_, idx)| m.traces[idx[0]].gender == g)
                    .map(|(s, _)| *s)
                    .collect::<Vec<_>>();
                (g, s)
            })
            .filter(|(_, s)| !s.is_empty())
            .collect()
    } else {
        vec![(Gender::Unknown, groups.iter().map(|(s, _)| *s).collect())]
    };

    let total = ((f * n_subj as f64).round() as usize).clamp(1, n_subj - 1);
    let quotas: Vec<f64> = strata.iter().map(|(_, s)| f * s.len() as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    if assigned < total {
        // Largest remainder first, stratum order breaks ties.
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - alloc[a] as f64;
            let rb = quotas[b] - alloc[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if assigned == total {
                break;
            }
            if alloc[i] < strata[i].1.len() {
                alloc[i] += 1;
                assigned += 1;
            }
        }
    } else {
        // Clamping can push the total below the floors (tiny panels).
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - alloc[a] as f64;
            let rb = quotas[b] - alloc[b] as f64;
            ra.total_cmp(&rb).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if assigned == total {
                break;
            }
            if alloc[i] > 0 {
                alloc[i] -= 1;
                assigned -= 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cal: Vec<&str> = Vec::new();
    for ((_, subjects), take) in strata.iter_mut().zip(&alloc) {
        subjects.shuffle(&mut rng);
        cal.extend(subjects.iter().take(*take));
    }
    let cal_set: HashSet<&str> = cal.iter().copied().collect();
    let test: Vec<&str> = groups
        .iter()
        .map(|(s, _)| *s)
        .filter(|s| !cal_set.contains(s))
        .collect();
    Ok((m.subset_subjects(&cal), m.subset_subjects(&test)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    /// Median over subjects of the per-subject RSD (%), `None` when no
    /// subject qualifies for that feature.
    pub per_feature_rsd: Vec<Option<f64>>,
    pub median_rsd: f64,
    pub iqi: (f64, f64),
    pub n_subjects: usize,
}

impl fmt::Display for RepeatabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1} [{:.1} ; {:.1}]",
            self.median_rsd, self.iqi.0, self.iqi.1
        )
    }
}

/// Relative standard deviation of each feature across replicates.
pub fn repeatability(m: &TraceMatrix) -> Result<RepeatabilityReport> {
    let groups: Vec<Vec<usize>> = m
        .subject_groups()
        .into_iter()
        .map(|(_, idx)| idx)
        .filter(|idx| idx.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Err(Error::Diagnostic(
            "no subject has two or more replicates".into(),
        ));
    }
    let mut per_feature = Vec::with_capacity(m.n_features);
    let mut vals = Vec::new();
    for k in 0..m.n_features {
        vals.clear();
        for idx in &groups {
            let x: Vec<f64> = idx.iter().map(|&i| m.traces[i].features[k]).collect();
            let mu = stats::mean(&x);
            if mu > 0.0 {
                vals.push(100.0 * stats::sample_sd(&x) / mu);
            }
        }
        per_feature.push((!vals.is_empty()).then(|| stats::median(&vals)));
    }
    let mut defined: Vec<f64> = per_feature.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Diagnostic(
            "every feature has zero mean in every subject".into(),
        ));
    }
    defined.sort_by(f64::total_cmp);
    Ok(RepeatabilityReport {
        median_rsd: stats::quantile_sorted(&defined, 0.5),
        iqi: (
            stats::quantile_sorted(&defined, 0.25),
            stats::quantile_sorted(&defined, 0.75),
        ),
        per_feature_rsd: per_feature,
        n_subjects: groups.len(),
    })
}
