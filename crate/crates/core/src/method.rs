//! The three likelihood-ratio methods behind one fit/score interface.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::direct::{DirectModel, LrValue, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::eval::ScoredPairs;
use crate::logistic::{
    fit_logistic, DenseDesign, FitDiagnostics, LogisticModel, LogisticOptions, PairDesign,
};
use crate::pairs::{scalar_distances, spearman_distance, DistanceKind, Pair, PairSet};
use crate::trace::TraceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Direct,
    IndirectScalar,
    IndirectVectorial,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Direct => "direct",
            MethodKind::IndirectScalar => "indirect-scalar",
            MethodKind::IndirectVectorial => "indirect-vectorial",
        })
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "direct" => Ok(MethodKind::Direct),
            "indirect-scalar" => Ok(MethodKind::IndirectScalar),
            "indirect-vectorial" => Ok(MethodKind::IndirectVectorial),
            other => Err(Error::Invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: MethodKind,
    pub distance: DistanceKind,
    pub feature_subset: Option<Vec<usize>>,
    /// EM restarts for the direct method.
    pub restarts: usize,
    pub seed: u64,
    pub logistic: LogisticOptions,
    /// Keep each different-source pair with this probability when fitting.
    /// Class proportions stay at their full-set values.
    pub ds_subsample: Option<f64>,
}

impl MethodConfig {
    pub fn new(method: MethodKind, distance: DistanceKind) -> Result<Self> {
        let cfg = MethodConfig {
            method,
            distance,
            feature_subset: None,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            logistic: LogisticOptions::default(),
            ds_subsample: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The conventional pairing: Spearman for the scalar methods, vectorial
    /// for the vectorial one.
    pub fn standard(method: MethodKind) -> Self {
        let distance = match method {
            MethodKind::IndirectVectorial => DistanceKind::Vectorial,
            _ => DistanceKind::Spearman,
        };
        MethodConfig::new(method, distance).expect("standard pairing is valid")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_features(mut self, subset: Option<Vec<usize>>) -> Self {
        self.feature_subset = subset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.method, self.distance) {
            (MethodKind::Direct, DistanceKind::Vectorial) => Err(Error::Invalid(
                "the direct method is only defined for scalar distances".into(),
            )),
            (MethodKind::IndirectScalar, DistanceKind::Vectorial) => Err(Error::Invalid(
                "indirect-scalar needs a scalar distance".into(),
            )),
            (MethodKind::IndirectVectorial, d) if d != DistanceKind::Vectorial => Err(
                Error::Invalid("indirect-vectorial needs the vectorial distance".into()),
            ),
            _ => {
                if let Some(r) = self.ds_subsample {
                    if !(r > 0.0 && r <= 1.0) {
                        return Err(Error::Invalid(format!("subsample rate {r} not in (0, 1]")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn feature_count(&self, n_features: usize) -> usize {
        self.feature_subset.as_ref().map_or(n_features, |s| s.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectModel {
    pub distance_kind: DistanceKind,
    pub feature_subset: Option<Vec<usize>>,
    pub logistic: LogisticModel,
    #[serde(skip)]
    pub diagnostics: Option<FitDiagnostics>,
}

/// A fitted method, ready to score trace pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Direct(DirectModel),
    Indirect(IndirectModel),
}

fn subsample(pairs: &[Pair], rate: Option<f64>, seed: u64) -> Vec<Pair> {
    match rate {
        None => pairs.to_vec(),
        Some(r) if r >= 1.0 => pairs.to_vec(),
        Some(r) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d5d5);
            pairs
                .iter()
                .filter(|p| p.label.is_ss() || rng.random::<f64>() < r)
                .copied()
                .collect()
        }
    }
}

impl FittedModel {
    pub fn fit(m: &TraceMatrix, p: &PairSet, cfg: &MethodConfig) -> Result<FittedModel> {
        cfg.validate()?;
        let subset = cfg.feature_subset.as_deref();
        let full_prop = p.n_ss() as f64 / p.len() as f64;
        match cfg.method {
            MethodKind::Direct | MethodKind::IndirectScalar => {
                let d = scalar_distances(m, p, cfg.distance, subset)?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d5d5);
                let keep: Vec<bool> = p
                    .pairs()
                    .iter()
                    .map(|pr| match cfg.ds_subsample {
                        Some(r) if r < 1.0 && !pr.label.is_ss() => rng.random::<f64>() < r,
                        _ => true,
                    })
                    .collect();
                if cfg.method == MethodKind::Direct {
                    let (mut ss, mut ds) = (Vec::new(), Vec::new());
                    for ((pr, &v), &k) in p.pairs().iter().zip(&d).zip(&keep) {
                        if !k {
                            continue;
                        }
                        if pr.label.is_ss() {
                            ss.push(v)
                        } else {
                            ds.push(v)
                        }
                    }
                    Ok(FittedModel::Direct(DirectModel::fit(
                        &ss,
                        &ds,
                        cfg.distance,
                        cfg.feature_subset.clone(),
                        cfg.restarts,
                        cfg.seed,
                    )?))
                } else {
                    let (x, y): (Vec<f64>, Vec<bool>) = p
                        .pairs()
                        .iter()
                        .zip(&d)
                        .zip(&keep)
                        .filter(|(_, k)| **k)
                        .map(|((pr, &v), _)| (v, pr.label.is_ss()))
                        .unzip();
                    let mut opts = cfg.logistic;
                    if cfg.ds_subsample.is_some() && opts.class_proportion.is_none() {
                        opts.class_proportion = Some(full_prop);
                    }
                    let fit = fit_logistic(&DenseDesign::scalar(&x, &y)?, &opts)?;
                    Ok(FittedModel::Indirect(IndirectModel {
                        distance_kind: cfg.distance,
                        feature_subset: cfg.feature_subset.clone(),
                        logistic: fit.model,
                        diagnostics: Some(fit.diagnostics),
                    }))
                }
            }
            MethodKind::IndirectVectorial => {
                if p.fingerprint() != m.fingerprint() {
                    return Err(Error::StalePairSet {
                        expected: p.fingerprint(),
                        got: m.fingerprint(),
                    });
                }
                let pairs = subsample(p.pairs(), cfg.ds_subsample, cfg.seed);
                let design = PairDesign::new(m, &pairs, subset)?;
                let mut opts = cfg.logistic;
                if cfg.ds_subsample.is_some() && opts.class_proportion.is_none() {
                    opts.class_proportion = Some(full_prop);
                }
                let fit = fit_logistic(&design, &opts)?;
                Ok(FittedModel::Indirect(IndirectModel {
                    distance_kind: DistanceKind::Vectorial,
                    feature_subset: cfg.feature_subset.clone(),
                    logistic: fit.model,
                    diagnostics: Some(fit.diagnostics),
                }))
            }
        }
    }

    pub fn distance_kind(&self) -> DistanceKind {
        match self {
            FittedModel::Direct(d) => d.distance_kind,
            FittedModel::Indirect(i) => i.distance_kind,
        }
    }

    pub fn feature_subset(&self) -> Option<&[usize]> {
        match self {
            FittedModel::Direct(d) => d.feature_subset.as_deref(),
            FittedModel::Indirect(i) => i.feature_subset.as_deref(),
        }
    }

    pub fn method(&self) -> MethodKind {
        match self {
            FittedModel::Direct(_) => MethodKind::Direct,
            FittedModel::Indirect(i) if i.distance_kind == DistanceKind::Vectorial => {
                MethodKind::IndirectVectorial
            }
            FittedModel::Indirect(_) => MethodKind::IndirectScalar,
        }
    }

    /// ln LR of a distance (length 1 for scalar distances).
    pub fn ln_lr_distance(&self, d: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Direct(m) => {
                if d.len() != 1 {
                    return Err(Error::Dimension {
                        expected: 1,
                        got: d.len(),
                    });
                }
                m.ln_lr(d[0])
            }
            FittedModel::Indirect(m) => m.logistic.ln_lr(d),
        }
    }

    /// Distance between two traces under this model's distance and subset.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: y.len(),
            });
        }
        let pick = |v: &[f64]| -> Result<Vec<f64>> {
            match self.feature_subset() {
                None => Ok(v.to_vec()),
                Some(s) => s
                    .iter()
                    .map(|&k| {
                        v.get(k).copied().ok_or(Error::Dimension {
                            expected: k + 1,
                            got: v.len(),
                        })
                    })
                    .collect(),
            }
        };
        let (a, b) = (pick(x)?, pick(y)?);
        Ok(match self.distance_kind() {
            DistanceKind::Euclidean => vec![crate::pairs::euclidean(&a, &b)?],
            DistanceKind::Pearson => vec![crate::pairs::pearson_distance(&a, &b)?],
            DistanceKind::Spearman => vec![spearman_distance(&a, &b)?],
            DistanceKind::Vectorial => crate::pairs::vectorial_distance(&a, &b)?,
        })
    }

    /// LR for one pair of traces.
    pub fn compare(&self, x: &[f64], y: &[f64]) -> Result<LrValue> {
        let d = self.distance(x, y)?;
        self.ln_lr_distance(&d).map(LrValue::from_ln)
    }

    /// Posterior for one pair of traces; equal to the literal posterior
    /// formula of each method.
    pub fn posterior(&self, x: &[f64], y: &[f64], prior_ss: f64) -> Result<f64> {
        let d = self.distance(x, y)?;
        match self {
            FittedModel::Direct(m) => m.posterior(d[0], prior_ss),
            FittedModel::Indirect(m) => m.logistic.posterior(&d, prior_ss),
        }
    }

    /// ln LR for every pair, split by label.
    pub fn score_pairs(&self, m: &TraceMatrix, p: &PairSet) -> Result<ScoredPairs> {
        let subset = self.feature_subset();
        let scores: Vec<f64> = match self {
            FittedModel::Direct(model) => scalar_distances(m, p, model.distance_kind, subset)?
                .into_iter()
                .map(|d| model.ln_lr(d))
                .collect::<Result<_>>()?,
            FittedModel::Indirect(model) if model.distance_kind.is_scalar() => {
                let c = model.logistic.ln_proportion_correction();
                let (a, b) = (model.logistic.a[0], model.logistic.b);
                scalar_distances(m, p, model.distance_kind, subset)?
                    .into_iter()
                    .map(|d| a * d + b + c)
                    .collect()
            }
            FittedModel::Indirect(model) => {
                if p.fingerprint() != m.fingerprint() {
                    return Err(Error::StalePairSet {
                        expected: p.fingerprint(),
                        got: m.fingerprint(),
                    });
                }
                crate::pairs::check_subset(m, subset)?;
                let width = subset.map_or(m.n_features(), |s| s.len());
                if width != model.logistic.a.len() {
                    return Err(Error::Dimension {
                        expected: model.logistic.a.len(),
                        got: width,
                    });
                }
                let c = model.logistic.ln_proportion_correction();
                use rayon::prelude::*;
                p.pairs()
                    .par_chunks(4096)
                    .flat_map_iter(|chunk| {
                        let mut buf = vec![0.0; chunk.len() * width];
                        crate::pairs::vectorial_batch(m, chunk, subset, &mut buf);
                        buf.chunks_exact(width)
                            .map(|d| {
                                d.iter()
                                    .zip(&model.logistic.a)
                                    .map(|(x, a)| x * a)
                                    .sum::<f64>()
                                    + model.logistic.b
                                    + c
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }
        };
        let mut out = ScoredPairs::default();
        for (pr, s) in p.pairs().iter().zip(scores) {
            if pr.label.is_ss() {
                out.ss.push(s);
            } else {
                out.ds.push(s);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_combinations() {
        assert!(MethodConfig::new(MethodKind::Direct, DistanceKind::Vectorial).is_err());
        assert!(MethodConfig::new(MethodKind::IndirectScalar, DistanceKind::Vectorial).is_err());
        assert!(MethodConfig::new(MethodKind::IndirectVectorial, DistanceKind::Spearman).is_err());
        assert!(MethodConfig::new(MethodKind::Direct, DistanceKind::Euclidean).is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            MethodKind::Direct,
            MethodKind::IndirectScalar,
            MethodKind::IndirectVectorial,
        ] {
            assert_eq!(m.to_string().parse::<MethodKind>().unwrap(), m);
        }
        assert_eq!(
            "indirect_scalar".parse::<MethodKind>().unwrap(),
            MethodKind::IndirectScalar
        );
    }
}
