//! Synthetic trace panels with a known subject/replicate structure and a
//! known set of informative features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Gender, Mode, Trace, TraceMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub n_subjects: usize,
    /// Replicate count to number of subjects sampled that many times.
    pub replicate_profile: BTreeMap<usize, usize>,
    pub n_features: usize,
    pub n_informative: usize,
    /// Spread of subject means around the population mean (log scale).
    pub between_subject_sd: f64,
    /// Replicate noise around the subject mean (log scale).
    pub within_subject_sd: f64,
    /// Probability that a compound is absent.
    pub sparsity: f64,
    /// Probability that a subject is female.
    pub gender_fraction: f64,
    /// In [0, 1). Informative strengths decay linearly from 1 down to
    /// `1 - heterogeneity`; 0 makes all informative features equal.
    #[serde(default)]
    pub heterogeneity: f64,
    pub seed: u64,
}

impl PanelConfig {
    /// `n_subjects` subjects with `replicates` traces each.
    pub fn uniform(
        n_subjects: usize,
        replicates: usize,
        n_features: usize,
        n_informative: usize,
    ) -> Self {
        PanelConfig {
            n_subjects,
            replicate_profile: BTreeMap::from([(replicates, n_subjects)]),
            n_features,
            n_informative,
            between_subject_sd: 1.0,
            within_subject_sd: 0.3,
            sparsity: 0.0,
            gender_fraction: 0.5,
            heterogeneity: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.replicate_profile.values().sum();
        if total != self.n_subjects {
            return Err(Error::Config(format!(
                "replicate profile covers {total} subjects, expected {}",
                self.n_subjects
            )));
        }
        if self.replicate_profile.contains_key(&0) {
            return Err(Error::Config("replicate counts must be positive".into()));
        }
        if self.n_subjects == 0 || self.n_features == 0 {
            return Err(Error::Config("panel needs subjects and features".into()));
        }
        if self.n_informative > self.n_features {
            return Err(Error::Config(format!(
                "n_informative {} exceeds n_features {}",
                self.n_informative, self.n_features
            )));
        }
        if !(self.between_subject_sd > 0.0 && self.between_subject_sd.is_finite()) {
            return Err(Error::Config("between_subject_sd must be positive".into()));
        }
        if !(self.within_subject_sd >= 0.0 && self.within_subject_sd.is_finite()) {
            return Err(Error::Config(
                "within_subject_sd must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config("sparsity must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gender_fraction) {
            return Err(Error::Config("gender_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.heterogeneity) {
            return Err(Error::Config("heterogeneity must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_traces(&self) -> usize {
        self.replicate_profile.iter().map(|(r, s)| r * s).sum()
    }

    pub fn n_same_source_pairs(&self) -> usize {
        self.replicate_profile
            .iter()
            .map(|(r, s)| s * r * (r - 1) / 2)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub matrix: TraceMatrix,
    /// Sorted indices of the informative features.
    pub informative: Vec<usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a raw panel; the config is embedded in its CSV header via
/// [`panel_comments`].
pub fn generate_panel(cfg: &PanelConfig) -> Result<SynthPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_features;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut strength = vec![0.0; n];
    for (r, &k) in perm.iter().take(cfg.n_informative).enumerate() {
        let frac = if cfg.n_informative > 1 {
            r as f64 / (cfg.n_informative - 1) as f64
        } else {
            0.0
        };
        strength[k] = 1.0 - cfg.heterogeneity * frac;
    }
    let mut informative: Vec<usize> = perm[..cfg.n_informative].to_vec();
    informative.sort_unstable();

    let population: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();

    let mut counts: Vec<usize> = cfg
        .replicate_profile
        .iter()
        .flat_map(|(&r, &s)| std::iter::repeat_n(r, s))
        .collect();
    counts.shuffle(&mut rng);

    let width = cfg.n_subjects.to_string().len().max(4);
    let mut traces = Vec::with_capacity(cfg.n_traces());
    let mut latent = vec![0.0; n];
    let mut present = vec![true; n];
    for (s, &reps) in counts.iter().enumerate() {
        let subject_id = format!("S{:0width$}", s + 1);
        let gender = if rng.random::<f64>() < cfg.gender_fraction {
            Gender::F
        } else {
            Gender::M
        };
        let age = rng.random_range(18..=80u32);
        for k in 0..n {
            latent[k] = population[k];
            present[k] = true;
            if strength[k] > 0.0 {
                latent[k] += strength[k] * cfg.between_subject_sd * normal(&mut rng);
                present[k] = rng.random::<f64>() >= cfg.sparsity;
            }
        }
        for r in 0..reps {
            let features = (0..n)
                .map(|k| {
                    let noise = cfg.within_subject_sd * normal(&mut rng);
                    let absent = if strength[k] > 0.0 {
                        !present[k]
                    } else {
                        rng.random::<f64>() < cfg.sparsity
                    };
                    if absent {
                        0.0
                    } else {
                        (latent[k] + noise).exp()
                    }
                })
                .collect();
            traces.push(Trace {
                subject_id: subject_id.clone(),
                replicate_id: format!("R{}", r + 1),
                gender,
                age: Some(age),
                features,
            });
        }
    }
    let matrix = TraceMatrix::new(traces, n, None, Mode::Raw)?;
    Ok(SynthPanel {
        matrix,
        informative,
    })
}

/// Header comments recording the generating config.
pub fn panel_comments(cfg: &PanelConfig) -> Result<Vec<(&'static str, String)>> {
    Ok(vec![("synth", serde_json::to_string(cfg)?)])
}
