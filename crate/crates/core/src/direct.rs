//! Direct method: two-component Gaussian mixtures for the same-source and
//! different-source distance densities, and the likelihood ratio between them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::DistanceKind;
use crate::stats;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub const EM_TOL: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;
pub const DEFAULT_RESTARTS: usize = 3;
/// Variance floor relative to the sample variance.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-6;
/// LR values are clamped to [LR_MIN, LR_MAX].
pub const LR_MAX: f64 = 1e300;
pub const LR_MIN: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    #[serde(rename = "w")]
    pub weights: [f64; 2],
    #[serde(rename = "mu")]
    pub means: [f64; 2],
    #[serde(rename = "sigma2")]
    pub variances: [f64; 2],
    #[serde(rename = "loglik")]
    pub log_likelihood: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
}

fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * z * z / var - 0.5 * var.ln() - LN_SQRT_2PI
}

impl Gmm2 {
    pub fn ln_pdf(&self, d: f64) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for c in 0..2 {
            if self.weights[c] > 0.0 {
                acc = stats::log_sum_exp(
                    acc,
                    self.weights[c].ln() + normal_ln_pdf(d, self.means[c], self.variances[c]),
                );
            }
        }
        acc
    }

    pub fn pdf(&self, d: f64) -> f64 {
        self.ln_pdf(d).exp()
    }

    pub fn component_pdf(&self, c: usize, d: f64) -> f64 {
        normal_ln_pdf(d, self.means[c], self.variances[c]).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.weights.iter().all(|w| (0.0..=1.0).contains(w))
            && (self.weights[0] + self.weights[1] - 1.0).abs() <= 1e-12
            && self.variances.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.means.iter().all(|m| m.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Fit(format!("invalid mixture parameters {self:?}")))
        }
    }
}

/// Pointwise evaluation of a fitted mixture.
pub fn gmm_pdf(g: &Gmm2, d: f64) -> f64 {
    g.pdf(d)
}

/// A univariate k-component mixture (used for the 2-component fit and the
/// BIC diagnostic).
#[derive(Debug, Clone)]
struct Mixture {
    w: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

impl Mixture {
    fn k(&self) -> usize {
        self.w.len()
    }
}

struct EmRun {
    mix: Mixture,
    loglik: f64,
    trace: Vec<f64>,
}

fn loglik(samples: &[f64], mix: &Mixture) -> f64 {
    samples
        .iter()
        .map(|&x| {
            (0..mix.k()).fold(f64::NEG_INFINITY, |acc, c| {
                if mix.w[c] > 0.0 {
                    stats::log_sum_exp(acc, mix.w[c].ln() + normal_ln_pdf(x, mix.mu[c], mix.var[c]))
                } else {
                    acc
                }
            })
        })
        .sum()
}

/// EM from a given start. Returns None when a component loses all mass.
fn em(samples: &[f64], mut mix: Mixture, var_floor: f64) -> Option<EmRun> {
    let n = samples.len();
    let k = mix.k();
    let mut resp = vec![0.0; n * k];
    let mut ll = loglik(samples, &mix);
    let mut trace = vec![ll];
    let mut lp = vec![0.0; k];
    for _ in 0..EM_MAX_ITER {
        // E step
        for (i, &x) in samples.iter().enumerate() {
            let mut m = f64::NEG_INFINITY;
            for (c, l) in lp.iter_mut().enumerate() {
                *l = if mix.w[c] > 0.0 {
                    mix.w[c].ln() + normal_ln_pdf(x, mix.mu[c], mix.var[c])
                } else {
                    f64::NEG_INFINITY
                };
                m = m.max(*l);
            }
            let mut s = 0.0;
            for l in lp.iter_mut() {
                *l = (*l - m).exp();
                s += *l;
            }
            for (r, l) in resp[i * k..(i + 1) * k].iter_mut().zip(&lp) {
                *r = l / s;
            }
        }
        // M step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk <= 1e-10 * n as f64 {
                return None;
            }
            let mu = (0..n).map(|i| resp[i * k + c] * samples[i]).sum::<f64>() / nk;
            let var = (0..n)
                .map(|i| {
                    let z = samples[i] - mu;
                    resp[i * k + c] * z * z
                })
                .sum::<f64>()
                / nk;
            mix.w[c] = nk / n as f64;
            mix.mu[c] = mu;
            mix.var[c] = var.max(var_floor);
        }
        let wsum: f64 = mix.w.iter().sum();
        mix.w.iter_mut().for_each(|w| *w /= wsum);
        let next = loglik(samples, &mix);
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < EM_TOL {
            break;
        }
    }
    Some(EmRun {
        mix,
        loglik: ll,
        trace,
    })
}

fn sample_stats(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Fit("non-finite sample".into()));
    }
    let mean = stats::mean(samples);
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / samples.len() as f64;
    if var <= 0.0 {
        return Err(Error::Fit("samples have zero spread".into()));
    }
    Ok((mean, var))
}

/// Random start: means at distinct random sample quantiles, variances at the
/// sample variance, equal weights.
fn init_mixture(sorted: &[f64], k: usize, var: f64, rng: &mut ChaCha8Rng) -> Mixture {
    let n = sorted.len();
    let mut mu: Vec<f64> = Vec::with_capacity(k);
    let mut attempts = 0;
    while mu.len() < k {
        let q: f64 = rng.random();
        let v = sorted[((q * n as f64) as usize).min(n - 1)];
        attempts += 1;
        if !mu.contains(&v) || attempts > 64 {
            mu.push(v);
        }
    }
    Mixture {
        w: vec![1.0 / k as f64; k],
        mu,
        var: vec![var; k],
    }
}

/// Fitted mixture plus the per-iteration log-likelihood of every restart.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: Gmm2,
    pub selected_restart: usize,
    pub traces: Vec<Option<Vec<f64>>>,
}

pub fn fit_gmm2(samples: &[f64], restarts: usize, seed: u64) -> Result<Gmm2> {
    fit_gmm2_traced(samples, restarts, seed).map(|f| f.model)
}

/// EM with `restarts` seeded starts; the run with the largest final
/// log-likelihood wins, the lowest restart index on ties.
pub fn fit_gmm2_traced(samples: &[f64], restarts: usize, seed: u64) -> Result<GmmFit> {
    if restarts == 0 {
        return Err(Error::Fit("at least one restart required".into()));
    }
    let (_, var) = sample_stats(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = VARIANCE_FLOOR_FACTOR * var;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Mixture> = (0..restarts)
        .map(|_| init_mixture(&sorted, 2, var, &mut rng))
        .collect();
    let runs: Vec<Option<EmRun>> = starts.into_iter().map(|s| em(samples, s, floor)).collect();
    let mut best: Option<(usize, &EmRun)> = None;
    for (r, run) in runs.iter().enumerate() {
        if let Some(run) = run {
            if best.is_none_or(|(_, b)| run.loglik > b.loglik) {
                best = Some((r, run));
            }
        }
    }
    let (selected, run) =
        best.ok_or_else(|| Error::DegenerateFit(format!("all {restarts} restarts collapsed")))?;
    let mut weights = [run.mix.w[0], run.mix.w[1]];
    weights[1] = 1.0 - weights[0];
    let model = Gmm2 {
        weights,
        means: [run.mix.mu[0], run.mix.mu[1]],
        variances: [run.mix.var[0], run.mix.var[1]],
        log_likelihood: run.loglik,
        n_samples: samples.len(),
    };
    Ok(GmmFit {
        model,
        selected_restart: selected,
        traces: runs.into_iter().map(|r| r.map(|r| r.trace)).collect(),
    })
}

/// BIC of the best k-component fit, k = 1..=3. Reported, not acted upon.
pub fn bic_by_components(samples: &[f64], restarts: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let (mean, var) = sample_stats(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut out = Vec::new();
    for k in 1..=3usize {
        let ll = if k == 1 {
            loglik(
                samples,
                &Mixture {
                    w: vec![1.0],
                    mu: vec![mean],
                    var: vec![var],
                },
            )
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            (0..restarts.max(1))
                .filter_map(|_| {
                    em(
                        samples,
                        init_mixture(&sorted, k, var, &mut rng),
                        VARIANCE_FLOOR_FACTOR * var,
                    )
                })
                .map(|r| r.loglik)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let params = (3 * k - 1) as f64;
        out.push((k, -2.0 * ll + params * n.ln()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectModel {
    pub distance_kind: DistanceKind,
    pub feature_subset: Option<Vec<usize>>,
    pub model_ss: Gmm2,
    pub model_ds: Gmm2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrFlag {
    Finite,
    /// The LR exceeded `LR_MAX` (denominator underflow) and was clamped.
    ClampedHigh,
    /// The LR fell below `LR_MIN` and was clamped.
    ClampedLow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrValue {
    pub lr: f64,
    /// Unclamped natural log of the LR.
    pub ln_lr: f64,
    pub flag: LrFlag,
}

impl LrValue {
    pub fn from_ln(ln_lr: f64) -> LrValue {
        let (lr, flag) = if ln_lr > LR_MAX.ln() {
            (LR_MAX, LrFlag::ClampedHigh)
        } else if ln_lr < LR_MIN.ln() {
            (LR_MIN, LrFlag::ClampedLow)
        } else {
            (ln_lr.exp(), LrFlag::Finite)
        };
        LrValue { lr, ln_lr, flag }
    }

    pub fn log10(&self) -> f64 {
        self.ln_lr / std::f64::consts::LN_10
    }
}

impl DirectModel {
    pub fn fit(
        ss: &[f64],
        ds: &[f64],
        kind: DistanceKind,
        feature_subset: Option<Vec<usize>>,
        restarts: usize,
        seed: u64,
    ) -> Result<DirectModel> {
        if !kind.is_scalar() {
            return Err(Error::Invalid(
                "the direct method needs a scalar distance".into(),
            ));
        }
        Ok(DirectModel {
            distance_kind: kind,
            feature_subset,
            model_ss: fit_gmm2(ss, restarts, seed)?,
            model_ds: fit_gmm2(ds, restarts, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?,
        })
    }

    pub fn ln_lr(&self, d: f64) -> Result<f64> {
        let a = self.model_ss.ln_pdf(d);
        let b = self.model_ds.ln_pdf(d);
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            return Err(Error::IndeterminateLr(d));
        }
        if b == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok(a - b)
    }

    /// Likelihood ratio f(d|ss) / f(d|ds), evaluated in log space.
    pub fn lr(&self, d: f64) -> Result<LrValue> {
        self.ln_lr(d).map(LrValue::from_ln)
    }

    /// Posterior P(ss | d) for prior P(ss) = `prior_ss`.
    pub fn posterior(&self, d: f64, prior_ss: f64) -> Result<f64> {
        check_prior(prior_ss)?;
        let l = self.ln_lr(d)?;
        Ok(stats::sigmoid(l + stats::logit(prior_ss)))
    }

    /// Whether the LR is monotone over a grid spanning `[lo, hi]`.
    pub fn lr_monotonicity(&self, lo: f64, hi: f64, points: usize) -> Monotonicity {
        let points = points.max(2);
        let vals: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .filter_map(|d| self.ln_lr(d).ok())
            .collect();
        let inc = vals.windows(2).all(|w| w[1] >= w[0]);
        let dec = vals.windows(2).all(|w| w[1] <= w[0]);
        match (inc, dec) {
            (true, _) => Monotonicity::NonDecreasing,
            (_, true) => Monotonicity::NonIncreasing,
            _ => Monotonicity::NonMonotone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
    NonMonotone,
}

pub(crate) fn check_prior(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Invalid(format!("prior {p} not in (0, 1)")));
    }
    Ok(())
}

pub fn direct_lr(model: &DirectModel, d: f64) -> Result<LrValue> {
    model.lr(d)
}

pub fn direct_posterior(model: &DirectModel, d: f64, prior_ss: f64) -> Result<f64> {
    model.posterior(d, prior_ss)
}
