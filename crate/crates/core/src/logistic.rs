//! Indirect method: logistic regression on distances, with the posterior and
//! likelihood ratio recovered through the calibration class proportions.
//!
//! The fit maximizes Σ [y·η − ln(1 + e^η)] − (ridge/2)·‖a‖², η = aᵀd + b,
//! by Newton steps (iteratively reweighted least squares). Rows are streamed
//! in fixed-size batches so vectorial designs over hundreds of thousands of
//! pairs never need to be materialized; each batch's contribution to the
//! Hessian is one GEMM, and batch partials are summed in batch order so the
//! result does not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{check_prior, LrValue};
use crate::error::{Error, Result};
use crate::pairs::{vectorial_batch, Label, Pair};
use crate::stats;
use crate::trace::TraceMatrix;

/// Source of design rows: `width` distance features and a label per sample.
pub trait Design: Sync {
    fn n_samples(&self) -> usize;
    fn width(&self) -> usize;
    fn is_ss(&self, i: usize) -> bool;
    /// Write rows `start..start + out.len() / width` into `out`, row-major.
    fn fill_rows(&self, start: usize, out: &mut [f64]);
}

/// In-memory design, row-major.
#[derive(Debug, Clone)]
pub struct DenseDesign {
    x: Vec<f64>,
    y: Vec<bool>,
    width: usize,
}

impl DenseDesign {
    pub fn new(x: Vec<f64>, y: Vec<bool>, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Fit("design needs at least one feature".into()));
        }
        if x.len() != y.len() * width {
            return Err(Error::Dimension {
                expected: y.len() * width,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite design value".into()));
        }
        Ok(DenseDesign { x, y, width })
    }

    /// One scalar feature per sample.
    pub fn scalar(d: &[f64], labels: &[bool]) -> Result<Self> {
        DenseDesign::new(d.to_vec(), labels.to_vec(), 1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }
}

impl Design for DenseDesign {
    fn n_samples(&self) -> usize {
        self.y.len()
    }
    fn width(&self) -> usize {
        self.width
    }
    fn is_ss(&self, i: usize) -> bool {
        self.y[i]
    }
    fn fill_rows(&self, start: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.x[start * self.width..start * self.width + out.len()]);
    }
}

/// Vectorial distances of trace pairs, computed on demand.
pub struct PairDesign<'a> {
    matrix: &'a TraceMatrix,
    pairs: &'a [Pair],
    subset: Option<&'a [usize]>,
}

impl<'a> PairDesign<'a> {
    pub fn new(
        matrix: &'a TraceMatrix,
        pairs: &'a [Pair],
        subset: Option<&'a [usize]>,
    ) -> Result<Self> {
        crate::pairs::check_subset(matrix, subset)?;
        Ok(PairDesign {
            matrix,
            pairs,
            subset,
        })
    }
}

impl Design for PairDesign<'_> {
    fn n_samples(&self) -> usize {
        self.pairs.len()
    }
    fn width(&self) -> usize {
        self.subset.map_or(self.matrix.n_features(), |s| s.len())
    }
    fn is_ss(&self, i: usize) -> bool {
        self.pairs[i].label == Label::Ss
    }
    fn fill_rows(&self, start: usize, out: &mut [f64]) {
        let rows = out.len() / self.width();
        vectorial_batch(
            self.matrix,
            &self.pairs[start..start + rows],
            self.subset,
            out,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Overrides the same-source proportion f_ss, e.g. when different-source
    /// pairs were subsampled before fitting.
    pub class_proportion: Option<f64>,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            ridge: 0.0,
            max_iter: 100,
            tol: 1e-8,
            class_proportion: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticMode {
    Scalar,
    Vectorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub mode: LogisticMode,
    pub a: Vec<f64>,
    pub b: f64,
    pub f_ss: f64,
    pub f_ds: f64,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Euclidean norm of the per-sample gradient at the returned parameters.
    pub gradient_norm: f64,
    pub log_likelihood: f64,
    /// Coefficients held at zero because their feature is constant.
    pub frozen: Vec<usize>,
    /// Iterations that fell back to preconditioned gradient ascent.
    pub gradient_steps: usize,
    /// Coefficient norm kept growing while the likelihood approached its
    /// supremum: the classes look (quasi-)completely separated.
    pub separation_suspected: bool,
    pub n_ss: usize,
    pub n_ds: usize,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub diagnostics: FitDiagnostics,
}

const BATCH_ROWS: usize = 2048;

/// Per-pass accumulation over the design.
struct Pass {
    loglik: f64,
    max_resid: f64,
    grad: Vec<f64>,
    hess: Option<Vec<f64>>,
}

/// Active-column layout: design columns `cols` followed by the intercept.
struct Layout {
    cols: Vec<usize>,
    width: usize,
}

impl Layout {
    fn p(&self) -> usize {
        self.cols.len() + 1
    }
}

fn batch_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BATCH_ROWS))
        .map(|b| {
            let s = b * BATCH_ROWS;
            (s, (s + BATCH_ROWS).min(n))
        })
        .collect()
}

fn batch_pass<D: Design + ?Sized>(
    design: &D,
    layout: &Layout,
    theta: &[f64],
    range: (usize, usize),
    want_hess: bool,
) -> Pass {
    let p = layout.p();
    let rows = range.1 - range.0;
    let mut raw = vec![0.0; rows * layout.width];
    design.fill_rows(range.0, &mut raw);
    let mut grad = vec![0.0; p];
    let mut loglik = 0.0;
    let mut max_resid: f64 = 0.0;
    let mut z = if want_hess {
        vec![0.0; rows * p]
    } else {
        Vec::new()
    };
    for r in 0..rows {
        let x = &raw[r * layout.width..(r + 1) * layout.width];
        let mut eta = theta[p - 1];
        for (c, &col) in layout.cols.iter().enumerate() {
            eta += theta[c] * x[col];
        }
        let y = if design.is_ss(range.0 + r) { 1.0 } else { 0.0 };
        loglik += y * eta - stats::softplus(eta);
        let mu = stats::sigmoid(eta);
        let resid = y - mu;
        max_resid = max_resid.max(resid.abs());
        for (c, &col) in layout.cols.iter().enumerate() {
            grad[c] += resid * x[col];
        }
        grad[p - 1] += resid;
        if want_hess {
            let sw = (mu * (1.0 - mu)).sqrt();
            let zr = &mut z[r * p..(r + 1) * p];
            for (c, &col) in layout.cols.iter().enumerate() {
                zr[c] = sw * x[col];
            }
            zr[p - 1] = sw;
        }
    }
    let hess = want_hess.then(|| {
        let mut h = vec![0.0; p * p];
        // H = Zᵀ Z, Z is rows × p row-major
        unsafe {
            matrixmultiply::dgemm(
                p,
                rows,
                p,
                1.0,
                z.as_ptr(),
                1,
                p as isize,
                z.as_ptr(),
                p as isize,
                1,
                0.0,
                h.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        h
    });
    Pass {
        loglik,
        max_resid,
        grad,
        hess,
    }
}

fn full_pass<D: Design + ?Sized>(
    design: &D,
    layout: &Layout,
    theta: &[f64],
    want_hess: bool,
) -> Pass {
    let p = layout.p();
    let ranges = batch_ranges(design.n_samples());
    let mut total = Pass {
        loglik: 0.0,
        max_resid: 0.0,
        grad: vec![0.0; p],
        hess: want_hess.then(|| vec![0.0; p * p]),
    };
    let group = rayon::current_num_threads().max(1);
    for chunk in ranges.chunks(group) {
        let parts: Vec<Pass> = chunk
            .par_iter()
            .map(|&r| batch_pass(design, layout, theta, r, want_hess))
            .collect();
        // Fixed batch order keeps the sums reproducible.
        for part in parts {
            total.loglik += part.loglik;
            total.max_resid = total.max_resid.max(part.max_resid);
            for (g, v) in total.grad.iter_mut().zip(&part.grad) {
                *g += v;
            }
            if let (Some(h), Some(ph)) = (total.hess.as_mut(), part.hess.as_ref()) {
                for (a, b) in h.iter_mut().zip(ph) {
                    *a += b;
                }
            }
        }
    }
    total
}

fn penalize(pass: &mut Pass, theta: &[f64], ridge: f64) {
    if ridge <= 0.0 {
        return;
    }
    let p = theta.len();
    for c in 0..p - 1 {
        pass.loglik -= 0.5 * ridge * theta[c] * theta[c];
        pass.grad[c] -= ridge * theta[c];
        if let Some(h) = pass.hess.as_mut() {
            h[c * p + c] += ridge;
        }
    }
}

/// Solve H x = g for symmetric positive definite H (Jacobi-scaled Cholesky).
/// Returns None when H is not numerically positive definite.
fn spd_solve(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let p = g.len();
    let scale: Vec<f64> = (0..p)
        .map(|i| {
            let d = h[i * p + i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return None;
    }
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = h[i * p + j] * scale[i] * scale[j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 1e-13 {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y: Vec<f64> = (0..p).map(|i| g[i] * scale[i]).collect();
    for i in 0..p {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let x: Vec<f64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fit by IRLS. Labels: same-source = 1.
pub fn fit_logistic<D: Design + ?Sized>(design: &D, opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = design.n_samples();
    let m = design.width();
    if m == 0 {
        return Err(Error::Fit("design needs at least one feature".into()));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::Fit(format!(
            "ridge must be >= 0, got {}",
            opts.ridge
        )));
    }
    let n_ss = (0..n).filter(|&i| design.is_ss(i)).count();
    let n_ds = n - n_ss;
    if n_ss == 0 || n_ds == 0 {
        return Err(Error::Fit(format!(
            "both classes required (same-source {n_ss}, different-source {n_ds})"
        )));
    }
    let f_ss = match opts.class_proportion {
        Some(f) if f > 0.0 && f < 1.0 => f,
        Some(f) => return Err(Error::Fit(format!("class proportion {f} not in (0, 1)"))),
        None => n_ss as f64 / n as f64,
    };

    // Constant columns carry no information and would make the Hessian
    // singular (collinear with the intercept); hold them at zero.
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for (s, e) in batch_ranges(n) {
        let mut buf = vec![0.0; (e - s) * m];
        design.fill_rows(s, &mut buf);
        for row in buf.chunks_exact(m) {
            for k in 0..m {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
    }
    if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite design value".into()));
    }
    let frozen: Vec<usize> = (0..m).filter(|&k| lo[k] == hi[k]).collect();
    let layout = Layout {
        cols: (0..m).filter(|&k| lo[k] != hi[k]).collect(),
        width: m,
    };
    let p = layout.p();

    let mut theta = vec![0.0; p];
    theta[p - 1] = (n_ss as f64 / n_ds as f64).ln();
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_steps = 0;
    let mut norms = Vec::new();
    let mut pass = full_pass(design, &layout, &theta, true);
    penalize(&mut pass, &theta, opts.ridge);

    while iterations < opts.max_iter {
        let gnorm = norm(&pass.grad) / n as f64;
        if gnorm < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let hess = pass.hess.as_ref().expect("hessian requested");
        let (dir, newton) = match spd_solve(hess, &pass.grad) {
            Some(d) => (d, true),
            None => {
                gradient_steps += 1;
                // diagonally preconditioned ascent direction
                let d = (0..p)
                    .map(|i| {
                        let h = hess[i * p + i];
                        pass.grad[i] / if h > 1e-12 { h } else { 1.0 }
                    })
                    .collect();
                (d, false)
            }
        };
        let slope: f64 = dir.iter().zip(&pass.grad).map(|(a, b)| a * b).sum();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let mut trial = full_pass(design, &layout, &cand, false);
            penalize(&mut trial, &cand, opts.ridge);
            // Armijo for gradient steps; Newton steps only need no loss
            // beyond rounding.
            let need = if newton {
                pass.loglik - 1e-12 * pass.loglik.abs().max(1.0)
            } else {
                pass.loglik + 1e-4 * step * slope
            };
            if trial.loglik >= need {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent possible at working precision.
            break;
        };
        theta = next;
        norms.push(norm(&theta[..p - 1]));
        pass = full_pass(design, &layout, &theta, true);
        penalize(&mut pass, &theta, opts.ridge);
    }
    if !converged {
        converged = norm(&pass.grad) / (n as f64) < opts.tol;
    }

    // Every sample fitted almost exactly means the likelihood has no finite
    // maximizer: the gradient vanishes only because the coefficients diverge.
    let saturated = pass.max_resid < 1e-3 && opts.ridge == 0.0;
    let growing =
        !converged && norms.len() >= 5 && norms.windows(2).rev().take(4).all(|w| w[1] > w[0]);
    let separation_suspected = saturated || growing;
    if separation_suspected {
        converged = false;
    }

    let mut a = vec![0.0; m];
    for (c, &col) in layout.cols.iter().enumerate() {
        a[col] = theta[c];
    }
    let model = LogisticModel {
        mode: if m == 1 {
            LogisticMode::Scalar
        } else {
            LogisticMode::Vectorial
        },
        a,
        b: theta[p - 1],
        f_ss,
        f_ds: 1.0 - f_ss,
        ridge: opts.ridge,
        converged,
        iterations,
    };
    Ok(LogisticFit {
        model,
        diagnostics: FitDiagnostics {
            gradient_norm: norm(&pass.grad) / n as f64,
            log_likelihood: pass.loglik,
            frozen,
            gradient_steps,
            separation_suspected,
            n_ss,
            n_ds,
        },
    })
}

impl LogisticModel {
    /// Affine score aᵀd + b.
    pub fn score(&self, d: &[f64]) -> Result<f64> {
        if d.len() != self.a.len() {
            return Err(Error::Dimension {
                expected: self.a.len(),
                got: d.len(),
            });
        }
        Ok(self.a.iter().zip(d).map(|(a, x)| a * x).sum::<f64>() + self.b)
    }

    /// Calibration-prevalence posterior 1 / (1 + exp(-(aᵀd + b))).
    pub fn output(&self, d: &[f64]) -> Result<f64> {
        let s = self.score(d)?;
        Ok(1.0 / (1.0 + (-s).exp()))
    }

    /// Posterior for prior P(ss) = `prior_ss`, correcting the calibration
    /// proportions.
    pub fn posterior(&self, d: &[f64], prior_ss: f64) -> Result<f64> {
        check_prior(prior_ss)?;
        let s = self.score(d)?;
        let factor = (self.f_ss * (1.0 - prior_ss)) / (self.f_ds * prior_ss);
        Ok(1.0 / (1.0 + (-s).exp() * factor))
    }

    /// ln LR = aᵀd + b + ln(f_ds / f_ss).
    pub fn ln_lr(&self, d: &[f64]) -> Result<f64> {
        Ok(self.score(d)? + self.ln_proportion_correction())
    }

    pub fn ln_proportion_correction(&self) -> f64 {
        (self.f_ds / self.f_ss).ln()
    }

    pub fn lr(&self, d: &[f64]) -> Result<LrValue> {
        self.ln_lr(d).map(LrValue::from_ln)
    }
}

pub fn logistic_output(model: &LogisticModel, d: &[f64]) -> Result<f64> {
    model.output(d)
}

pub fn indirect_posterior(model: &LogisticModel, d: &[f64], prior_ss: f64) -> Result<f64> {
    model.posterior(d, prior_ss)
}

pub fn indirect_lr(model: &LogisticModel, d: &[f64]) -> Result<LrValue> {
    model.lr(d)
}
