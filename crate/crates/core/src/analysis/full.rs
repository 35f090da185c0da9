//! Fit of the complete correlation model to a comb-resolving histogram.
//!
//! Expected counts per bin are `B + A·ḡ_k`, where `ḡ_k` is the integral of
//! the peak-normalized model, convolved with the detector jitter, over the
//! bin's effective edges divided by the bin width. Free
//! parameters are `γ_s, γ_i, τ₀, fsr, A, B`; the optical frequencies, mode
//! cutoff and plate detuning are taken from the inputs.

use serde::{Deserialize, Serialize};

use super::optimize::{covariance, least_squares, nelder_mead, numeric_jacobian};
use super::{deviance_residual, pearson_chi2, Histogram};
use crate::correlation::{CombTable, HwpConfig, PairCorrelationModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullFitOptions {
    /// Gaussian width of the delay-difference jitter, s.
    pub jitter_sigma: f64,
    /// Hold the free spectral range at its initial value.
    pub fix_fsr: bool,
    pub hwp: Option<HwpConfig>,
    pub max_iterations: usize,
}

impl Default for FullFitOptions {
    fn default() -> Self {
        Self { jitter_sigma: 0.0, fix_fsr: false, hwp: None, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFitErrors {
    pub gamma_s: f64,
    pub gamma_i: f64,
    pub tau0: f64,
    pub fsr: f64,
    pub amplitude: f64,
    pub background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFit {
    pub model: PairCorrelationModel,
    /// Counts per bin at unit normalized density.
    pub amplitude: f64,
    /// Counts per bin.
    pub background: f64,
    pub errors: FullFitErrors,
    pub chi2: f64,
    pub dof: usize,
    /// `chi2 / dof`.
    pub goodness: f64,
    pub evaluations: usize,
}

impl FullFit {
    /// Fitted counts per bin of `hist`.
    pub fn expected_counts(&self, hist: &Histogram, opts: &FullFitOptions) -> Result<Vec<f64>> {
        let table = CombTable::new(&self.model, opts.hwp.as_ref(), opts.jitter_sigma)?;
        let w = hist.bin_width;
        let edges = hist.effective_edges();
        Ok(edges.windows(2).map(|e| self.background + self.amplitude * table.integral(e[0], e[1]) / w).collect())
    }
}

/// Internal parameters `[ln γ_s/γ₀, ln γ_i/γ₀, t, f, ln A, b]` with
/// `τ₀ = |t|·τ_scale`, `fsr = fsr₀(1 + 10⁻⁴ f)`, `B = b²`.
struct Problem<'a> {
    hist: &'a Histogram,
    initial: PairCorrelationModel,
    opts: FullFitOptions,
    gamma0: f64,
    tau_scale: f64,
    edges: Vec<f64>,
}

const FSR_STEP: f64 = 1e-4;

impl Problem<'_> {
    fn full(&self, x: &[f64]) -> [f64; 6] {
        if self.opts.fix_fsr {
            [x[0], x[1], x[2], 0.0, x[3], x[4]]
        } else {
            [x[0], x[1], x[2], x[3], x[4], x[5]]
        }
    }

    fn model(&self, x: &[f64]) -> PairCorrelationModel {
        let p = self.full(x);
        let fsr = self.initial.fsr_s * (1.0 + FSR_STEP * p[3]);
        PairCorrelationModel {
            gamma_s: self.gamma0 * p[0].exp(),
            gamma_i: self.gamma0 * p[1].exp(),
            tau0: p[2].abs() * self.tau_scale,
            fsr_s: fsr,
            fsr_i: fsr,
            ..self.initial
        }
    }

    fn shape(&self, model: &PairCorrelationModel) -> Option<Vec<f64>> {
        let table = CombTable::new(model, self.opts.hwp.as_ref(), self.opts.jitter_sigma).ok()?;
        let w = self.hist.bin_width;
        Some(self.edges.windows(2).map(|e| table.integral(e[0], e[1]) / w).collect())
    }

    fn expected(&self, x: &[f64]) -> Option<Vec<f64>> {
        let p = self.full(x);
        let (a, b) = (p[4].exp(), p[5] * p[5]);
        Some(self.shape(&self.model(x))?.into_iter().map(|g| b + a * g).collect())
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        match self.expected(x) {
            Some(mu) => mu.iter().zip(&self.hist.counts).map(|(&m, &c)| deviance_residual(c as f64, m)).collect(),
            None => vec![f64::NAN; self.hist.len()],
        }
    }

    fn deviance(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|r| r * r).sum()
    }
}

/// Least-squares `(A, B)` for `c ≈ B + A·g`.
fn linear_start(counts: &[u64], g: &[f64]) -> (f64, f64) {
    let n = counts.len() as f64;
    let (sg, sc) = (g.iter().sum::<f64>(), counts.iter().map(|&c| c as f64).sum::<f64>());
    let sgg: f64 = g.iter().map(|v| v * v).sum();
    let sgc: f64 = g.iter().zip(counts).map(|(v, &c)| v * c as f64).sum();
    let det = n * sgg - sg * sg;
    let a = if det > 0.0 { (n * sgc - sg * sc) / det } else { sc / sg.max(1e-300) };
    let b = (sc - a * sg) / n;
    (a.max(1e-6 * sc.max(1.0)), b.max(1e-3))
}

pub fn fit_full_model(hist: &Histogram, initial: &PairCorrelationModel, opts: &FullFitOptions) -> Result<FullFit> {
    initial.validate()?;
    if initial.fsr_s != initial.fsr_i {
        return Err(Error::argument("full fit assumes a common free spectral range"));
    }
    let t_rt = 1.0 / initial.fsr_s;
    if hist.bin_width > 0.25 * t_rt {
        return Err(Error::argument(format!(
            "bin width {:.3e} s does not resolve the comb (needs <= {:.3e} s)",
            hist.bin_width,
            0.25 * t_rt
        )));
    }
    if hist.counts.iter().all(|&c| c == 0) {
        return Err(Error::FitDegenerate("histogram has no counts".into()));
    }
    let problem = Problem {
        hist,
        initial: *initial,
        opts: *opts,
        gamma0: initial.gamma_s,
        tau_scale: initial.tau0.max(1e-12),
        edges: hist.effective_edges(),
    };
    let g0 = problem.shape(initial).ok_or_else(|| Error::NumericalOverflow("initial model".into()))?;
    let (a0, b0) = linear_start(&hist.counts, &g0);
    let t0 = initial.tau0 / problem.tau_scale;
    let gi = (initial.gamma_i / initial.gamma_s).ln();
    let (x0, step): (Vec<f64>, Vec<f64>) = if opts.fix_fsr {
        (vec![0.0, gi, t0, a0.ln(), b0.sqrt()], vec![0.05, 0.05, 0.2, 0.05, 0.1 * b0.sqrt()])
    } else {
        (vec![0.0, gi, t0, 0.0, a0.ln(), b0.sqrt()], vec![0.05, 0.05, 0.2, 0.5, 0.05, 0.1 * b0.sqrt()])
    };
    let coarse = nelder_mead(|x| problem.deviance(x), &x0, &step, 300)?;
    let refined = least_squares(|x| problem.residuals(x), &coarse.x, opts.max_iterations);
    let x = refined.x.clone();
    if !refined.converged {
        return Err(Error::FitFailed { iterations: refined.evaluations, chi2: refined.cost, best: x });
    }

    let mu = problem.expected(&x).ok_or_else(|| Error::NumericalOverflow("fitted model".into()))?;
    let chi2 = pearson_chi2(&hist.counts, &mu);
    let n_free = x.len();
    let dof = hist.len().saturating_sub(n_free).max(1);
    let scale: Vec<f64> = mu.iter().map(|m| m.max(1e-12).sqrt()).collect();
    let jac = numeric_jacobian(
        &|q: &[f64]| match problem.expected(q) {
            Some(m) => m.iter().zip(&scale).map(|(m, s)| m / s).collect(),
            None => vec![f64::NAN; scale.len()],
        },
        &x,
    );
    let var: Vec<f64> = match covariance(&jac) {
        Some(c) => (0..n_free).map(|j| c[(j, j)].max(0.0)).collect(),
        None => vec![f64::INFINITY; n_free],
    };
    // back to the six-parameter layout
    let var6 = if opts.fix_fsr { [var[0], var[1], var[2], 0.0, var[3], var[4]] } else { [var[0], var[1], var[2], var[3], var[4], var[5]] };
    let p = problem.full(&x);
    let model = problem.model(&x);
    let (a, b) = (p[4].exp(), p[5] * p[5]);
    let sd = |j: usize| var6[j].sqrt();
    Ok(FullFit {
        model,
        amplitude: a,
        background: b,
        errors: FullFitErrors {
            gamma_s: model.gamma_s * sd(0),
            gamma_i: model.gamma_i * sd(1),
            tau0: problem.tau_scale * sd(2),
            fsr: initial.fsr_s * FSR_STEP * sd(3),
            amplitude: a * sd(4),
            background: 2.0 * p[5].abs() * sd(5),
        },
        chi2,
        dof,
        goodness: chi2 / dof as f64,
        evaluations: coarse.iterations as usize + refined.evaluations,
    })
}
