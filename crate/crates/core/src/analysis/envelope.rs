//! Double-exponential bandwidth fit.
//!
//! The histogram is modelled as a flat background plus a comb of peaks at
//! `τ_c + n/fsr` whose masses decay as `A·exp(−2πΔν_s nT)` for `n ≥ 0` and
//! `A·exp(−2πΔν_i |n|T)` for `n < 0`. Each peak is a Gaussian of width
//! `√(σ_jitter² + τ₀²/12)` integrated over the bins, so every bin contributes
//! and bin widths close to (but not equal to) the comb spacing are handled.
//! The fit maximizes the Poisson likelihood.

use std::f64::consts::{SQRT_2, TAU};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::optimize::{covariance, least_squares, nelder_mead, numeric_jacobian};
use super::{deviance_residual, pearson_chi2, Histogram};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    /// Comb spacing is `1/fsr`, Hz.
    pub fsr: f64,
    /// Gaussian width of the delay-difference jitter, s.
    pub jitter_sigma: f64,
    /// Intrinsic peak width, s.
    pub tau0: f64,
    pub min_peaks_per_side: usize,
    pub max_iterations: usize,
}

impl EnvelopeOptions {
    pub fn new(fsr: f64) -> Self {
        Self { fsr, jitter_sigma: 0.0, tau0: 0.0, min_peaks_per_side: 10, max_iterations: 200 }
    }
}

/// Result of [`fit_envelope`]. `amplitude` is the expected number of counts
/// in the zero-delay peak; `background` is counts per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthFit {
    pub delta_nu_s: f64,
    pub delta_nu_s_err: f64,
    pub delta_nu_i: f64,
    pub delta_nu_i_err: f64,
    pub tau_center: f64,
    pub tau_center_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub background: f64,
    pub background_err: f64,
    pub chi2: f64,
    pub dof: usize,
    /// `chi2 / dof`.
    pub goodness: f64,
    pub peaks_signal: usize,
    pub peaks_idler: usize,
    pub evaluations: usize,
}

impl BandwidthFit {
    /// FWHM of the correlation envelope, `ln2/(πΔν)`, for each side.
    pub fn correlation_time_fwhm(&self) -> (f64, f64) {
        let f = crate::correlation::correlation_time_fwhm;
        (f(self.delta_nu_s), f(self.delta_nu_i))
    }

    /// Fitted counts per bin of `hist`.
    pub fn expected_counts(&self, hist: &Histogram, opts: &EnvelopeOptions) -> Vec<f64> {
        let period = 1.0 / opts.fsr;
        let edges = hist.effective_edges();
        let comb = Comb { hist, edges: &edges, period, sigma: peak_sigma(opts), anchor: self.tau_center / period };
        let p = [self.amplitude.ln(), self.delta_nu_s.ln(), self.delta_nu_i.ln(), self.background.sqrt(), 0.0];
        comb.expected(&p)
    }
}

fn peak_sigma(opts: &EnvelopeOptions) -> f64 {
    (opts.jitter_sigma.powi(2) + opts.tau0.powi(2) / 12.0).sqrt().max(1e-18)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

const N_PARAMS: usize = 5;
/// Comb-phase grid points over one period.
const PHASE_GRID: usize = 24;
/// Cusp positions tried on each side of the tallest bin.
const CUSP_SEARCH: i64 = 3;

/// Parameters: `[ln A, ln Δν_s, ln Δν_i, b, y]` with `B = b²` and
/// `τ_c = (x₀ + tanh(y)/2)·T`; the comb phase stays within half a period of
/// the anchor `x₀`.
struct Comb<'a> {
    hist: &'a Histogram,
    edges: &'a [f64],
    period: f64,
    sigma: f64,
    anchor: f64,
}

impl Comb<'_> {
    fn center(&self, y: f64) -> f64 {
        (self.anchor + 0.5 * y.tanh()) * self.period
    }

    fn expected(&self, p: &[f64]) -> Vec<f64> {
        let h = self.hist;
        let (a, nus, nui, b) = (p[0].exp(), p[1].exp(), p[2].exp(), p[3]);
        let tc = self.center(p[4]);
        let mut mu = vec![b * b; h.len()];
        let reach = 6.0 * self.sigma + h.tick_duration.unwrap_or(0.0);
        let n_lo = ((-h.window - reach - tc) / self.period).ceil() as i64;
        let n_hi = ((h.window + reach - tc) / self.period).floor() as i64;
        let last = h.len() as i64 - 1;
        for n in n_lo..=n_hi {
            let nu = if n >= 0 { nus } else { nui };
            let mass = a * (-TAU * nu * (n.unsigned_abs() as f64) * self.period).exp();
            if !(mass > 0.0) {
                continue;
            }
            let c = tc + n as f64 * self.period;
            let k_lo = (((c - reach + h.window) / h.bin_width).floor() as i64).max(0);
            let k_hi = (((c + reach + h.window) / h.bin_width).floor() as i64).min(last);
            for k in k_lo..=k_hi {
                let (lo, hi) = (self.edges[k as usize], self.edges[k as usize + 1]);
                let share = normal_cdf((hi - c) / self.sigma) - normal_cdf((lo - c) / self.sigma);
                mu[k as usize] += mass * share;
            }
        }
        mu
    }

    fn deviance(&self, p: &[f64]) -> f64 {
        self.residuals(p).iter().map(|r| r * r).sum()
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        self.expected(p)
            .iter()
            .zip(&self.hist.counts)
            .map(|(&m, &c)| deviance_residual(c as f64, m))
            .collect()
    }
}

fn quantile(values: &[u64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[((v.len() - 1) as f64 * q) as usize] as f64
}

/// Mean distance of the excess above `b0` from `tc` on one side.
fn moment_bandwidth(h: &Histogram, b0: f64, tc: f64, positive: bool) -> f64 {
    let (mut w, mut m) = (0.0, 0.0);
    for (k, &c) in h.counts.iter().enumerate() {
        let d = h.bin_center(k) - tc;
        if (d > 0.0) == positive {
            let e = (c as f64 - b0).max(0.0);
            w += e;
            m += e * d.abs();
        }
    }
    if w > 0.0 && m > 0.0 {
        (w / (TAU * m)).clamp(1e2, 1e10)
    } else {
        1.0 / (TAU * h.window / 4.0)
    }
}

/// Peaks per side whose bin rises clearly above the background estimate.
fn occupied_peaks(h: &Histogram, b0: f64, tc: f64, period: f64) -> (usize, usize) {
    let threshold = b0 + 2.0 * (b0 + 1.0).sqrt();
    let mut sides = (0, 0);
    let n_max = (h.window / period).ceil() as i64;
    for n in (-n_max..=n_max).filter(|&n| n != 0) {
        let x = (tc + n as f64 * period + h.window) / h.bin_width;
        if x < 0.0 || x >= h.len() as f64 {
            continue;
        }
        if h.counts[x as usize] as f64 > threshold {
            if n > 0 {
                sides.0 += 1;
            } else {
                sides.1 += 1;
            }
        }
    }
    sides
}

pub fn fit_envelope(hist: &Histogram, opts: &EnvelopeOptions) -> Result<BandwidthFit> {
    if !(opts.fsr > 0.0) || !opts.fsr.is_finite() {
        return Err(Error::argument(format!("comb fsr {} must be > 0", opts.fsr)));
    }
    if !(opts.jitter_sigma >= 0.0) || !(opts.tau0 >= 0.0) {
        return Err(Error::argument("jitter and tau0 must be >= 0"));
    }
    let total: u64 = hist.counts.iter().sum();
    if total == 0 || hist.is_empty() {
        return Err(Error::FitDegenerate("histogram has no counts".into()));
    }
    let period = 1.0 / opts.fsr;
    let edges = hist.effective_edges();
    let sigma = peak_sigma(opts);

    let b0 = quantile(&hist.counts, 0.02);
    let k_max = (0..hist.len()).max_by_key(|&k| hist.counts[k]).expect("non-empty");
    let t_peak = hist.bin_center(k_max);
    let nus0 = moment_bandwidth(hist, b0, t_peak, true);
    let nui0 = moment_bandwidth(hist, b0, t_peak, false);
    let excess: f64 = hist.counts.iter().map(|&c| c as f64 - b0).sum::<f64>().max(1.0);

    let b_start = 0.5 * b0;
    let (ns, ni) = occupied_peaks(hist, b0, t_peak, period);
    if ns < opts.min_peaks_per_side || ni < opts.min_peaks_per_side {
        return Err(Error::FitDegenerate(format!(
            "{ns} signal-side and {ni} idler-side comb peaks above background, need {}",
            opts.min_peaks_per_side
        )));
    }

    // Comb phase modulo one period, profiled on a grid.
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for g in 0..PHASE_GRID {
        let anchor = t_peak / period - 0.5 + (g as f64 + 0.5) / PHASE_GRID as f64;
        let comb = Comb { hist, edges: &edges, period, sigma, anchor };
        let unit = [0.0, nus0.ln(), nui0.ln(), b_start.sqrt(), 0.0];
        let shape: f64 = comb.expected(&unit).iter().map(|m| m - b_start).sum();
        let q0 = [(excess / shape.max(1e-300)).ln(), nus0.ln(), nui0.ln(), b_start.sqrt()];
        let fixed = |q: &[f64]| comb.residuals(&[q[0], q[1], q[2], q[3], 0.0]);
        let r = least_squares(fixed, &q0, 30);
        if best.as_ref().is_none_or(|b| r.cost < b.0) {
            best = Some((r.cost, anchor, r.x));
        }
    }
    let (_, phase, q) = best.expect("non-empty grid");

    // Which tooth holds the cusp: moving it by one period while skewing the
    // two decay rates is nearly degenerate, so nearby choices are all fitted.
    let mut best: Option<(f64, Comb, Vec<f64>, usize)> = None;
    let mut failure = None;
    for j in -CUSP_SEARCH..=CUSP_SEARCH {
        let comb = Comb { hist, edges: &edges, period, sigma, anchor: phase + j as f64 };
        let start = [q[0], q[1], q[2], q[3], 0.0];
        let step = [0.02, 0.02, 0.02, 0.05 * (q[3].abs() + 1.0), 0.1];
        let coarse = nelder_mead(|p| comb.deviance(p), &start, &step, 200)?;
        let refined = least_squares(|p| comb.residuals(p), &coarse.x, opts.max_iterations);
        if !refined.converged {
            failure = Some(Error::FitFailed { iterations: refined.evaluations, chi2: refined.cost, best: refined.x });
            continue;
        }
        let evaluations = coarse.iterations as usize + refined.evaluations;
        if best.as_ref().is_none_or(|b| refined.cost < b.0) {
            best = Some((refined.cost, comb, refined.x, evaluations));
        }
    }
    let Some((_, comb, p, evaluations)) = best else {
        return Err(failure.expect("at least one attempt"));
    };
    let (ns, ni) = occupied_peaks(hist, b0, comb.center(p[4]), period);

    let mu = comb.expected(&p);
    let chi2 = pearson_chi2(&hist.counts, &mu);
    let dof = hist.len().saturating_sub(N_PARAMS).max(1);
    let scale: Vec<f64> = mu.iter().map(|m| m.max(1e-12).sqrt()).collect();
    let jac = numeric_jacobian(&|q: &[f64]| comb.expected(q).iter().zip(&scale).map(|(m, s)| m / s).collect(), &p);
    let err: Vec<f64> = match covariance(&jac) {
        Some(c) => (0..N_PARAMS).map(|j| c[(j, j)].max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; N_PARAMS],
    };
    let (a, nus, nui) = (p[0].exp(), p[1].exp(), p[2].exp());
    Ok(BandwidthFit {
        delta_nu_s: nus,
        delta_nu_s_err: nus * err[1],
        delta_nu_i: nui,
        delta_nu_i_err: nui * err[2],
        tau_center: comb.center(p[4]),
        tau_center_err: 0.5 * (1.0 - p[4].tanh().powi(2)) * err[4] * period,
        amplitude: a,
        amplitude_err: a * err[0],
        background: p[3] * p[3],
        background_err: 2.0 * p[3].abs() * err[3],
        chi2,
        dof,
        goodness: chi2 / dof as f64,
        peaks_signal: ns,
        peaks_idler: ni,
        evaluations,
    })
}

