//! Signal/idler temporal cross-correlation of a doubly resonant SPDC cavity.
//!
//! For delays `τ ≥ τ₀/2` the two-photon amplitude is
//!
//! ```text
//! A(τ) = √(γ_s γ_i ω_s ω_i) Σ_{m_s,m_i} K(Γ_s, Γ_i) · e^{−2πΓ_s(τ−τ₀/2)} · sinc(iπτ₀Γ_s)
//! ```
//!
//! with `Γ_k = γ_k/2 + i·m_k·FSR_k`, and the mirrored expression (idler decay,
//! positive exponent) for `τ < τ₀/2`. `G²(τ) = |A(τ)|²`. The mode kernel `K`
//! is `1/(Γ_s + Γ_i)` by default ([`ModeDenominator::Sum`]); this is the form
//! that produces the comb of width-`τ₀` peaks at multiples of `1/FSR`.
//! [`ModeDenominator::Product`] (`1/(Γ_s Γ_i)`) is available for comparison;
//! it yields a smooth two-sided exponential without a comb.
//!
//! Only one of `Γ_s`, `Γ_i` carries the τ-dependence on each branch, so the
//! inner sum is precomputed once per model and each delay costs `O(M)`.

pub mod comb;
pub mod hwp;

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cavity::{derive_spectral_params, CavityConfig, WavelengthRole};
use crate::{Error, Result, SPEED_OF_LIGHT};

pub use comb::CombTable;
pub use hwp::{coincidence_weight, flip_trick_amplitudes, FlipAmplitudes, HwpConfig};

use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeDenominator {
    /// `1/(Γ_s + Γ_i)`.
    #[default]
    Sum,
    /// `1/(Γ_s Γ_i)`; factorizes completely into two single sums.
    Product,
}

/// Parameters of the two-photon correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelationModel {
    /// Cavity damping rate (linewidth FWHM) of the signal mode, Hz.
    pub gamma_s: f64,
    pub gamma_i: f64,
    /// Optical angular frequency, rad/s.
    pub omega_s: f64,
    pub omega_i: f64,
    /// Free spectral range seen by signal and idler, Hz.
    pub fsr_s: f64,
    pub fsr_i: f64,
    /// Signal/idler propagation delay in the crystal, s.
    pub tau0: f64,
    /// Longitudinal modes kept: `|m_k| ≤ mode_cutoff`.
    pub mode_cutoff: usize,
    #[serde(default)]
    pub denominator: ModeDenominator,
}

/// Default truncation: `ceil(2/(π τ₀ fsr))` rounded up to a multiple of 500.
pub fn default_mode_cutoff(tau0: f64, fsr: f64) -> usize {
    const MAX: usize = 20_000;
    if !(tau0 > 0.0 && fsr > 0.0) {
        return 2000;
    }
    let raw = (2.0 / (PI * tau0 * fsr)).ceil();
    if raw > MAX as f64 {
        return MAX;
    }
    let raw = (raw as usize).max(1);
    raw.div_ceil(500) * 500
}

impl PairCorrelationModel {
    /// Degenerate 795 nm signal and idler sharing one linewidth and FSR.
    pub fn symmetric(gamma: f64, fsr: f64, tau0: f64, mode_cutoff: usize) -> Self {
        let omega = TAU * SPEED_OF_LIGHT / 795e-9;
        Self {
            gamma_s: gamma,
            gamma_i: gamma,
            omega_s: omega,
            omega_i: omega,
            fsr_s: fsr,
            fsr_i: fsr,
            tau0,
            mode_cutoff,
            denominator: ModeDenominator::Sum,
        }
    }

    /// Linewidth and FSR from the fundamental of `cavity`, `τ₀` from the
    /// crystal length and group-index mismatch.
    pub fn from_cavity(cavity: &CavityConfig) -> Result<Self> {
        let spec = derive_spectral_params(cavity, WavelengthRole::Fundamental)?;
        let tau0 = cavity.signal_idler_delay();
        let omega = TAU * SPEED_OF_LIGHT / cavity.wavelength_fund;
        let model = Self {
            omega_s: omega,
            omega_i: omega,
            ..Self::symmetric(
                spec.linewidth_fwhm,
                spec.fsr,
                tau0,
                default_mode_cutoff(tau0, spec.fsr),
            )
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_s", self.gamma_s),
            ("gamma_i", self.gamma_i),
            ("fsr_s", self.fsr_s),
            ("fsr_i", self.fsr_i),
            ("omega_s", self.omega_s),
            ("omega_i", self.omega_i),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::argument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.tau0 >= 0.0) || !self.tau0.is_finite() {
            return Err(Error::argument(format!("tau0 must be >= 0, got {}", self.tau0)));
        }
        Ok(())
    }

    /// Effective round-trip time `1/fsr_s`.
    pub fn round_trip_time(&self) -> f64 {
        1.0 / self.fsr_s
    }
}

/// `sin z / z` for complex `z`.
pub fn complex_sinc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// Complex mode rate `Γ = γ/2 + i·m·fsr`.
pub fn mode_rate(gamma: f64, m: i64, fsr: f64) -> Complex64 {
    Complex64::new(0.5 * gamma, m as f64 * fsr)
}

/// One side of the correlation function: `A(v) = e^{−πγv} Σ_m a_m e^{−2πi m fsr v}`
/// where `v = |τ − τ₀/2|`.
#[derive(Debug, Clone)]
pub(crate) struct Branch {
    pub gamma: f64,
    pub fsr: f64,
    pub cutoff: i64,
    /// `a_m` stored at index `m + cutoff`.
    pub coeffs: Vec<Complex64>,
}

impl Branch {
    pub fn coeff(&self, m: i64) -> Complex64 {
        self.coeffs[(m + self.cutoff) as usize]
    }

    /// Periodic part `P(v)`, period `1/fsr`.
    pub fn periodic(&self, v: f64) -> Complex64 {
        let x = (self.fsr * v).rem_euclid(1.0);
        let mut acc = self.coeff(0);
        for m in 1..=self.cutoff {
            let (s, c) = (TAU * (m as f64 * x).rem_euclid(1.0)).sin_cos();
            // e^{-iθ} for +m, e^{+iθ} for −m
            acc += self.coeff(m) * Complex64::new(c, -s) + self.coeff(-m) * Complex64::new(c, s);
        }
        acc
    }

    pub fn amplitude(&self, v: f64) -> Complex64 {
        (-PI * self.gamma * v).exp() * self.periodic(v)
    }
}

/// Precomputed mode sums for one [`PairCorrelationModel`].
#[derive(Debug, Clone)]
pub struct ModeSum {
    model: PairCorrelationModel,
    prefactor: f64,
    pub(crate) signal: Branch,
    pub(crate) idler: Branch,
}

/// `Σ_{|m'| ≤ M} 1/(Γ(m) + Γ'(m'))` for every `m`.
fn coupled_sums(model: &PairCorrelationModel, for_signal: bool) -> Vec<Complex64> {
    let m_cut = model.mode_cutoff as i64;
    let gamma_bar = 0.5 * (model.gamma_s + model.gamma_i);
    if model.fsr_s == model.fsr_i {
        // Γ_s + Γ_i = γ̄ + i(m_s + m_i)·fsr depends only on the index sum
        let fsr = model.fsr_s;
        let terms: Vec<Complex64> = (-2 * m_cut..=2 * m_cut)
            .map(|j| Complex64::new(gamma_bar, j as f64 * fsr).inv())
            .collect();
        let mut prefix = Vec::with_capacity(terms.len() + 1);
        prefix.push(Complex64::new(0.0, 0.0));
        let mut acc = Complex64::new(0.0, 0.0);
        for t in &terms {
            acc += t;
            prefix.push(acc);
        }
        // j = m + m' ranges over [m − M, m + M]; offset 2M maps j to index
        (-m_cut..=m_cut)
            .map(|m| {
                let lo = (m - m_cut + 2 * m_cut) as usize;
                let hi = (m + m_cut + 2 * m_cut) as usize;
                prefix[hi + 1] - prefix[lo]
            })
            .collect()
    } else {
        let (own_fsr, other_fsr) = if for_signal {
            (model.fsr_s, model.fsr_i)
        } else {
            (model.fsr_i, model.fsr_s)
        };
        (-m_cut..=m_cut)
            .map(|m| {
                (-m_cut..=m_cut)
                    .map(|mp| Complex64::new(gamma_bar, m as f64 * own_fsr + mp as f64 * other_fsr).inv())
                    .sum()
            })
            .collect()
    }
}

impl ModeSum {
    pub fn new(model: &PairCorrelationModel) -> Result<Self> {
        model.validate()?;
        let m_cut = model.mode_cutoff as i64;
        let tau0 = model.tau0;
        let sinc_of = |gamma: f64, m: i64, fsr: f64| {
            complex_sinc(Complex64::new(0.0, PI * tau0) * mode_rate(gamma, m, fsr))
        };

        let build = |gamma: f64, fsr: f64, other_gamma: f64, other_fsr: f64, for_signal: bool| {
            let coeffs: Vec<Complex64> = match model.denominator {
                ModeDenominator::Sum => {
                    let d = coupled_sums(model, for_signal);
                    (-m_cut..=m_cut)
                        .zip(d)
                        .map(|(m, d)| sinc_of(gamma, m, fsr) * d)
                        .collect()
                }
                ModeDenominator::Product => {
                    let other: Complex64 = (-m_cut..=m_cut)
                        .map(|m| mode_rate(other_gamma, m, other_fsr).inv())
                        .sum();
                    (-m_cut..=m_cut)
                        .map(|m| sinc_of(gamma, m, fsr) / mode_rate(gamma, m, fsr) * other)
                        .collect()
                }
            };
            Branch {
                gamma,
                fsr,
                cutoff: m_cut,
                coeffs,
            }
        };

        let signal = build(model.gamma_s, model.fsr_s, model.gamma_i, model.fsr_i, true);
        let idler = build(model.gamma_i, model.fsr_i, model.gamma_s, model.fsr_s, false);
        if signal.coeffs.iter().chain(&idler.coeffs).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NumericalOverflow("non-finite mode coefficient".into()));
        }
        let prefactor = (model.gamma_s * model.gamma_i * model.omega_s * model.omega_i).sqrt();
        Ok(Self {
            model: *model,
            prefactor,
            signal,
            idler,
        })
    }

    pub fn model(&self) -> &PairCorrelationModel {
        &self.model
    }

    pub(crate) fn prefactor(&self) -> f64 {
        self.prefactor
    }

    /// Branch and distance `v = |τ − τ₀/2|` for delay `tau`.
    pub(crate) fn locate(&self, tau: f64) -> (&Branch, f64) {
        let t = tau - 0.5 * self.model.tau0;
        if t >= 0.0 {
            (&self.signal, t)
        } else {
            (&self.idler, -t)
        }
    }

    pub fn amplitude(&self, tau: f64) -> Complex64 {
        let (branch, v) = self.locate(tau);
        self.prefactor * branch.amplitude(v)
    }

    /// Unnormalized `G²(τ)`.
    pub fn g2(&self, tau: f64) -> Result<f64> {
        let g = self.amplitude(tau).norm_sqr();
        if !g.is_finite() {
            return Err(Error::NumericalOverflow(format!("G2 at tau = {tau:e}")));
        }
        Ok(g)
    }

    /// `G²` with the half-wave-plate overlay: the comb is divided into cells of
    /// one physical round trip (`1/(2·fsr)`), cell `n` is weighted by
    /// [`coincidence_weight`], and odd cells carry the even-cell peak shape
    /// displaced by one physical round trip.
    pub fn g2_with_hwp(&self, hwp: &HwpConfig, tau: f64) -> Result<f64> {
        let (branch, v) = self.locate(tau);
        let t_phys = 0.5 / branch.fsr;
        let n = (v / t_phys).round();
        let w = coincidence_weight(hwp, n as u32);
        if w == 0.0 {
            return Ok(0.0);
        }
        let g = if n as u64 % 2 == 0 {
            self.g2(tau)?
        } else {
            let p = branch.periodic(v - t_phys);
            self.prefactor.powi(2) * (-TAU * branch.gamma * v).exp() * p.norm_sqr()
        };
        if !g.is_finite() {
            return Err(Error::NumericalOverflow(format!("G2 at tau = {tau:e}")));
        }
        Ok(w * g)
    }
}

/// Unnormalized `G²(τ)` for a single delay.
pub fn g2_cross(model: &PairCorrelationModel, tau: f64) -> Result<f64> {
    ModeSum::new(model)?.g2(tau)
}

pub fn g2_with_hwp(model: &PairCorrelationModel, hwp: &HwpConfig, tau: f64) -> Result<f64> {
    hwp.validate()?;
    ModeSum::new(model)?.g2_with_hwp(hwp, tau)
}

/// A sampled, peak-normalized correlation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub(crate) fn normalized(taus: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let max = raw.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::argument("correlation curve is identically zero"));
        }
        let values = raw.into_iter().map(|v| (v / max).clamp(0.0, 1.0)).collect();
        Ok(Self { taus, values })
    }

    /// Two-column CSV `tau_seconds,normalized_value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau_seconds,normalized_value")?;
        for (t, v) in self.taus.iter().zip(&self.values) {
            writeln!(w, "{t:e},{v:e}")?;
        }
        Ok(())
    }

    /// Indices of strict local maxima (plateaus count once) above `floor`.
    pub fn local_maxima(&self, floor: f64) -> Vec<usize> {
        let v = &self.values;
        let mut out = Vec::new();
        let mut i = 1;
        while i + 1 < v.len() {
            if v[i] > floor && v[i] > v[i - 1] {
                let mut j = i;
                while j + 1 < v.len() && v[j + 1] == v[i] {
                    j += 1;
                }
                if j + 1 < v.len() && v[j + 1] < v[i] {
                    out.push((i + j) / 2);
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        out
    }
}

/// Grid `tau_min, tau_min + step, …` up to `tau_max` inclusive.
pub fn tau_grid(tau_min: f64, tau_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(tau_min.is_finite() && tau_max.is_finite() && tau_min < tau_max) {
        return Err(Error::argument(format!(
            "need tau_min < tau_max, got [{tau_min:e}, {tau_max:e}]"
        )));
    }
    if !(step > 0.0) || step > tau_max - tau_min {
        return Err(Error::argument(format!(
            "step {step:e} must be positive and no larger than the range"
        )));
    }
    let n = ((tau_max - tau_min) / step * (1.0 + 1e-12)).floor() as usize + 1;
    if n > 50_000_000 {
        return Err(Error::Capacity(format!("{n} grid points")));
    }
    Ok((0..n).map(|k| tau_min + k as f64 * step).collect())
}

/// Point-sampled, peak-normalized `G²` on a uniform grid.
pub fn g2_curve(
    model: &PairCorrelationModel,
    tau_min: f64,
    tau_max: f64,
    step: f64,
) -> Result<CorrelationCurve> {
    let taus = tau_grid(tau_min, tau_max, step)?;
    let sum = ModeSum::new(model)?;
    let raw = crate::par::map_collect(&taus, |&t| sum.g2(t));
    let raw = raw.into_iter().collect::<Result<Vec<_>>>()?;
    CorrelationCurve::normalized(taus, raw)
}

/// Point-sampled, peak-normalized `G²` including the half-wave-plate overlay.
pub fn g2_curve_with_hwp(
    model: &PairCorrelationModel,
    hwp: &HwpConfig,
    tau_min: f64,
    tau_max: f64,
    step: f64,
) -> Result<CorrelationCurve> {
    hwp.validate()?;
    let taus = tau_grid(tau_min, tau_max, step)?;
    let sum = ModeSum::new(model)?;
    let raw = crate::par::map_collect(&taus, |&t| sum.g2_with_hwp(hwp, t));
    let raw = raw.into_iter().collect::<Result<Vec<_>>>()?;
    CorrelationCurve::normalized(taus, raw)
}

/// Full width at half maximum of `exp(−2πΔν|τ|)`: `ln2/(πΔν)`.
pub fn correlation_time_fwhm(delta_nu: f64) -> f64 {
    std::f64::consts::LN_2 / (PI * delta_nu)
}
