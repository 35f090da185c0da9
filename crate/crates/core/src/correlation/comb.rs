//! Tabulated comb: the correlation function sampled through its periodic part.
//!
//! On each branch `G²(v) = C·e^{−2πγv}·|P(v)|²` with `P` periodic in the
//! effective round-trip time `T = 1/fsr`. `P` is a trigonometric polynomial of
//! degree `M`, so one FFT of the mode coefficients gives it exactly on a fine
//! grid. The comb is then cut into cells centred on the peaks (width `T`, or
//! one physical round trip `T/2` with the half-wave-plate overlay); cell `n`
//! holds `w(n)·e^{−2πγ n t_cell}·q(u)` with the same in-cell profile
//! `q(u) = C|P(u)|²e^{−2πγu}` for every cell. Bin integrals, densities and the
//! delay sampler all read from this table.
//!
//! Optional Gaussian timing jitter is applied to the in-cell profile `q` in
//! the Fourier domain, treating one cell as periodic. Smearing `q` rather
//! than `|P|²` keeps the `e^{−2πγu}` tilt inside the convolution, so the
//! smeared peaks stay centred on the comb.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::hwp::{coincidence_weight, HwpConfig};
use super::{Branch, ModeSum, PairCorrelationModel};
use crate::{Error, Result};

const MAX_TABLE: usize = 1 << 21;
const TARGET_RESOLUTION: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct BranchTable {
    pub gamma: f64,
    /// Start of the first table interval, `−T/2 − δ/2`.
    origin: f64,
    delta: f64,
    /// Piecewise-constant in-cell density; interval `i` is centred on `−T/2 + iδ`.
    density: Vec<f64>,
    /// `prefix[i] = Σ_{k<i} density[k]·δ`.
    prefix: Vec<f64>,
    /// Largest unsmoothed sample of `C|P|²`.
    peak: f64,
}

fn table_size(cutoff: usize, period: f64) -> usize {
    let by_modes = 8 * (cutoff + 1);
    let by_time = (period / TARGET_RESOLUTION).ceil() as usize;
    by_modes.max(by_time).clamp(64, MAX_TABLE).next_power_of_two()
}

impl BranchTable {
    fn build(branch: &Branch, scale: f64, jitter_sigma: f64, planner: &mut FftPlanner<f64>) -> Self {
        let period = 1.0 / branch.fsr;
        let n = table_size(branch.cutoff as usize, period);
        let delta = period / n as f64;

        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in -branch.cutoff..=branch.cutoff {
            buf[m.rem_euclid(n as i64) as usize] += branch.coeff(m);
        }
        planner.plan_fft_forward(n).process(&mut buf);
        let power: Vec<f64> = buf.iter().map(|p| scale * p.norm_sqr()).collect();
        let peak = power.iter().copied().fold(0.0, f64::max);

        let half = n / 2;
        let mut density: Vec<f64> = (0..n)
            .map(|i| {
                let u = -0.5 * period + i as f64 * delta;
                power[(i + half) % n] * (-TAU * branch.gamma * u).exp()
            })
            .collect();

        if jitter_sigma > 0.0 {
            // circular over one cell; the profile is negligible at the wrap
            let mut spec: Vec<Complex64> = density.iter().map(|&p| Complex64::new(p, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut spec);
            for (k, s) in spec.iter_mut().enumerate() {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let f = kk * branch.fsr;
                *s *= (-2.0 * PI * PI * jitter_sigma * jitter_sigma * f * f).exp();
            }
            planner.plan_fft_inverse(n).process(&mut spec);
            for (p, s) in density.iter_mut().zip(&spec) {
                *p = (s.re / n as f64).max(0.0);
            }
        }
        let mut prefix = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for d in &density {
            acc += d * delta;
            prefix.push(acc);
        }
        Self {
            gamma: branch.gamma,
            origin: -0.5 * period - 0.5 * delta,
            delta,
            density,
            prefix,
            peak,
        }
    }

    /// `∫_{origin}^{u} q`.
    fn cumulative(&self, u: f64) -> f64 {
        let n = self.density.len();
        let x = ((u - self.origin) / self.delta).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        self.prefix[i] + self.density[i] * (x - i as f64) * self.delta
    }

    /// Point value of the in-cell profile, linear between table nodes.
    fn profile(&self, u: f64) -> f64 {
        let n = self.density.len();
        let x = (u - self.origin) / self.delta - 0.5;
        let i = x.floor();
        let f = x - i;
        let i = i as i64;
        let at = |k: i64| self.density[k.clamp(0, n as i64 - 1) as usize];
        at(i) * (1.0 - f) + at(i + 1) * f
    }

    /// Inverse of [`cumulative`](Self::cumulative).
    fn invert(&self, target: f64) -> f64 {
        let n = self.density.len();
        let i = self.prefix.partition_point(|&p| p <= target).saturating_sub(1).min(n - 1);
        let d = self.density[i];
        let frac = if d > 0.0 {
            ((target - self.prefix[i]) / (d * self.delta)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.origin + (i as f64 + frac) * self.delta
    }
}

/// Cell decomposition of the correlation comb; see the module docs.
#[derive(Debug, Clone)]
pub struct CombTable {
    tau0: f64,
    hwp: Option<HwpConfig>,
    signal_cell: f64,
    idler_cell: f64,
    signal: BranchTable,
    idler: BranchTable,
    norm: f64,
}

/// Which side of `τ₀/2` a cell lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `τ ≥ τ₀/2` (idler later), signal decay.
    Signal,
    /// `τ < τ₀/2`, idler decay.
    Idler,
}

/// Probability mass of one comb cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMass {
    pub side: Side,
    pub index: u32,
    pub mass: f64,
}

impl CombTable {
    pub fn new(model: &PairCorrelationModel, hwp: Option<&HwpConfig>, jitter_sigma: f64) -> Result<Self> {
        Self::from_mode_sum(&ModeSum::new(model)?, hwp, jitter_sigma)
    }

    pub fn from_mode_sum(sum: &ModeSum, hwp: Option<&HwpConfig>, jitter_sigma: f64) -> Result<Self> {
        if let Some(h) = hwp {
            h.validate()?;
        }
        if !(jitter_sigma >= 0.0) || !jitter_sigma.is_finite() {
            return Err(Error::argument(format!("jitter sigma {jitter_sigma:e} must be >= 0")));
        }
        let scale = sum.prefactor().powi(2);
        let mut planner = FftPlanner::new();
        let signal = BranchTable::build(&sum.signal, scale, jitter_sigma, &mut planner);
        let idler = BranchTable::build(&sum.idler, scale, jitter_sigma, &mut planner);
        let norm = signal.peak.max(idler.peak);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NumericalOverflow("comb normalization".into()));
        }
        let cell = |fsr: f64| if hwp.is_some() { 0.5 / fsr } else { 1.0 / fsr };
        Ok(Self {
            tau0: sum.model().tau0,
            hwp: hwp.copied(),
            signal_cell: cell(sum.signal.fsr),
            idler_cell: cell(sum.idler.fsr),
            signal,
            idler,
            norm,
        })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    /// Table resolution, s.
    pub fn resolution(&self) -> f64 {
        self.signal.delta.max(self.idler.delta)
    }

    pub fn cell_width(&self, side: Side) -> f64 {
        match side {
            Side::Signal => self.signal_cell,
            Side::Idler => self.idler_cell,
        }
    }

    fn branch(&self, side: Side) -> (&BranchTable, f64) {
        match side {
            Side::Signal => (&self.signal, self.signal_cell),
            Side::Idler => (&self.idler, self.idler_cell),
        }
    }

    fn weight(&self, n: u32) -> f64 {
        self.hwp.as_ref().map_or(1.0, |h| coincidence_weight(h, n))
    }

    fn cell_factor(&self, side: Side, n: u32) -> f64 {
        let (b, cell) = self.branch(side);
        let w = self.weight(n);
        if w == 0.0 {
            0.0
        } else {
            w * (-TAU * b.gamma * n as f64 * cell).exp()
        }
    }

    /// `u`-range of cell `n`.
    fn cell_range(&self, side: Side, n: u32) -> (f64, f64) {
        let (_, cell) = self.branch(side);
        let lo = if n == 0 { 0.0 } else { -0.5 * cell };
        (lo, 0.5 * cell)
    }

    /// Normalized density at distance `v ≥ 0` from `τ₀/2` on `side`.
    fn side_density(&self, side: Side, v: f64) -> f64 {
        let (b, cell) = self.branch(side);
        let n = (v / cell + 0.5).floor().max(0.0) as u32;
        let u = v - n as f64 * cell;
        self.cell_factor(side, n) * b.profile(u) / self.norm
    }

    /// `∫ G²/norm dv` over `v ∈ [a, b)` on one side.
    fn side_integral(&self, side: Side, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        if !(b > a) {
            return 0.0;
        }
        let (bt, cell) = self.branch(side);
        let n_lo = (a / cell + 0.5).floor() as u32;
        let n_hi = (b / cell + 0.5).floor() as u32;
        let mut total = 0.0;
        for n in n_lo..=n_hi {
            let center = n as f64 * cell;
            let (ulo, uhi) = self.cell_range(side, n);
            let lo = (a - center).max(ulo);
            let hi = (b - center).min(uhi);
            if hi > lo {
                let f = self.cell_factor(side, n);
                if f > 0.0 {
                    total += f * (bt.cumulative(hi) - bt.cumulative(lo));
                }
            }
        }
        total / self.norm
    }

    /// Peak-normalized `G²(τ)` from the table.
    pub fn density(&self, tau: f64) -> f64 {
        let t = tau - 0.5 * self.tau0;
        if t >= 0.0 {
            self.side_density(Side::Signal, t)
        } else {
            self.side_density(Side::Idler, -t)
        }
    }

    /// `∫_a^b G²(τ)/G²_peak dτ`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let h = 0.5 * self.tau0;
        self.side_integral(Side::Signal, a - h, b - h) + self.side_integral(Side::Idler, h - b, h - a)
    }

    /// Mean normalized `G²` over `count` consecutive bins starting at `lower`.
    pub fn bin_means(&self, lower: f64, width: f64, count: usize) -> Vec<f64> {
        (0..count)
            .map(|k| {
                let a = lower + k as f64 * width;
                self.integral(a, a + width) / width
            })
            .collect()
    }

    /// Masses of every cell within `window` of `τ₀/2`, both sides.
    pub fn cell_masses(&self, window: f64) -> Vec<CellMass> {
        let mut out = Vec::new();
        for side in [Side::Signal, Side::Idler] {
            let (bt, cell) = self.branch(side);
            let n_max = (window / cell + 0.5).floor() as u32;
            for n in 0..=n_max {
                let center = n as f64 * cell;
                let (ulo, uhi) = self.cell_range(side, n);
                let uhi = uhi.min(window - center);
                let f = self.cell_factor(side, n);
                let mass = if uhi > ulo && f > 0.0 {
                    f * (bt.cumulative(uhi) - bt.cumulative(ulo)) / self.norm
                } else {
                    0.0
                };
                out.push(CellMass { side, index: n, mass });
            }
        }
        out
    }

    /// Delay inside cell (`side`, `n`) at quantile `unit ∈ [0, 1)` of the cell's
    /// mass, with the cell's upper edge clipped at `window`.
    pub fn delay_in_cell(&self, side: Side, n: u32, unit: f64, window: f64) -> f64 {
        let (bt, cell) = self.branch(side);
        let center = n as f64 * cell;
        let (ulo, uhi) = self.cell_range(side, n);
        let uhi = uhi.min(window - center);
        let c_lo = bt.cumulative(ulo);
        let c_hi = bt.cumulative(uhi);
        let u = bt.invert(c_lo + unit * (c_hi - c_lo)).clamp(ulo, uhi);
        let v = center + u;
        match side {
            Side::Signal => 0.5 * self.tau0 + v,
            Side::Idler => 0.5 * self.tau0 - v,
        }
    }
}
