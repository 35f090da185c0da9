//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdc_cli::{cmd_correlate, cmd_fit_envelope, cmd_model, cmd_simulate, model_from, FitReport, ModelGrid, ModelOverrides};
use spdc_core::analysis::{correlate, correlate_chunked, Histogram};
use spdc_core::cavity::CavityConfig;
use spdc_core::correlation::{complex_sinc, g2_cross, ModeDenominator, ModeSum, PairCorrelationModel};
use spdc_core::timetag::{Channel, DelaySampler, DetectorConfig, SimRun};
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let dt = t.elapsed();
    o.detail.push_str(&format!("; runtime {:.2} s (limit {} s)", dt.as_secs_f64(), limit.as_secs()));
    o.pass &= dt <= limit;
    o
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

fn pdc_model(overrides: &ModelOverrides) -> PairCorrelationModel {
    model_from(&CavityConfig::pdc_reference(), overrides).unwrap()
}

// 1 -------------------------------------------------------------------------

fn spectral_chain() -> Outcome {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pdc_cavity.json");
    let out = Command::new(env!("CARGO_BIN_EXE_spdc")).args(["params", "--cavity"]).arg(&cfg).output().unwrap();
    if !out.status.success() {
        return outcome(false, format!("params failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = &v["fundamental"];
    let finesse = f["finesse"].as_f64().unwrap();
    let linewidth = f["linewidth_fwhm"].as_f64().unwrap();
    let escape = f["escape_efficiency"].as_f64().unwrap();
    let loss = f["total_round_trip_loss"].as_f64().unwrap();
    let ratio = v["pump_to_fundamental_fsr_ratio"].as_f64().unwrap();
    let pass = within(finesse, 181.0, 0.02)
        && within(linewidth, 667e3, 0.02)
        && (escape - 0.29).abs() <= 0.01
        && (loss - 0.0347).abs() < 1e-12
        && ratio == 2.0;
    outcome(
        pass,
        format!("finesse {finesse:.2}, linewidth {:.1} kHz, escape {escape:.4}, loss {loss:.4}, FSR ratio {ratio}", linewidth / 1e3),
    )
}

// 2 -------------------------------------------------------------------------

fn comb_structure() -> Outcome {
    let model = pdc_model(&ModelOverrides { modes: Some(2000), ..Default::default() });
    let grid = ModelGrid { tau_range: 1e-6, step: 200.2e-12, ..ModelGrid::default() };
    let curve = cmd_model(&model, &grid).unwrap();
    let peaks = curve.local_maxima(1e-4);
    let taus: Vec<f64> = peaks.iter().map(|&k| curve.taus[k]).collect();
    let gaps: Vec<f64> = taus.windows(2).map(|w| w[1] - w[0]).collect();
    let worst = gaps.iter().map(|g| (g - 8.28e-9).abs()).fold(0.0, f64::max);
    let mean = (taus[taus.len() - 1] - taus[0]) / gaps.len() as f64;
    // every tooth between −1 µs and +1 µs
    let expected = 2 * (1e-6 * model.fsr_s).floor() as usize + 1;
    let pass = worst <= grid.step && peaks.len() >= expected && taus[0] < -0.99e-6 && taus[taus.len() - 1] > 0.99e-6;
    outcome(
        pass,
        format!(
            "{} peaks (expect {expected}), mean spacing {:.4} ns, worst deviation from 8.28 ns {:.1} ps",
            peaks.len(),
            mean * 1e9,
            worst * 1e12
        ),
    )
}

// 3 -------------------------------------------------------------------------

fn bandwidth_round_trip() -> Outcome {
    let model = pdc_model(&ModelOverrides { gamma: Some(666e3), ..Default::default() });
    let det = DetectorConfig::default();
    let run = SimRun::new(312_000.0 / 660.0, 660.0, 2024);
    let stream = cmd_simulate(&model, 0.0, &run, &det).unwrap();
    let hist = cmd_correlate(&stream, 8.2e-9, 1e-6).unwrap();
    let report = cmd_fit_envelope(&hist, &model, det.difference_jitter(run.tick_duration)).unwrap();
    let FitReport::Envelope { fit, correlation_time_fwhm, .. } = report else { unreachable!() };
    let sides = [(fit.delta_nu_s, fit.delta_nu_s_err), (fit.delta_nu_i, fit.delta_nu_i_err)];
    let pass = sides.iter().all(|&(nu, e)| e > 0.0 && e <= 30e3 && (nu - 666e3).abs() <= 3.0 * e)
        && correlation_time_fwhm.iter().all(|&t| within(t, 331e-9, 0.05));
    outcome(
        pass,
        format!(
            "{} pairs in ±1 µs; Δν_s {:.1} ± {:.1} kHz, Δν_i {:.1} ± {:.1} kHz; FWHM {:.1} / {:.1} ns; χ²/dof {:.3}",
            hist.total_pairs,
            fit.delta_nu_s / 1e3,
            fit.delta_nu_s_err / 1e3,
            fit.delta_nu_i / 1e3,
            fit.delta_nu_i_err / 1e3,
            correlation_time_fwhm[0] * 1e9,
            correlation_time_fwhm[1] * 1e9,
            fit.goodness
        ),
    )
}

// 4 -------------------------------------------------------------------------

/// Integrated curve within ±1 ns of `tau`.
fn tooth(taus: &[f64], values: &[f64], step: f64, tau: f64) -> f64 {
    let k = ((tau - taus[0]) / step).round() as i64;
    let reach = (1e-9 / step).ceil() as i64;
    (k - reach..=k + reach)
        .filter(|&j| j >= 0 && (j as usize) < values.len())
        .map(|j| values[j as usize])
        .sum()
}

/// Delay of the first maximum of the odd-tooth share
/// `odd / (odd + mean of neighbouring even)` on the side selected by `sign`.
/// The share is periodic in the tooth index, so later maxima repeat it.
fn odd_share_maximum(model: &PairCorrelationModel, delta_alpha: f64, sign: f64) -> Option<f64> {
    let grid = ModelGrid { tau_range: 450e-9, step: 200.2e-12, delta_alpha, ..ModelGrid::default() };
    let c = cmd_model(model, &grid).unwrap();
    let half = 0.5 / model.fsr_s;
    let at = |n: i64| tooth(&c.taus, &c.values, grid.step, sign * n as f64 * half + 0.5 * model.tau0);
    let n_max = (0.95 * grid.tau_range / half) as i64;
    let share: Vec<(i64, f64)> = (1..n_max)
        .step_by(2)
        .map(|n| {
            let odd = at(n);
            (n, odd / (odd + 0.5 * (at(n - 1) + at(n + 1))))
        })
        .collect();
    share
        .windows(3)
        .find(|w| w[1].1 >= w[0].1 && w[1].1 > w[2].1 && w[1].1 > 0.5)
        .map(|w| w[1].0 as f64 * half)
}

/// Two-sided Poisson p-value of `observed` counts against mean `mu`.
fn poisson_p(observed: u64, mu: f64) -> f64 {
    let d = Poisson::new(mu).unwrap();
    let lower = d.cdf(observed);
    let upper = 1.0 - if observed == 0 { 0.0 } else { d.cdf(observed - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

/// Counts within ±1 ns of odd-tooth positions and their accidental expectation.
fn odd_counts(hist: &Histogram, model: &PairCorrelationModel, singles: (usize, usize), duration: f64) -> (u64, f64) {
    let half = 0.5 / model.fsr_s;
    let mut bins = 0usize;
    let mut n = 0u64;
    for (k, &c) in hist.counts.iter().enumerate() {
        let x = (hist.bin_center(k) - 0.5 * model.tau0) / half;
        let m = x.round();
        if (m as i64).rem_euclid(2) == 1 && ((x - m) * half).abs() <= 1e-9 {
            bins += 1;
            n += c;
        }
    }
    let per_bin = singles.0 as f64 * singles.1 as f64 * hist.bin_width / duration;
    (n, bins as f64 * per_bin)
}

fn hwp_detuning() -> Outcome {
    let model = pdc_model(&ModelOverrides::default());
    let mut pass = true;
    let mut detail = Vec::new();
    for (da, label, target) in [(2.0 / 3.0, "2/3°", 279e-9), (4.0 / 3.0, "4/3°", 140e-9), (2.0, "2°", 93e-9)] {
        for sign in [1.0, -1.0] {
            let t = odd_share_maximum(&model, da, sign).unwrap_or(f64::NAN);
            let ok = (t - target).abs() <= 1.0 / model.fsr_s && (da > 1.0 || t > 150e-9);
            pass &= ok;
            if sign > 0.0 {
                detail.push(format!("{label}: ±{:.1} ns", t * 1e9));
            }
        }
    }

    let det = DetectorConfig::default();
    let run = SimRun::new(473.0, 660.0, 77);
    let mut significance = Vec::new();
    for da in [0.0, 2.0] {
        let stream = cmd_simulate(&model, da, &run, &det).unwrap();
        let hist = cmd_correlate(&stream, 200.2e-12, 300e-9).unwrap();
        let singles = (stream.count(Channel::Signal), stream.count(Channel::Idler));
        let (n, mu) = odd_counts(&hist, &model, singles, run.duration);
        significance.push((da, n, mu, poisson_p(n, mu)));
    }
    let (_, n0, mu0, p0) = significance[0];
    let (_, n2, mu2, p2) = significance[1];
    pass &= p0 > 0.01 && p2 < 1e-6;
    detail.push(format!(
        "odd-tooth counts at 0°: {n0} vs {mu0:.1} accidental (p = {p0:.3}); at 2°: {n2} vs {mu2:.1} (p = {p2:.1e})"
    ));
    outcome(pass, detail.join(", "))
}

// 5 -------------------------------------------------------------------------

fn brute_force(signal: &[u64], idler: &[u64], tick: f64, bw: f64, window: f64) -> (Vec<u64>, u64) {
    let bins = Histogram::bin_count(bw, window).unwrap();
    let mut counts = vec![0u64; bins];
    let limit = (window / tick).ceil() as i128 + 1;
    for &s in signal {
        for &i in idler {
            let d = i as i128 - s as i128;
            if d.abs() > limit {
                continue;
            }
            let k = ((d as f64 * tick + window) / bw).floor();
            if k >= 0.0 && (k as usize) < bins {
                counts[k as usize] += 1;
            }
        }
    }
    let total = counts.iter().sum();
    (counts, total)
}

fn random_tags(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..=span)).collect();
    v.sort_unstable();
    v
}

fn correlator_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut pairs = 0u64;
    for trial in 0..200 {
        let (ns, ni) = if trial == 0 { (10_000, 10_000) } else { (rng.random_range(0..=10_000), rng.random_range(0..=10_000)) };
        let tick = [1e-12, 100.1e-12, 81e-12][trial % 3];
        let bw = [8.2e-9, 200.2e-12, 1e-9][trial % 2 + trial % 3 / 2];
        let window = [1e-6, 300e-9][trial % 2];
        // a few window-widths per matched neighbour on average
        let density = rng.random_range(0.1..10.0) / (2.0 * window / tick);
        let span = ((ns.max(ni).max(1) as f64) / density) as u64 + 1;
        let s = random_tags(&mut rng, ns, span);
        let i = random_tags(&mut rng, ni, span);
        let (oracle, total) = brute_force(&s, &i, tick, bw, window);
        let h = correlate(&s, &i, tick, bw, window).unwrap();
        let chunks = rng.random_range(1..=16);
        let c = correlate_chunked(&s, &i, tick, bw, window, chunks).unwrap();
        pairs += total;
        if h.counts != oracle || h.total_pairs != total || c.counts != oracle || c.total_pairs != total {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("(a) {mismatches}/200 mismatches over {pairs} pairs"))
}

/// Term-by-term double mode sum.
fn direct_double_sum(model: &PairCorrelationModel, tau: f64) -> f64 {
    let m = model.mode_cutoff as i64;
    let pref = (model.gamma_s * model.gamma_i * model.omega_s * model.omega_i).sqrt();
    let t = tau - model.tau0 / 2.0;
    // e^{−2πΓt} for Γ = γ/2 + i·m·fsr; the phase m·fsr·t is reduced as
    // m·frac(fsr·t) so each term carries the same rounding of fsr·t
    let decay = |g: Complex64, fsr: f64, m: i64, t: f64| {
        let x = fsr * t;
        let phase = (m as f64 * (x - x.floor())).rem_euclid(1.0);
        (-2.0 * PI * g.re * t).exp() * Complex64::from_polar(1.0, -2.0 * PI * phase)
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for ms in -m..=m {
        let gs = Complex64::new(model.gamma_s / 2.0, ms as f64 * model.fsr_s);
        for mi in -m..=m {
            let gi = Complex64::new(model.gamma_i / 2.0, mi as f64 * model.fsr_i);
            let den = match model.denominator {
                ModeDenominator::Sum => gs + gi,
                ModeDenominator::Product => gs * gi,
            };
            let branch = if t >= 0.0 {
                decay(gs, model.fsr_s, ms, t) * complex_sinc(Complex64::i() * PI * model.tau0 * gs)
            } else {
                decay(gi, model.fsr_i, mi, -t) * complex_sinc(Complex64::i() * PI * model.tau0 * gi)
            };
            acc += pref / den * branch;
        }
    }
    acc.norm_sqr()
}

fn mode_sum_oracle() -> (bool, String) {
    let base = PairCorrelationModel::symmetric(667e3, 120.8e6, 7.5e-12, 25);
    let mut asym = base;
    asym.gamma_i = 900e3;
    asym.fsr_i = 121.3e6;
    asym.omega_i *= 1.001;
    let product = PairCorrelationModel { denominator: ModeDenominator::Product, ..base };
    let wide = PairCorrelationModel { tau0: 1.3e-9, mode_cutoff: 12, ..base };
    let single = PairCorrelationModel { mode_cutoff: 0, ..base };
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut worst: f64 = 0.0;
    for model in [base, asym, product, wide, single] {
        for _ in 0..100 {
            let tau = rng.random_range(-300e-9..300e-9);
            let fast = g2_cross(&model, tau).unwrap();
            let slow = direct_double_sum(&model, tau);
            worst = worst.max((fast - slow).abs() / slow);
        }
    }
    (worst <= 1e-10, format!("(b) worst relative error {worst:.2e}"))
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Pearson chi-square p-value, merging neighbouring cells to ≥ 5 expected.
fn chi_square_p(observed: &[u64], expected_mass: &[f64]) -> (f64, usize) {
    let n: u64 = observed.iter().sum();
    let total: f64 = expected_mass.iter().sum();
    let (mut chi2, mut cells) = (0.0, 0usize);
    let (mut e, mut o) = (0.0, 0.0);
    for k in 0..observed.len() {
        e += n as f64 * expected_mass[k] / total;
        o += observed[k] as f64;
        if e >= 5.0 || k == observed.len() - 1 {
            chi2 += (o - e).powi(2) / e.max(1e-300);
            cells += 1;
            e = 0.0;
            o = 0.0;
        }
    }
    (ChiSquared::new((cells - 1) as f64).unwrap().sf(chi2), cells)
}

fn sampler_chi_square() -> (bool, String) {
    // resolved shape: wide teeth, fast decay, 100 ps cells
    let wide = PairCorrelationModel::symmetric(20e6, 120.8e6, 1e-9, 30);
    let sum = ModeSum::new(&wide).unwrap();
    let sampler = DelaySampler::new(&wide, None).unwrap();
    let (w, h) = (sampler.window(), 0.5 * wide.tau0);
    let bins = 5000;
    let bw = 2.0 * w / bins as f64;
    let lo = h - w;
    let mass: Vec<f64> = (0..bins)
        .map(|k| simpson(&|t| sum.g2(t).unwrap(), lo + k as f64 * bw, lo + (k + 1) as f64 * bw, 8))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut observed = vec![0u64; bins];
    for _ in 0..1_000_000 {
        let t: f64 = sampler.sample(&mut rng);
        let k = ((t - lo) / bw).floor() as usize;
        observed[k.min(bins - 1)] += 1;
    }
    let (p_wide, cells) = chi_square_p(&observed, &mass);

    // narrow teeth: per-tooth counts against the e^{−2πγ nT} ladder
    let reference = pdc_model(&ModelOverrides { gamma: Some(666e3), ..Default::default() });
    let sampler = DelaySampler::new(&reference, None).unwrap();
    let period = 1.0 / reference.fsr_s;
    let n_max = ((sampler.window() - 0.5 * period) / period).floor() as usize;
    let mut teeth = vec![0u64; n_max + 1];
    for _ in 0..1_000_000 {
        let t: f64 = sampler.sample(&mut rng);
        let n = ((t - 0.5 * reference.tau0) / period).round().abs() as usize;
        if n <= n_max {
            teeth[n] += 1;
        }
    }
    let ladder: Vec<f64> = (0..=n_max)
        .map(|n| if n == 0 { 1.0 } else { 2.0 * (-2.0 * PI * reference.gamma_s * n as f64 * period).exp() })
        .collect();
    let (p_teeth, tooth_cells) = chi_square_p(&teeth, &ladder);
    (
        p_wide > 0.01 && p_teeth > 0.01,
        format!("(c) p = {p_wide:.3} over {cells} cells (resolved shape), p = {p_teeth:.3} over {tooth_cells} teeth"),
    )
}

fn oracle_equivalences() -> Outcome {
    let parts = [correlator_oracle(), mode_sum_oracle(), sampler_chi_square()];
    outcome(parts.iter().all(|p| p.0), parts.iter().map(|p| p.1.clone()).collect::<Vec<_>>().join(", "))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 5] = [
        ("1 spectral chain", 1, spectral_chain),
        ("2 comb structure", 10, comb_structure),
        ("3 bandwidth round trip", 60, bandwidth_round_trip),
        ("4 HWP detuning", 30, hwp_detuning),
        ("5 oracle equivalences", 120, oracle_equivalences),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let o = timed(Duration::from_secs(limit), f);
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("N/A  criterion 6 physical measurement: real detector data are outside a software reproduction; covered by 1-5");
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
