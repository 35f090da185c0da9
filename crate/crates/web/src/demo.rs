use serde::Serialize;
use spdc_core::analysis::{correlate_stream, fit_envelope, EnvelopeOptions};
use spdc_core::cavity::{derive_spectral_params, CavityConfig, SpectralParams, WavelengthRole};
use spdc_core::correlation::{correlation_time_fwhm, default_mode_cutoff, tau_grid, CombTable, HwpConfig, PairCorrelationModel};
use spdc_core::timetag::{simulate_stream, DetectorConfig, SimRun};

/// Pairs above which a simulation would stall the page.
pub const MAX_PAIRS: f64 = 2e6;
const FSR: f64 = 120.8e6;

pub fn reference_config() -> String {
    serde_json::to_string_pretty(&CavityConfig::pdc_reference()).expect("serializable")
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamsReport {
    pub fundamental: SpectralParams,
    pub pump: Option<SpectralParams>,
    pub signal_idler_delay: f64,
    pub correlation_time_fwhm: f64,
}

pub fn params(config_json: &str) -> Result<ParamsReport, String> {
    let cfg = CavityConfig::from_json(config_json).map_err(|e| e.to_string())?;
    let fundamental = derive_spectral_params(&cfg, WavelengthRole::Fundamental).map_err(|e| e.to_string())?;
    let pump = if cfg.pump_resonant {
        Some(derive_spectral_params(&cfg, WavelengthRole::Pump).map_err(|e| e.to_string())?)
    } else {
        None
    };
    Ok(ParamsReport {
        fundamental,
        pump,
        signal_idler_delay: cfg.signal_idler_delay(),
        correlation_time_fwhm: correlation_time_fwhm(fundamental.linewidth_fwhm),
    })
}

pub fn params_json(config_json: &str) -> Result<String, String> {
    serde_json::to_string(&params(config_json)?).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRequest {
    pub gamma: f64,
    pub tau0: f64,
    pub fsr: f64,
    pub delta_alpha: f64,
    pub tau_range: f64,
    pub step: f64,
    pub jitter: f64,
}

impl Default for CurveRequest {
    fn default() -> Self {
        Self { gamma: 667e3, tau0: 7.5e-12, fsr: FSR, delta_alpha: 0.0, tau_range: 300e-9, step: 200.2e-12, jitter: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
}

fn model(gamma: f64, tau0: f64, fsr: f64) -> Result<PairCorrelationModel, String> {
    let m = PairCorrelationModel::symmetric(gamma, fsr, tau0, default_mode_cutoff(tau0, fsr));
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

pub fn curve(req: &CurveRequest) -> Result<Curve, String> {
    let err = |e: spdc_core::Error| e.to_string();
    let m = model(req.gamma, req.tau0, req.fsr)?;
    let hwp = HwpConfig::new(req.delta_alpha).map_err(err)?;
    if !(req.tau_range > 0.0) {
        return Err("range must be > 0".into());
    }
    let taus = tau_grid(-req.tau_range, req.tau_range, req.step).map_err(err)?;
    let table = CombTable::new(&m, (req.delta_alpha > 0.0).then_some(&hwp), req.jitter).map_err(err)?;
    let raw = table.bin_means(-req.tau_range - 0.5 * req.step, req.step, taus.len());
    let max = raw.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err("curve is zero on this grid".into());
    }
    Ok(Curve { taus, values: raw.into_iter().map(|v| v / max).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRequest {
    pub gamma: f64,
    pub pair_rate: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for SimRequest {
    fn default() -> Self {
        Self { gamma: 666e3, pair_rate: 473.0, duration: 660.0, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimFit {
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub fitted: Vec<f64>,
    pub total_pairs: u64,
    pub delta_nu_s: f64,
    pub delta_nu_s_err: f64,
    pub delta_nu_i: f64,
    pub delta_nu_i_err: f64,
    pub goodness: f64,
}

pub fn simulate_fit(req: &SimRequest) -> Result<SimFit, String> {
    let err = |e: spdc_core::Error| e.to_string();
    if req.pair_rate * req.duration > MAX_PAIRS {
        return Err(format!("at most {MAX_PAIRS:e} pairs per run in the browser"));
    }
    let m = model(req.gamma, 7.5e-12, FSR)?;
    let det = DetectorConfig::default();
    let run = SimRun::new(req.pair_rate, req.duration, req.seed);
    let stream = simulate_stream(&run, &m, None, &det).map_err(err)?;
    let hist = correlate_stream(&stream, 8.2e-9, 1e-6).map_err(err)?;
    let opts = EnvelopeOptions {
        jitter_sigma: det.difference_jitter(run.tick_duration),
        tau0: m.tau0,
        ..EnvelopeOptions::new(FSR)
    };
    let fit = fit_envelope(&hist, &opts).map_err(err)?;
    Ok(SimFit {
        bin_centers: hist.centers(),
        fitted: fit.expected_counts(&hist, &opts),
        total_pairs: hist.total_pairs,
        counts: hist.counts,
        delta_nu_s: fit.delta_nu_s,
        delta_nu_s_err: fit.delta_nu_s_err,
        delta_nu_i: fit.delta_nu_i,
        delta_nu_i_err: fit.delta_nu_i_err,
        goodness: fit.goodness,
    })
}
