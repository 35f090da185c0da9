//! `spdc` command-line front end.
//!
//! Every subcommand is a thin wrapper around a `cmd_*` function that returns
//! plain data, so the same code paths are exercised from tests. Files are
//! written under `--out`; errors map onto the exit codes in [`CliError::exit_code`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spdc_core::analysis::{
    correlate_stream, fit_envelope, fit_full_model, BandwidthFit, EnvelopeOptions, FullFit, FullFitOptions, Histogram,
    HistogramMeta,
};
use spdc_core::cavity::{derive_spectral_params, CavityConfig, SpectralParams, WavelengthRole};
use spdc_core::correlation::{
    correlation_time_fwhm, g2_curve_with_hwp, tau_grid, CombTable, CorrelationCurve, HwpConfig, PairCorrelationModel,
};
use spdc_core::timetag::{self, simulate_stream, DetectorConfig, SimRun, TimeTagStream, DEFAULT_TICK_DURATION};

pub mod figures;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    /// Core errors raised while reading a data file: malformed JSON counts as
    /// a format error too.
    fn data(e: spdc_core::Error) -> Self {
        match e {
            spdc_core::Error::Json(e) => CliError::Data(format!("malformed JSON: {e}")),
            other => other.into(),
        }
    }
}

impl From<spdc_core::Error> for CliError {
    fn from(e: spdc_core::Error) -> Self {
        use spdc_core::Error as E;
        match e {
            E::Format { .. } | E::Unsorted { .. } => CliError::Data(e.to_string()),
            E::FitDegenerate(_) | E::FitFailed { .. } => CliError::Fit(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "spdc", version, about = "Cavity-enhanced SPDC source: model, simulate, correlate, fit")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derived spectral parameters of a cavity, as JSON.
    Params(ParamsArgs),
    /// Normalized model correlation curve, as CSV.
    Model(ModelArgs),
    /// Simulate a two-channel time-tag stream.
    Simulate(SimulateArgs),
    /// Histogram signal/idler delays of a time-tag file.
    Correlate(CorrelateArgs),
    /// Fit a coincidence histogram.
    Fit(FitArgs),
    /// Write the CSV data behind the HWP-detuning and bandwidth figures.
    ReproduceFigures(FiguresArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CavityArgs {
    /// Cavity config JSON (default: built-in PDC cavity).
    #[arg(long)]
    pub cavity: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Overrides applied on top of the cavity-derived model.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOverrides {
    /// Linewidth (FWHM) of both photons, Hz.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma_s: Option<f64>,
    #[arg(long)]
    pub gamma_i: Option<f64>,
    /// Signal/idler crystal delay, s.
    #[arg(long)]
    pub tau0: Option<f64>,
    /// Free spectral range of both photons, Hz.
    #[arg(long)]
    pub fsr: Option<f64>,
    /// Mode cutoff M.
    #[arg(long)]
    pub modes: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, mut m: PairCorrelationModel) -> Result<PairCorrelationModel> {
        if let Some(g) = self.gamma {
            m.gamma_s = g;
            m.gamma_i = g;
        }
        m.gamma_s = self.gamma_s.unwrap_or(m.gamma_s);
        m.gamma_i = self.gamma_i.unwrap_or(m.gamma_i);
        m.tau0 = self.tau0.unwrap_or(m.tau0);
        if let Some(f) = self.fsr {
            m.fsr_s = f;
            m.fsr_i = f;
        }
        m.mode_cutoff = self.modes.unwrap_or(m.mode_cutoff);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    #[arg(long, default_value_t = 1.0)]
    pub efficiency_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub efficiency_i: f64,
    /// Dark-count rate per detector, Hz.
    #[arg(long, default_value_t = 100.0)]
    pub dark_rate: f64,
    /// Per-detector Gaussian timing jitter, s.
    #[arg(long, default_value_t = 350e-12)]
    pub jitter: f64,
}

impl DetectorArgs {
    pub fn config(&self) -> Result<DetectorConfig> {
        let det = DetectorConfig {
            efficiency_s: self.efficiency_s,
            efficiency_i: self.efficiency_i,
            dark_rate_s: self.dark_rate,
            dark_rate_i: self.dark_rate,
            jitter_sigma: self.jitter,
        };
        det.validate()?;
        Ok(det)
    }
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub cavity: CavityArgs,
    /// Also write `params.json` under this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampling {
    /// Mean over each grid cell, the shape a histogram with that bin width sees.
    Bin,
    /// Value at each grid point.
    Point,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub cavity: CavityArgs,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    /// Half-width of the delay grid, s.
    #[arg(long, default_value_t = 1e-6)]
    pub tau_range: f64,
    /// Grid step, s.
    #[arg(long, default_value_t = 200.2e-12)]
    pub step: f64,
    /// HWP detuning from the optimum, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub delta_alpha: f64,
    #[arg(long, value_enum, default_value_t = Sampling::Bin)]
    pub sampling: Sampling,
    /// Gaussian smoothing of the delay, s (bin sampling only).
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamFormat {
    Ptag,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cavity: CavityArgs,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    #[arg(long, default_value_t = 0.0)]
    pub delta_alpha: f64,
    /// Pair-generation rate, Hz.
    #[arg(long, default_value_t = 473.0)]
    pub rate: f64,
    /// Integration time, s.
    #[arg(long, default_value_t = 660.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time-tag resolution, s.
    #[arg(long, default_value_t = DEFAULT_TICK_DURATION)]
    pub tick: f64,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, value_enum, default_value_t = StreamFormat::Ptag)]
    pub format: StreamFormat,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Time-tag file (`.ptag` binary or `.csv`).
    #[arg(long)]
    pub input: PathBuf,
    /// Tick duration of CSV input, s.
    #[arg(long, default_value_t = DEFAULT_TICK_DURATION)]
    pub tick: f64,
    /// Bin width, s.
    #[arg(long, default_value_t = 8.2e-9)]
    pub bin: f64,
    /// Half-width of the delay window, s.
    #[arg(long, default_value_t = 1e-6)]
    pub window: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    /// Two-sided exponential comb envelope.
    Envelope,
    /// Binned correlation model with free linewidths, delay and FSR.
    Full,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Histogram CSV written by `correlate`.
    #[arg(long)]
    pub histogram: PathBuf,
    /// JSON sidecar (default: the histogram path with a `.json` extension).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FitMode::Envelope)]
    pub mode: FitMode,
    #[command(flatten)]
    pub cavity: CavityArgs,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    /// HWP detuning assumed by the full fit, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub delta_alpha: f64,
    /// Delay-difference jitter, s (default: two 350 ps detectors plus tick rounding).
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Keep the FSR at its starting value (full fit).
    #[arg(long)]
    pub fix_fsr: bool,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[command(flatten)]
    pub cavity: CavityArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn load_cavity(args: &CavityArgs) -> Result<CavityConfig> {
    match &args.cavity {
        None => Ok(CavityConfig::pdc_reference()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            CavityConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        }
    }
}

pub fn model_from(cavity: &CavityConfig, overrides: &ModelOverrides) -> Result<PairCorrelationModel> {
    overrides.apply(PairCorrelationModel::from_cavity(cavity)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamsReport {
    pub name: Option<String>,
    pub fundamental: SpectralParams,
    /// Absent when the cavity is not resonant for the pump.
    pub pump: Option<SpectralParams>,
    pub pump_to_fundamental_fsr_ratio: Option<f64>,
    /// Signal/idler crystal delay, s.
    pub signal_idler_delay: f64,
    /// `ln2/(π·linewidth)`, s.
    pub correlation_time_fwhm: f64,
}

pub fn cmd_params(cavity: &CavityConfig) -> Result<ParamsReport> {
    let fundamental = derive_spectral_params(cavity, WavelengthRole::Fundamental)?;
    let pump = if cavity.pump_resonant {
        Some(derive_spectral_params(cavity, WavelengthRole::Pump)?)
    } else {
        None
    };
    Ok(ParamsReport {
        name: cavity.name.clone(),
        fundamental,
        pump,
        pump_to_fundamental_fsr_ratio: pump.map(|p| p.fsr / fundamental.fsr),
        signal_idler_delay: cavity.signal_idler_delay(),
        correlation_time_fwhm: correlation_time_fwhm(fundamental.linewidth_fwhm),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelGrid {
    pub tau_range: f64,
    pub step: f64,
    pub delta_alpha: f64,
    pub sampling: Sampling,
    pub jitter: f64,
}

impl Default for ModelGrid {
    fn default() -> Self {
        Self { tau_range: 1e-6, step: 200.2e-12, delta_alpha: 0.0, sampling: Sampling::Bin, jitter: 0.0 }
    }
}

pub fn cmd_model(model: &PairCorrelationModel, grid: &ModelGrid) -> Result<CorrelationCurve> {
    let hwp = HwpConfig::new(grid.delta_alpha)?;
    if !(grid.tau_range > 0.0) {
        return Err(CliError::Usage(format!("tau range {:e} must be > 0", grid.tau_range)));
    }
    let r = grid.tau_range;
    match grid.sampling {
        Sampling::Point => Ok(g2_curve_with_hwp(model, &hwp, -r, r, grid.step)?),
        Sampling::Bin => {
            let taus = tau_grid(-r, r, grid.step)?;
            let overlay = (hwp.delta_alpha > 0.0).then_some(&hwp);
            let table = CombTable::new(model, overlay, grid.jitter)?;
            let raw = table.bin_means(-r - 0.5 * grid.step, grid.step, taus.len());
            let max = raw.iter().copied().fold(0.0, f64::max);
            if !(max > 0.0) {
                return Err(CliError::Usage("model curve is identically zero on this grid".into()));
            }
            Ok(CorrelationCurve { taus, values: raw.into_iter().map(|v| v / max).collect() })
        }
    }
}

pub fn cmd_simulate(
    model: &PairCorrelationModel,
    delta_alpha: f64,
    run: &SimRun,
    det: &DetectorConfig,
) -> Result<TimeTagStream> {
    let hwp = HwpConfig::new(delta_alpha)?;
    let overlay = (hwp.delta_alpha > 0.0).then_some(&hwp);
    Ok(simulate_stream(run, model, overlay, det)?)
}

pub fn read_stream(path: &Path, csv_tick: f64) -> Result<TimeTagStream> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let stream = if is_csv {
        timetag::read_csv(BufReader::new(file), csv_tick)
    } else {
        timetag::read_ptag(BufReader::new(file))
    };
    stream.map_err(CliError::data)
}

pub fn cmd_correlate(stream: &TimeTagStream, bin_width: f64, window: f64) -> Result<Histogram> {
    Ok(correlate_stream(stream, bin_width, window)?)
}

pub fn read_histogram(csv: &Path, meta: Option<&Path>) -> Result<Histogram> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("json"));
    let text = std::fs::read_to_string(&meta_path).map_err(|e| io_error(&meta_path, e))?;
    let meta: HistogramMeta =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;
    let file = File::open(csv).map_err(|e| io_error(csv, e))?;
    Histogram::read_csv(BufReader::new(file), &meta).map_err(|e| match CliError::data(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", csv.display())),
        other => other,
    })
}

/// Delay-difference jitter of two default detectors read out at `tick`.
pub fn default_difference_jitter(tick: Option<f64>) -> f64 {
    DetectorConfig::default().difference_jitter(tick.unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FitReport {
    Envelope {
        #[serde(flatten)]
        fit: BandwidthFit,
        /// `ln2/(πΔν)` for signal and idler side, s.
        correlation_time_fwhm: [f64; 2],
        options: EnvelopeOptions,
    },
    Full {
        #[serde(flatten)]
        fit: FullFit,
        options: FullFitOptions,
    },
}

pub fn cmd_fit_envelope(hist: &Histogram, model: &PairCorrelationModel, jitter: f64) -> Result<FitReport> {
    let opts = EnvelopeOptions { jitter_sigma: jitter, tau0: model.tau0, ..EnvelopeOptions::new(model.fsr_s) };
    let fit = fit_envelope(hist, &opts)?;
    let (s, i) = fit.correlation_time_fwhm();
    Ok(FitReport::Envelope { fit, correlation_time_fwhm: [s, i], options: opts })
}

pub fn cmd_fit_full(hist: &Histogram, initial: &PairCorrelationModel, opts: &FullFitOptions) -> Result<FitReport> {
    let fit = fit_full_model(hist, initial, opts)?;
    Ok(FitReport::Full { fit, options: *opts })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub(crate) fn write_histogram(hist: &Histogram, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    let mut w = create(&csv)?;
    hist.write_csv(&mut w)?;
    w.flush().map_err(|e| io_error(&csv, e))?;
    write_json(&json, &hist.meta())?;
    Ok((csv, json))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Params(a) => {
            let report = cmd_params(&load_cavity(&a.cavity)?)?;
            if let Some(dir) = &a.out {
                ensure_dir(dir)?;
                write_json(&dir.join("params.json"), &report)?;
            }
            print_json(&report)
        }
        Command::Model(a) => {
            let model = model_from(&load_cavity(&a.cavity)?, &a.overrides)?;
            let grid = ModelGrid {
                tau_range: a.tau_range,
                step: a.step,
                delta_alpha: a.delta_alpha,
                sampling: a.sampling,
                jitter: a.jitter,
            };
            let curve = cmd_model(&model, &grid)?;
            ensure_dir(&a.out.out)?;
            let path = a.out.out.join("model.csv");
            let mut w = create(&path)?;
            curve.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))?;
            eprintln!("wrote {} ({} points)", path.display(), curve.len());
            Ok(())
        }
        Command::Simulate(a) => {
            let model = model_from(&load_cavity(&a.cavity)?, &a.overrides)?;
            let run = SimRun { tick_duration: a.tick, ..SimRun::new(a.rate, a.duration, a.seed) };
            let stream = cmd_simulate(&model, a.delta_alpha, &run, &a.detector.config()?)?;
            ensure_dir(&a.out.out)?;
            let path = match a.format {
                StreamFormat::Ptag => a.out.out.join("stream.ptag"),
                StreamFormat::Csv => a.out.out.join("stream.csv"),
            };
            let mut w = create(&path)?;
            match a.format {
                StreamFormat::Ptag => timetag::write_ptag(&stream, &mut w)?,
                StreamFormat::Csv => timetag::write_csv(&stream, &mut w)?,
            }
            w.flush().map_err(|e| io_error(&path, e))?;
            eprintln!("wrote {} ({} records)", path.display(), stream.len());
            Ok(())
        }
        Command::Correlate(a) => {
            let stream = read_stream(&a.input, a.tick)?;
            let hist = cmd_correlate(&stream, a.bin, a.window)?;
            ensure_dir(&a.out.out)?;
            let (csv, _) = write_histogram(&hist, &a.out.out, "histogram")?;
            eprintln!("wrote {} ({} bins, {} pairs)", csv.display(), hist.len(), hist.total_pairs);
            Ok(())
        }
        Command::Fit(a) => {
            let hist = read_histogram(&a.histogram, a.meta.as_deref())?;
            let model = model_from(&load_cavity(&a.cavity)?, &a.overrides)?;
            let jitter = a.jitter.unwrap_or_else(|| default_difference_jitter(hist.tick_duration));
            let report = match a.mode {
                FitMode::Envelope => cmd_fit_envelope(&hist, &model, jitter)?,
                FitMode::Full => {
                    let hwp = HwpConfig::new(a.delta_alpha)?;
                    let opts = FullFitOptions {
                        jitter_sigma: jitter,
                        fix_fsr: a.fix_fsr,
                        hwp: (hwp.delta_alpha > 0.0).then_some(hwp),
                        max_iterations: a.max_iterations,
                    };
                    cmd_fit_full(&hist, &model, &opts)?
                }
            };
            ensure_dir(&a.out.out)?;
            write_json(&a.out.out.join("fit.json"), &report)?;
            print_json(&report)
        }
        Command::ReproduceFigures(a) => {
            let cavity = load_cavity(&a.cavity)?;
            ensure_dir(&a.out.out)?;
            let summary = figures::reproduce(&cavity, &figures::FigureOptions { seed: a.seed, ..Default::default() }, &a.out.out)?;
            print_json(&summary)
        }
    }
}
