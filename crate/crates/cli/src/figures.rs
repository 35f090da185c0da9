//! `reproduce-figures`: simulated data plus model or fit curves for the
//! HWP-detuning sequence (fig2a–d) and the bandwidth measurement (fig3a, fig3b).

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use spdc_core::analysis::{FullFitOptions, Histogram};
use spdc_core::cavity::CavityConfig;
use spdc_core::correlation::{CombTable, HwpConfig, PairCorrelationModel};
use spdc_core::timetag::{default_window, DetectorConfig, SimRun, DEFAULT_TICK_DURATION};

use crate::{cmd_correlate, cmd_fit_envelope, cmd_fit_full, cmd_params, cmd_simulate, write_json, CliError, FitReport, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOptions {
    pub seed: u64,
    pub pair_rate: f64,
    pub duration: f64,
    pub detector: DetectorConfig,
    pub tick: f64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self { seed: 1, pair_rate: 473.0, duration: 660.0, detector: DetectorConfig::default(), tick: DEFAULT_TICK_DURATION }
    }
}

/// HWP detunings of the four-panel sequence, degrees.
pub const FIG2_DETUNINGS: [(&str, f64); 4] =
    [("fig2a", 0.0), ("fig2b", 2.0 / 3.0), ("fig2c", 4.0 / 3.0), ("fig2d", 2.0)];
const FIG2_BIN: f64 = 200.2e-12;
const FIG2_WINDOW: f64 = 300e-9;
const FIG3A_BIN: f64 = 8.2e-9;
const FIG3A_WINDOW: f64 = 1e-6;
const FIG3B_BIN: f64 = 200.2e-12;
const FIG3B_WINDOW: f64 = 200e-9;

#[derive(Debug, Clone, Serialize)]
pub struct FiguresSummary {
    pub files: Vec<String>,
    pub pairs_in_window: u64,
    pub delta_nu_s: f64,
    pub delta_nu_s_err: f64,
    pub delta_nu_i: f64,
    pub delta_nu_i_err: f64,
    pub full_fit_goodness: f64,
}

/// Expected counts per bin of `hist` for a run of `model`: accidentals from
/// the singles rates plus the pair distribution smeared by the detectors.
pub fn expected_counts(
    model: &PairCorrelationModel,
    hwp: Option<&HwpConfig>,
    run: &SimRun,
    det: &DetectorConfig,
    hist: &Histogram,
) -> Result<Vec<f64>> {
    let table = CombTable::new(model, hwp, det.difference_jitter(run.tick_duration))?;
    let w = default_window(model);
    let h = 0.5 * model.tau0;
    let total = table.integral(h - w, h + w);
    let pairs = run.pair_rate * run.duration * det.efficiency_s * det.efficiency_i;
    let singles_s = run.pair_rate * det.efficiency_s + det.dark_rate_s;
    let singles_i = run.pair_rate * det.efficiency_i + det.dark_rate_i;
    let accidental = singles_s * singles_i * run.duration * hist.bin_width;
    let edges = hist.effective_edges();
    Ok(edges.windows(2).map(|e| accidental + pairs * table.integral(e[0], e[1]) / total).collect())
}

fn write_columns(path: &Path, header: &str, hist: &Histogram, extra: &[&[f64]]) -> Result<()> {
    let io = |e: std::io::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{header}").map_err(io)?;
    for (k, c) in hist.counts.iter().enumerate() {
        write!(w, "{:e},{c}", hist.bin_center(k)).map_err(io)?;
        for col in extra {
            write!(w, ",{:e}", col[k]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn reproduce(cavity: &CavityConfig, opts: &FigureOptions, out: &Path) -> Result<FiguresSummary> {
    let model = PairCorrelationModel::from_cavity(cavity)?;
    let run = SimRun { tick_duration: opts.tick, ..SimRun::new(opts.pair_rate, opts.duration, opts.seed) };
    let det = &opts.detector;
    let jitter = det.difference_jitter(opts.tick);
    let mut files = Vec::new();

    write_json(&out.join("params.json"), &cmd_params(cavity)?)?;
    files.push("params.json".to_string());

    let aligned = cmd_simulate(&model, 0.0, &run, det)?;
    for (name, da) in FIG2_DETUNINGS {
        let stream = if da == 0.0 { None } else { Some(cmd_simulate(&model, da, &run, det)?) };
        let hist = cmd_correlate(stream.as_ref().unwrap_or(&aligned), FIG2_BIN, FIG2_WINDOW)?;
        let hwp = HwpConfig::new(da)?;
        let mu = expected_counts(&model, (da > 0.0).then_some(&hwp), &run, det, &hist)?;
        let file = format!("{name}.csv");
        write_columns(&out.join(&file), "bin_center_seconds,counts,model_counts", &hist, &[&mu])?;
        files.push(file);
    }

    let coarse = cmd_correlate(&aligned, FIG3A_BIN, FIG3A_WINDOW)?;
    let envelope = cmd_fit_envelope(&coarse, &model, jitter)?;
    let FitReport::Envelope { fit: bw, options, .. } = &envelope else { unreachable!() };
    let mu = bw.expected_counts(&coarse, options);
    write_columns(&out.join("fig3a.csv"), "bin_center_seconds,counts,fit_counts", &coarse, &[&mu])?;
    write_json(&out.join("fig3a_fit.json"), &envelope)?;
    files.extend(["fig3a.csv".to_string(), "fig3a_fit.json".to_string()]);

    let fine = cmd_correlate(&aligned, FIG3B_BIN, FIG3B_WINDOW)?;
    let full_opts = FullFitOptions { jitter_sigma: jitter, ..FullFitOptions::default() };
    let full = cmd_fit_full(&fine, &model, &full_opts)?;
    let FitReport::Full { fit, .. } = &full else { unreachable!() };
    let mu = fit.expected_counts(&fine, &full_opts)?;
    let peak = mu.iter().copied().fold(0.0, f64::max);
    let norm_counts: Vec<f64> = fine.counts.iter().map(|&c| c as f64 / peak).collect();
    let norm_fit: Vec<f64> = mu.iter().map(|m| m / peak).collect();
    write_columns(
        &out.join("fig3b.csv"),
        "bin_center_seconds,counts,fit_counts,normalized_counts,normalized_fit",
        &fine,
        &[&mu, &norm_counts, &norm_fit],
    )?;
    write_json(&out.join("fig3b_fit.json"), &full)?;
    files.extend(["fig3b.csv".to_string(), "fig3b_fit.json".to_string()]);

    Ok(FiguresSummary {
        files,
        pairs_in_window: coarse.total_pairs,
        delta_nu_s: bw.delta_nu_s,
        delta_nu_s_err: bw.delta_nu_s_err,
        delta_nu_i: bw.delta_nu_i,
        delta_nu_i_err: bw.delta_nu_i_err,
        full_fit_goodness: fit.goodness,
    })
}
