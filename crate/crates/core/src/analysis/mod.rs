//! Coincidence histogramming and bandwidth extraction.
//!
//! Delay convention: `τ = t_idler − t_signal`, so positive delays mean the
//! idler arrived later. Bins are half-open, `[−W + k·w, −W + (k+1)·w)`, and
//! only whole bins inside `[−W, W)` are kept.

mod envelope;
mod full;
pub mod optimize;

pub use envelope::{fit_envelope, BandwidthFit, EnvelopeOptions};
pub use full::{fit_full_model, FullFit, FullFitOptions};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::timetag::{Channel, TimeTagStream};
use crate::{Error, Result};

/// Relative slack when deciding how many whole bins fit in the window.
const BIN_COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// s.
    pub bin_width: f64,
    /// Half-width, s.
    pub window: f64,
    pub counts: Vec<u64>,
    pub total_pairs: u64,
    /// Tick of the tagger that produced the delays, s. Delays are integer
    /// tick multiples, which fixes the true coverage of each bin.
    #[serde(default)]
    pub tick_duration: Option<f64>,
}

/// Sidecar metadata stored next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub bin_width: f64,
    pub window: f64,
    pub bins: usize,
    pub total_pairs: u64,
    #[serde(default)]
    pub tick_duration: Option<f64>,
}

impl Histogram {
    pub fn bin_count(bin_width: f64, window: f64) -> Result<usize> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::argument(format!("bin width {bin_width:e} must be > 0")));
        }
        if !(window >= bin_width) || !window.is_finite() {
            return Err(Error::argument(format!("window {window:e} must be >= bin width {bin_width:e}")));
        }
        let n = (2.0 * window / bin_width * (1.0 + BIN_COUNT_SLACK)).floor();
        if n > 1e9 {
            return Err(Error::Capacity(format!("{n:e} bins")));
        }
        Ok(n as usize)
    }

    pub fn zeros(bin_width: f64, window: f64) -> Result<Self> {
        let n = Self::bin_count(bin_width, window)?;
        Ok(Self { bin_width, window, counts: vec![0; n], total_pairs: 0, tick_duration: None })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_lower(&self, k: usize) -> f64 {
        -self.window + k as f64 * self.bin_width
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_lower(k) + 0.5 * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.bin_center(k)).collect()
    }

    /// Histogram of the swapped channels when the bin grid is symmetric.
    pub fn mirrored(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        Self { counts, ..self.clone() }
    }

    pub fn meta(&self) -> HistogramMeta {
        HistogramMeta {
            bin_width: self.bin_width,
            window: self.window,
            bins: self.len(),
            total_pairs: self.total_pairs,
            tick_duration: self.tick_duration,
        }
    }

    /// Continuous delay range covered by each bin, as `len + 1` edges. With a
    /// known tick, bin `k` holds the integer delays `j` whose tick cells
    /// `[(j − ½)·tick, (j + ½)·tick)` start at or after its nominal edge.
    pub fn effective_edges(&self) -> Vec<f64> {
        (0..=self.len())
            .map(|k| {
                let lower = self.bin_lower(k);
                match self.tick_duration {
                    Some(t) if t > 0.0 => ((lower / t).ceil() - 0.5) * t,
                    _ => lower,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_center_seconds,counts")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{:e},{}", self.bin_center(k), c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.meta())?;
        Ok(())
    }

    /// Reads counts from CSV; the bin grid comes from the sidecar.
    pub fn read_csv<R: BufRead>(mut r: R, meta: &HistogramMeta) -> Result<Self> {
        let mut hist = Self::zeros(meta.bin_width, meta.window)?;
        if hist.len() != meta.bins {
            return Err(Error::config(format!(
                "sidecar declares {} bins but the grid has {}",
                meta.bins,
                hist.len()
            )));
        }
        let mut offset = 0usize;
        let mut line = String::new();
        let mut k = 0usize;
        loop {
            line.clear();
            let read = r.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            let at = offset as u64;
            offset += read;
            let text = line.trim();
            if text.is_empty() || text.starts_with("bin_center") {
                continue;
            }
            let fail = |m: String| Error::Format { offset: at, message: m };
            let (_, c) = text.split_once(',').ok_or_else(|| fail("expected \"center,counts\"".into()))?;
            let c: u64 = c.trim().parse().map_err(|e| fail(format!("invalid count: {e}")))?;
            if k >= hist.len() {
                return Err(fail(format!("more than {} bins", hist.len())));
            }
            hist.counts[k] = c;
            k += 1;
        }
        if k != hist.len() {
            return Err(Error::Format { offset: offset as u64, message: format!("{k} bins, expected {}", hist.len()) });
        }
        hist.total_pairs = meta.total_pairs;
        hist.tick_duration = meta.tick_duration;
        Ok(hist)
    }
}

fn check_sorted(ticks: &[u64], which: &str) -> Result<()> {
    if let Some(i) = ticks.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Unsorted {
            index: i + 1,
            message: format!("{which} tick {} after {}", ticks[i + 1], ticks[i]),
        });
    }
    Ok(())
}

/// Bin grid in tick units.
#[derive(Debug, Clone, Copy)]
struct Binning {
    tick: f64,
    window: f64,
    bin_width: f64,
    bins: usize,
    /// Conservative delay range in ticks; exact filtering is by bin index.
    d_lo: i128,
    d_hi: i128,
}

impl Binning {
    fn new(tick: f64, bin_width: f64, window: f64) -> Result<Self> {
        if !(tick > 0.0) || !tick.is_finite() {
            return Err(Error::argument(format!("tick duration {tick:e} must be > 0")));
        }
        let bins = Histogram::bin_count(bin_width, window)?;
        let w = window / tick;
        Ok(Self {
            tick,
            window,
            bin_width,
            bins,
            d_lo: (-w).floor() as i128 - 1,
            d_hi: w.ceil() as i128 + 1,
        })
    }

    #[inline]
    fn index(&self, d: i128) -> Option<usize> {
        let x = ((d as f64) * self.tick + self.window) / self.bin_width;
        if x >= 0.0 && x < self.bins as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    /// Histogram contribution of the signal tags `signal`.
    fn sweep(&self, signal: &[u64], idler: &[u64]) -> Vec<u64> {
        let mut counts = vec![0u64; self.bins];
        let mut lo = match signal.first() {
            Some(&s) => idler.partition_point(|&t| (t as i128) - (s as i128) < self.d_lo),
            None => return counts,
        };
        for &s in signal {
            let s = s as i128;
            while lo < idler.len() && (idler[lo] as i128) - s < self.d_lo {
                lo += 1;
            }
            for &t in &idler[lo..] {
                let d = t as i128 - s;
                if d > self.d_hi {
                    break;
                }
                if let Some(k) = self.index(d) {
                    counts[k] += 1;
                }
            }
        }
        counts
    }

    fn finish(&self, counts: Vec<u64>) -> Histogram {
        let total_pairs = counts.iter().sum();
        Histogram { bin_width: self.bin_width, window: self.window, counts, total_pairs, tick_duration: Some(self.tick) }
    }
}

/// Single-pass two-pointer correlator over sorted tick lists.
pub fn correlate(signal: &[u64], idler: &[u64], tick: f64, bin_width: f64, window: f64) -> Result<Histogram> {
    check_sorted(signal, "signal")?;
    check_sorted(idler, "idler")?;
    let b = Binning::new(tick, bin_width, window)?;
    Ok(b.finish(b.sweep(signal, idler)))
}

/// [`correlate`] with the signal list split into `chunks` contiguous pieces
/// processed in parallel. The result is identical for any `chunks ≥ 1`.
pub fn correlate_chunked(
    signal: &[u64],
    idler: &[u64],
    tick: f64,
    bin_width: f64,
    window: f64,
    chunks: usize,
) -> Result<Histogram> {
    check_sorted(signal, "signal")?;
    check_sorted(idler, "idler")?;
    let b = Binning::new(tick, bin_width, window)?;
    let size = signal.len().div_ceil(chunks.max(1)).max(1);
    let pieces: Vec<&[u64]> = signal.chunks(size).collect();
    let parts = crate::par::map_collect(&pieces, |p| b.sweep(p, idler));
    let mut counts = vec![0u64; b.bins];
    for part in parts {
        for (c, p) in counts.iter_mut().zip(part) {
            *c += p;
        }
    }
    Ok(b.finish(counts))
}

/// Correlates the two channels of a merged stream.
pub fn correlate_stream(stream: &TimeTagStream, bin_width: f64, window: f64) -> Result<Histogram> {
    let s = stream.channel_ticks(Channel::Signal);
    let i = stream.channel_ticks(Channel::Idler);
    correlate_chunked(&s, &i, stream.tick_duration, bin_width, window, default_chunks())
}

fn default_chunks() -> usize {
    #[cfg(feature = "parallel")]
    {
        4 * rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Poisson deviance residual; `μ` is floored to keep it finite.
pub(crate) fn deviance_residual(count: f64, mu: f64) -> f64 {
    let mu = mu.max(1e-300);
    let d = if count > 0.0 { mu - count + count * (count / mu).ln() } else { mu };
    (2.0 * d.max(0.0)).sqrt().copysign(count - mu)
}

/// Pearson chi-square of counts against expectations.
pub(crate) fn pearson_chi2(counts: &[u64], mu: &[f64]) -> f64 {
    counts
        .iter()
        .zip(mu)
        .map(|(&c, &m)| {
            let m = m.max(1e-12);
            (c as f64 - m).powi(2) / m
        })
        .sum()
}
