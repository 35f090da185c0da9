//! Synthetic two-channel detector streams.
//!
//! Pairs are emitted as a Poisson process; the idler follows the signal by a
//! delay drawn from the correlation comb ([`DelaySampler`]). Each detection
//! then passes efficiency thinning, Gaussian timing jitter and quantization to
//! integer ticks. Dark counts are independent Poisson processes per channel.
//!
//! Generation is split into fixed one-second intervals, each with its own RNG
//! stream derived from `(seed, interval)`, so the result does not depend on
//! the number of worker threads.

mod format;
#[cfg(test)]
mod tests;

pub use format::{
    read_csv, read_ptag, write_csv, write_ptag, PTAG_HEADER_LEN, PTAG_MAGIC, PTAG_RECORD_LEN,
    PTAG_VERSION,
};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::correlation::comb::{CellMass, CombTable};
use crate::correlation::{HwpConfig, PairCorrelationModel};
use crate::{Error, Result};

/// Time-tagger resolution, s.
pub const DEFAULT_TICK_DURATION: f64 = 100.1e-12;
/// Sampling window half-width in units of the decay time `1/γ`.
pub const DEFAULT_WINDOW_DECAY_TIMES: f64 = 5.0;
/// Length of one independently seeded generation interval, s.
pub const SIM_INTERVAL: f64 = 1.0;
/// Largest number of events a single stream may hold.
pub const MAX_EVENTS: f64 = (1u64 << 30) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Channel {
    Signal = 0,
    Idler = 1,
}

impl Channel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Channel::Signal),
            1 => Some(Channel::Idler),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagRecord {
    pub channel: Channel,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    /// Seconds per tick.
    pub tick_duration: f64,
    pub records: Vec<TimeTagRecord>,
}

impl TimeTagStream {
    pub fn new(tick_duration: f64, records: Vec<TimeTagRecord>) -> Result<Self> {
        let s = Self { tick_duration, records };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(tick_duration: f64) -> Self {
        Self { tick_duration, records: Vec::new() }
    }

    /// Builds a merged stream from per-channel tick lists.
    pub fn from_channels(tick_duration: f64, signal: &[u64], idler: &[u64]) -> Result<Self> {
        let mut records: Vec<_> = signal
            .iter()
            .map(|&ticks| TimeTagRecord { channel: Channel::Signal, ticks })
            .chain(idler.iter().map(|&ticks| TimeTagRecord { channel: Channel::Idler, ticks }))
            .collect();
        records.sort_by_key(|r| (r.ticks, r.channel));
        Self::new(tick_duration, records)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_duration > 0.0) || !self.tick_duration.is_finite() {
            return Err(Error::argument(format!("tick duration {:e} must be > 0", self.tick_duration)));
        }
        let mut last = [0u64; 2];
        for (index, r) in self.records.iter().enumerate() {
            let slot = &mut last[r.channel as usize];
            if r.ticks < *slot {
                return Err(Error::Unsorted {
                    index,
                    message: format!("channel {} tick {} after {}", r.channel as u8, r.ticks, slot),
                });
            }
            *slot = r.ticks;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn channel_ticks(&self, channel: Channel) -> Vec<u64> {
        self.records.iter().filter(|r| r.channel == channel).map(|r| r.ticks).collect()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub efficiency_s: f64,
    pub efficiency_i: f64,
    /// Hz.
    pub dark_rate_s: f64,
    pub dark_rate_i: f64,
    /// Gaussian timing jitter per detector, s.
    pub jitter_sigma: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency_s: 1.0,
            efficiency_i: 1.0,
            dark_rate_s: 100.0,
            dark_rate_i: 100.0,
            jitter_sigma: 350e-12,
        }
    }
}

impl DetectorConfig {
    /// Unit efficiency, no darks, no jitter.
    pub fn ideal() -> Self {
        Self { dark_rate_s: 0.0, dark_rate_i: 0.0, jitter_sigma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("efficiency_s", self.efficiency_s), ("efficiency_i", self.efficiency_i)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::argument(format!("{name} = {e} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("dark_rate_s", self.dark_rate_s),
            ("dark_rate_i", self.dark_rate_i),
            ("jitter_sigma", self.jitter_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::argument(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Gaussian width of the signal/idler time difference to use in fits.
    /// Independent rounding of both tags smears the difference by a triangle
    /// of variance `tick²/6`; half of that is the rounding of the difference
    /// itself, which the histogram's tick-aware bin edges already describe.
    pub fn difference_jitter(&self, tick_duration: f64) -> f64 {
        (2.0 * self.jitter_sigma.powi(2) + tick_duration.powi(2) / 12.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    /// Pair rate before detector losses, Hz.
    pub pair_rate: f64,
    /// s.
    pub duration: f64,
    pub seed: u64,
    #[serde(default = "default_tick")]
    pub tick_duration: f64,
}

fn default_tick() -> f64 {
    DEFAULT_TICK_DURATION
}

impl SimRun {
    pub fn new(pair_rate: f64, duration: f64, seed: u64) -> Self {
        Self { pair_rate, duration, seed, tick_duration: DEFAULT_TICK_DURATION }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate >= 0.0) || !self.pair_rate.is_finite() {
            return Err(Error::argument(format!("pair rate {} must be >= 0", self.pair_rate)));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::argument(format!("duration {} must be > 0", self.duration)));
        }
        if !(self.tick_duration > 0.0) || !self.tick_duration.is_finite() {
            return Err(Error::argument(format!("tick duration {:e} must be > 0", self.tick_duration)));
        }
        Ok(())
    }
}

/// Default sampling half-window: five decay times of the slower branch.
pub fn default_window(model: &PairCorrelationModel) -> f64 {
    DEFAULT_WINDOW_DECAY_TIMES / model.gamma_s.min(model.gamma_i)
}

/// Draws signal/idler delays from the correlation comb.
///
/// First a cell (one comb peak) is chosen with probability equal to its
/// mass, then the offset inside the cell by inverting the tabulated
/// within-cell distribution.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    table: CombTable,
    cells: Vec<CellMass>,
    pick: WeightedIndex<f64>,
    window: f64,
}

impl DelaySampler {
    pub fn new(model: &PairCorrelationModel, hwp: Option<&HwpConfig>) -> Result<Self> {
        Self::with_window(model, hwp, default_window(model))
    }

    /// `window` is measured from `τ₀/2` on both sides.
    pub fn with_window(model: &PairCorrelationModel, hwp: Option<&HwpConfig>, window: f64) -> Result<Self> {
        if !(window > 0.0) || !window.is_finite() {
            return Err(Error::argument(format!("sampling window {window:e} must be > 0")));
        }
        let table = CombTable::new(model, hwp, 0.0)?;
        let cells: Vec<_> = table.cell_masses(window).into_iter().filter(|c| c.mass > 0.0).collect();
        let pick = WeightedIndex::new(cells.iter().map(|c| c.mass))
            .map_err(|e| Error::NumericalOverflow(format!("cell weights: {e}")))?;
        Ok(Self { table, cells, pick, window })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn table(&self) -> &CombTable {
        &self.table
    }
}

impl Distribution<f64> for DelaySampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = &self.cells[self.pick.sample(rng)];
        let u: f64 = rng.random();
        self.table.delay_in_cell(c.side, c.index, u, self.window)
    }
}

/// One delay draw. Builds the sampling table on every call; use
/// [`DelaySampler`] for repeated draws.
pub fn sample_pair_delay<R: Rng + ?Sized>(
    model: &PairCorrelationModel,
    hwp: &HwpConfig,
    rng: &mut R,
) -> Result<f64> {
    Ok(DelaySampler::new(model, Some(hwp))?.sample(rng))
}

/// Round half-up to the nearest tick. `None` for negative times.
pub(crate) fn quantize(t: f64, tick: f64) -> Option<u64> {
    if t < 0.0 {
        return None;
    }
    Some((t / tick + 0.5).floor() as u64)
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

struct SimContext<'a> {
    run: &'a SimRun,
    det: &'a DetectorConfig,
    sampler: &'a DelaySampler,
    jitter: Option<Normal<f64>>,
}

impl SimContext<'_> {
    fn push(&self, out: &mut Vec<TimeTagRecord>, channel: Channel, t: f64) {
        if t >= self.run.duration {
            return;
        }
        if let Some(ticks) = quantize(t, self.run.tick_duration) {
            out.push(TimeTagRecord { channel, ticks });
        }
    }

    fn smear<R: Rng>(&self, rng: &mut R, t: f64) -> f64 {
        match &self.jitter {
            Some(n) => t + n.sample(rng),
            None => t,
        }
    }

    fn interval(&self, k: u64) -> Vec<TimeTagRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
        rng.set_stream(k);
        let start = k as f64 * SIM_INTERVAL;
        let len = (self.run.duration - start).min(SIM_INTERVAL);
        let mut out = Vec::new();

        let pairs = poisson_count(&mut rng, self.run.pair_rate * len);
        for _ in 0..pairs {
            let t = start + len * rng.random::<f64>();
            let tau = self.sampler.sample(&mut rng);
            let keep_s = rng.random::<f64>() < self.det.efficiency_s;
            let keep_i = rng.random::<f64>() < self.det.efficiency_i;
            if keep_s {
                let ts = self.smear(&mut rng, t);
                self.push(&mut out, Channel::Signal, ts);
            }
            if keep_i {
                let ti = self.smear(&mut rng, t + tau);
                self.push(&mut out, Channel::Idler, ti);
            }
        }
        for (channel, rate) in [(Channel::Signal, self.det.dark_rate_s), (Channel::Idler, self.det.dark_rate_i)] {
            let n = poisson_count(&mut rng, rate * len);
            for _ in 0..n {
                let t = start + len * rng.random::<f64>();
                self.push(&mut out, channel, t);
            }
        }
        out
    }
}

/// Generates a merged stream sorted by `(ticks, channel)`.
pub fn simulate_stream(
    run: &SimRun,
    model: &PairCorrelationModel,
    hwp: Option<&HwpConfig>,
    det: &DetectorConfig,
) -> Result<TimeTagStream> {
    let sampler = DelaySampler::new(model, hwp)?;
    simulate_stream_with(run, &sampler, det)
}

/// As [`simulate_stream`] with a prebuilt sampler.
pub fn simulate_stream_with(run: &SimRun, sampler: &DelaySampler, det: &DetectorConfig) -> Result<TimeTagStream> {
    run.validate()?;
    det.validate()?;
    let max_ticks = run.duration / run.tick_duration;
    if max_ticks >= 2f64.powi(63) {
        return Err(Error::Capacity(format!(
            "duration {} s at tick {:e} s exceeds the 63-bit tick range",
            run.duration, run.tick_duration
        )));
    }
    let expected = run.duration
        * (run.pair_rate * (det.efficiency_s + det.efficiency_i) + det.dark_rate_s + det.dark_rate_i);
    if expected > MAX_EVENTS {
        return Err(Error::Capacity(format!("{expected:.3e} expected events exceed the {MAX_EVENTS:.3e} limit")));
    }
    let jitter = if det.jitter_sigma > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma).map_err(|e| Error::argument(e.to_string()))?)
    } else {
        None
    };
    let ctx = SimContext { run, det, sampler, jitter };
    let intervals: Vec<u64> = (0..(run.duration / SIM_INTERVAL).ceil() as u64).collect();
    let parts = crate::par::map_collect(&intervals, |&k| ctx.interval(k));
    let mut records: Vec<TimeTagRecord> = parts.into_iter().flatten().collect();
    records.sort_unstable_by_key(|r| (r.ticks, r.channel));
    Ok(TimeTagStream { tick_duration: run.tick_duration, records })
}
