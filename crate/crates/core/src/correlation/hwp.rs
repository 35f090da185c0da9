//! Jones-calculus model of the intracavity half-wave plate.
//!
//! At the optimum angle each pass rotates the photon polarization by 90°, so
//! a photon only overlaps with itself after an even number of physical round
//! trips. A detuning `Δα` adds an extra `2Δα` rotation per pass; after `n`
//! passes the state has drifted `2nΔα` away from the ideal flip sequence and
//! leaks into the orthogonal ("odd-trip") mode with probability
//! `sin²(2nΔα)`. The leak is largest after `45°/Δα` passes.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type JonesVector = Vector2<Complex64>;
pub type JonesMatrix = Matrix2<Complex64>;

/// Physical round trips per effective (polarization-restoring) round trip.
pub const PASSES_PER_EFFECTIVE_ROUND_TRIP: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwpConfig {
    /// Detuning from the optimum fast-axis angle, degrees.
    pub delta_alpha: f64,
}

impl Default for HwpConfig {
    fn default() -> Self {
        Self { delta_alpha: 0.0 }
    }
}

impl HwpConfig {
    pub fn new(delta_alpha: f64) -> Result<Self> {
        let hwp = Self { delta_alpha };
        hwp.validate()?;
        Ok(hwp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=45.0).contains(&self.delta_alpha) {
            return Err(Error::argument(format!(
                "HWP detuning {}° outside [0°, 45°]",
                self.delta_alpha
            )));
        }
        Ok(())
    }

    /// Rotation applied by one pass, radians.
    pub fn rotation_per_pass(&self) -> f64 {
        (90.0 + 2.0 * self.delta_alpha).to_radians()
    }

    /// Number of physical round trips at which the leaked mode peaks
    /// (`45°/Δα`), or `None` for a perfectly aligned plate.
    pub fn leak_maximum_round_trips(&self) -> Option<f64> {
        (self.delta_alpha > 0.0).then(|| 45.0 / self.delta_alpha)
    }
}

pub fn rotator(theta: f64) -> JonesMatrix {
    let (s, c) = theta.sin_cos();
    Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(c, 0.0),
    )
}

pub fn horizontal() -> JonesVector {
    Vector2::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
}

/// Polarization state after each of `passes` passes, starting horizontal.
/// Element 0 is the launch state.
pub fn pass_polarizations(hwp: &HwpConfig, passes: usize) -> Vec<JonesVector> {
    let step = rotator(hwp.rotation_per_pass());
    let mut states = Vec::with_capacity(passes + 1);
    let mut state = horizontal();
    states.push(state);
    for _ in 0..passes {
        state = step * state;
        states.push(state);
    }
    states
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipAmplitudes {
    /// Probability of being in the polarization the ideal plate would give.
    pub same: f64,
    /// Probability of having leaked into the orthogonal polarization.
    pub flipped: f64,
}

fn intensity(a: &JonesVector, b: &JonesVector) -> f64 {
    a.dotc(b).norm_sqr()
}

pub fn flip_trick_amplitudes(hwp: &HwpConfig, n_physical_round_trips: u32) -> FlipAmplitudes {
    let n = n_physical_round_trips;
    let actual = rotator(hwp.rotation_per_pass()).pow(n) * horizontal();
    let ideal = rotator(std::f64::consts::FRAC_PI_2).pow(n) * horizontal();
    let ideal_perp = rotator(std::f64::consts::FRAC_PI_2) * ideal;
    FlipAmplitudes {
        same: intensity(&ideal, &actual),
        flipped: intensity(&ideal_perp, &actual),
    }
}

/// Relative coincidence weight of the comb peak `n` physical round trips away
/// from zero delay: the retained amplitude for even `n`, the leaked one for odd.
pub fn coincidence_weight(hwp: &HwpConfig, n_physical_round_trips: u32) -> f64 {
    if hwp.delta_alpha == 0.0 {
        // exact reduction for the aligned plate
        return if n_physical_round_trips % 2 == 0 { 1.0 } else { 0.0 };
    }
    let a = flip_trick_amplitudes(hwp, n_physical_round_trips);
    if n_physical_round_trips % 2 == 0 {
        a.same
    } else {
        a.flipped
    }
}
