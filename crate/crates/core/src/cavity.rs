//! Spectral properties of the down-conversion and frequency-doubling cavities.
//!
//! A [`CavityConfig`] holds the effective optical round-trip length, the
//! mirror reflectivities at both wavelengths and the internal losses. All
//! derived quantities ([`SpectralParams`]) come from three relations:
//!
//! * `fsr = c / L_eff`, with `L_eff` doubled for the fundamental when the
//!   intracavity half-wave plate flips the polarization every pass;
//! * `finesse = 2π / ℓ`, the low-loss limit with `ℓ` the total power loss per
//!   effective round trip (internal loss plus output-coupler transmission);
//! * `escape = T_out / ℓ`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Which of the two optical fields a derived quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavelengthRole {
    /// Signal and idler photons (795 nm).
    Fundamental,
    /// Second-harmonic pump (397.5 nm).
    Pump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mirror {
    M1,
    M2,
    M3,
    M4,
}

/// Power reflectivities of the four cavity mirrors at both wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorSet {
    pub r1_pump: f64,
    #[serde(alias = "r2")]
    pub r2_pump: f64,
    #[serde(alias = "r3")]
    pub r3_pump: f64,
    pub r4_pump: f64,
    pub r1_fund: f64,
    pub r2_fund: f64,
    pub r3_fund: f64,
    pub r4_fund: f64,
}

impl MirrorSet {
    pub fn reflectivity(&self, mirror: Mirror, role: WavelengthRole) -> f64 {
        use Mirror::*;
        use WavelengthRole::*;
        match (mirror, role) {
            (M1, Pump) => self.r1_pump,
            (M2, Pump) => self.r2_pump,
            (M3, Pump) => self.r3_pump,
            (M4, Pump) => self.r4_pump,
            (M1, Fundamental) => self.r1_fund,
            (M2, Fundamental) => self.r2_fund,
            (M3, Fundamental) => self.r3_fund,
            (M4, Fundamental) => self.r4_fund,
        }
    }

    pub fn transmission(&self, mirror: Mirror, role: WavelengthRole) -> f64 {
        1.0 - self.reflectivity(mirror, role)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("r1_pump", self.r1_pump),
            ("r2_pump", self.r2_pump),
            ("r3_pump", self.r3_pump),
            ("r4_pump", self.r4_pump),
            ("r1_fund", self.r1_fund),
            ("r2_fund", self.r2_fund),
            ("r3_fund", self.r3_fund),
            ("r4_fund", self.r4_fund),
        ];
        for (name, r) in all {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(format!(
                    "reflectivity {name} = {r} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Temperature phase-matching window of the nonlinear crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchEnvelope {
    /// Center temperature, °C.
    pub t_center: f64,
    /// Full width at half maximum, K.
    pub fwhm: f64,
}

/// Root of `sinc²(x) = 1/2` on the main lobe.
pub const SINC2_HALF_POINT: f64 = 1.391_557_378_251_510_4;

impl PhaseMatchEnvelope {
    pub fn new(t_center: f64, fwhm: f64) -> Result<Self> {
        let env = Self { t_center, fwhm };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) || !self.t_center.is_finite() {
            return Err(Error::config(format!(
                "phase-match envelope needs finite center and fwhm > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Relative down-conversion efficiency at `temperature` (°C): `sinc²` scaled so
/// that it is 1 at the center and 1/2 at `±fwhm/2`.
pub fn phase_match_weight(env: &PhaseMatchEnvelope, temperature: f64) -> f64 {
    let x = SINC2_HALF_POINT * (temperature - env.t_center) / (0.5 * env.fwhm);
    let s = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    s * s
}

fn default_coupler_fund() -> Mirror {
    Mirror::M4
}

fn default_coupler_pump() -> Mirror {
    Mirror::M1
}

fn default_wavelength() -> f64 {
    795e-9
}

fn default_true() -> bool {
    true
}

/// Physical description of a ring (bow-tie) cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Effective optical length of one physical round trip, m.
    pub round_trip_length: f64,
    /// Intracavity half-wave plate flipping the fundamental polarization each pass.
    pub flip_trick: bool,
    pub mirrors: MirrorSet,
    /// Power loss per effective round trip at the fundamental, excluding the
    /// output coupler.
    pub internal_loss_fund: f64,
    pub internal_loss_pump: f64,
    /// Nonlinear crystal length, m.
    pub crystal_length: f64,
    /// Group-index difference between the two orthogonal polarizations.
    pub group_index_mismatch: f64,
    #[serde(default = "default_coupler_fund")]
    pub output_coupler_fund: Mirror,
    #[serde(default = "default_coupler_pump")]
    pub output_coupler_pump: Mirror,
    /// Fundamental vacuum wavelength, m.
    #[serde(default = "default_wavelength")]
    pub wavelength_fund: f64,
    /// `false` for cavities that are made transparent to the pump.
    #[serde(default = "default_true")]
    pub pump_resonant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_match: Option<PhaseMatchEnvelope>,
}

impl CavityConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.round_trip_length > 0.0) || !self.round_trip_length.is_finite() {
            return Err(Error::config(format!(
                "round_trip_length must be > 0, got {}",
                self.round_trip_length
            )));
        }
        if !(self.crystal_length >= 0.0) {
            return Err(Error::config("crystal_length must be >= 0"));
        }
        for (name, l) in [
            ("internal_loss_fund", self.internal_loss_fund),
            ("internal_loss_pump", self.internal_loss_pump),
        ] {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::config(format!("{name} = {l} outside [0, 1)")));
            }
        }
        if !(self.group_index_mismatch >= 0.0) {
            return Err(Error::config("group_index_mismatch must be >= 0"));
        }
        if !(self.wavelength_fund > 0.0) {
            return Err(Error::config("wavelength_fund must be > 0"));
        }
        if let Some(env) = &self.phase_match {
            env.validate()?;
        }
        self.mirrors.validate()
    }

    pub fn output_coupler(&self, role: WavelengthRole) -> Mirror {
        match role {
            WavelengthRole::Fundamental => self.output_coupler_fund,
            WavelengthRole::Pump => self.output_coupler_pump,
        }
    }

    pub fn internal_loss(&self, role: WavelengthRole) -> f64 {
        match role {
            WavelengthRole::Fundamental => self.internal_loss_fund,
            WavelengthRole::Pump => self.internal_loss_pump,
        }
    }

    /// Optical length of one effective round trip for `role`.
    pub fn effective_length(&self, role: WavelengthRole) -> f64 {
        match role {
            WavelengthRole::Fundamental if self.flip_trick => 2.0 * self.round_trip_length,
            _ => self.round_trip_length,
        }
    }

    /// Signal/idler group delay accrued in the crystal, s.
    pub fn signal_idler_delay(&self) -> f64 {
        self.crystal_length * self.group_index_mismatch / SPEED_OF_LIGHT
    }

    /// Down-conversion cavity of the 795 nm source (mirror coatings and
    /// measured FSR/finesse, with the length calibrated to FSR_r = 120.8 MHz).
    pub fn pdc_reference() -> Self {
        Self {
            name: Some("PDC bow-tie cavity".into()),
            round_trip_length: SPEED_OF_LIGHT / (2.0 * 120.8e6),
            flip_trick: true,
            mirrors: MirrorSet {
                r1_pump: 0.980,
                r2_pump: 0.9985,
                r3_pump: 0.9985,
                r4_pump: 0.9985,
                r1_fund: 0.999,
                r2_fund: 0.999,
                r3_fund: 0.999,
                r4_fund: 0.990,
            },
            internal_loss_fund: 0.0247,
            internal_loss_pump: 0.7192,
            crystal_length: 0.025,
            group_index_mismatch: 0.09,
            output_coupler_fund: Mirror::M4,
            output_coupler_pump: Mirror::M1,
            wavelength_fund: 795e-9,
            pump_resonant: true,
            phase_match: Some(PhaseMatchEnvelope {
                t_center: 41.3,
                fwhm: 0.010,
            }),
        }
    }

    /// Frequency-doubling cavity (FSR 278 MHz, finesse 100 at 795 nm). The
    /// output coupler is anti-reflection coated for the pump.
    pub fn shg_reference() -> Self {
        Self {
            name: Some("SHG bow-tie cavity".into()),
            round_trip_length: SPEED_OF_LIGHT / 278e6,
            flip_trick: false,
            mirrors: MirrorSet {
                r1_pump: 0.9985,
                r2_pump: 0.9985,
                r3_pump: 0.9985,
                r4_pump: 0.005,
                r1_fund: 0.970,
                r2_fund: 0.999,
                r3_fund: 0.999,
                r4_fund: 0.999,
            },
            internal_loss_fund: 0.0328,
            internal_loss_pump: 0.0,
            crystal_length: 0.020,
            group_index_mismatch: 0.0,
            output_coupler_fund: Mirror::M1,
            output_coupler_pump: Mirror::M4,
            wavelength_fund: 795e-9,
            pump_resonant: false,
            phase_match: None,
        }
    }
}

/// Spectral quantities of one cavity at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    /// Free spectral range, Hz.
    pub fsr: f64,
    pub finesse: f64,
    /// Resonance FWHM, Hz. Always exactly `fsr / finesse`.
    pub linewidth_fwhm: f64,
    pub total_round_trip_loss: f64,
    pub escape_efficiency: f64,
}

pub fn derive_fsr(config: &CavityConfig, role: WavelengthRole) -> Result<f64> {
    if !(config.round_trip_length > 0.0) || !config.round_trip_length.is_finite() {
        return Err(Error::config(format!(
            "round_trip_length must be > 0, got {}",
            config.round_trip_length
        )));
    }
    Ok(SPEED_OF_LIGHT / config.effective_length(role))
}

pub fn derive_finesse(total_loss: f64) -> Result<f64> {
    if !(total_loss > 0.0 && total_loss < 1.0) {
        return Err(Error::config(format!(
            "round-trip loss {total_loss} outside (0, 1)"
        )));
    }
    Ok(std::f64::consts::TAU / total_loss)
}

pub fn derive_escape_efficiency(outcoupler_transmission: f64, total_loss: f64) -> Result<f64> {
    if !(total_loss > 0.0 && total_loss < 1.0) {
        return Err(Error::config(format!(
            "round-trip loss {total_loss} outside (0, 1)"
        )));
    }
    if !(outcoupler_transmission > 0.0) || outcoupler_transmission > total_loss {
        return Err(Error::config(format!(
            "output-coupler transmission {outcoupler_transmission} must lie in (0, {total_loss}]"
        )));
    }
    Ok(outcoupler_transmission / total_loss)
}

pub fn derive_spectral_params(config: &CavityConfig, role: WavelengthRole) -> Result<SpectralParams> {
    config.validate()?;
    if role == WavelengthRole::Pump && !config.pump_resonant {
        return Err(Error::config("cavity is not resonant at the pump wavelength"));
    }
    let fsr = derive_fsr(config, role)?;
    let transmission = config
        .mirrors
        .transmission(config.output_coupler(role), role);
    let total = config.internal_loss(role) + transmission;
    let finesse = derive_finesse(total)?;
    let escape_efficiency = derive_escape_efficiency(transmission, total)?;
    Ok(SpectralParams {
        fsr,
        finesse,
        linewidth_fwhm: fsr / finesse,
        total_round_trip_loss: total,
        escape_efficiency,
    })
}
