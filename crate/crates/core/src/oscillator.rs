//! Classical response of a harmonically trapped ion to an off-resonant
//! oscillating force, and the conversions between force, motion amplitude and
//! the Doppler phase amplitude seen by the clock laser.
//!
//! Everything is SI. Masses enter in atomic mass units only through
//! [`TrapConfig::from_amu`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kilograms per unified atomic mass unit (CODATA 2018).
pub const AMU_KG: f64 = 1.660_539_066_60e-27;

/// Relative distance to resonance below which the off-resonant model is
/// rejected: `|f_t² − f_m²| < RESONANCE_GUARD · f_t²`.
pub const RESONANCE_GUARD: f64 = 1e-6;

/// Trap and probe-laser geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Ion mass in kilograms.
    pub ion_mass: f64,
    /// Secular trap frequency along the driven axis, Hz.
    pub trap_frequency: f64,
    /// Clock laser wavelength, m.
    pub clock_wavelength: f64,
    /// Cosine of the angle between the laser k-vector and the motion.
    pub projection_factor: f64,
}

impl TrapConfig {
    pub fn new(
        ion_mass: f64,
        trap_frequency: f64,
        clock_wavelength: f64,
        projection_factor: f64,
    ) -> Result<Self> {
        let trap = TrapConfig {
            ion_mass,
            trap_frequency,
            clock_wavelength,
            projection_factor,
        };
        trap.validate()?;
        Ok(trap)
    }

    /// Builds a trap from an ion mass given in atomic mass units, with the
    /// laser at 45° to the motion.
    pub fn from_amu(mass_amu: f64, trap_frequency: f64, clock_wavelength: f64) -> Result<Self> {
        Self::new(
            mass_amu * AMU_KG,
            trap_frequency,
            clock_wavelength,
            FRAC_1_SQRT_2,
        )
    }

    /// ⁸⁸Sr⁺ on the 674 nm S₁/₂ → D₅/₂ line in a 1.13 MHz axial trap.
    pub fn strontium_88() -> Self {
        TrapConfig {
            ion_mass: 87.9 * AMU_KG,
            trap_frequency: 1.13e6,
            clock_wavelength: 674e-9,
            projection_factor: FRAC_1_SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("ion_mass", self.ion_mass)?;
        positive("trap_frequency", self.trap_frequency)?;
        positive("clock_wavelength", self.clock_wavelength)?;
        if !(self.projection_factor > 0.0 && self.projection_factor <= 1.0) {
            return Err(Error::invalid(
                "projection_factor",
                format!("must lie in (0, 1], got {}", self.projection_factor),
            ));
        }
        Ok(())
    }

    /// Motional susceptibility `x₀ / F₀` at drive frequency `drive_hz`, m/N.
    pub fn susceptibility(&self, drive_hz: f64) -> Result<f64> {
        self.validate()?;
        positive("drive frequency", drive_hz)?;
        let ft2 = self.trap_frequency * self.trap_frequency;
        let detuning = ft2 - drive_hz * drive_hz;
        if detuning.abs() < RESONANCE_GUARD * ft2 {
            return Err(Error::Resonance {
                drive_hz,
                trap_hz: self.trap_frequency,
            });
        }
        Ok(1.0 / (4.0 * PI * PI * detuning * self.ion_mass))
    }
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self::strontium_88()
    }
}

/// A sinusoidal force `F₀ cos(2π f_m t + ξ)` acting along the trap axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceDrive {
    /// Force amplitude F₀, N.
    pub amplitude: f64,
    /// Drive frequency f_m, Hz.
    pub frequency: f64,
    /// Force phase ξ at the start of the sequence, rad.
    pub initial_phase: f64,
}

impl ForceDrive {
    pub fn new(amplitude: f64, frequency: f64, initial_phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid(
                "force amplitude",
                format!("must be finite and non-negative, got {amplitude}"),
            ));
        }
        positive("drive frequency", frequency)?;
        Ok(ForceDrive {
            amplitude,
            frequency,
            initial_phase,
        })
    }
}

/// Steady-state motion amplitude `x₀ = F₀ / (4π² (f_t² − f_m²) m)` in metres.
///
/// Positive below resonance; negative above it (motion in antiphase with the
/// force).
pub fn steady_state_amplitude(drive: &ForceDrive, trap: &TrapConfig) -> Result<f64> {
    if !(drive.amplitude >= 0.0) {
        return Err(Error::invalid("force amplitude", "must be non-negative"));
    }
    Ok(drive.amplitude * trap.susceptibility(drive.frequency)?)
}

/// Force amplitude that produces motion amplitude `x0` at `drive_hz`; the
/// exact inverse of [`steady_state_amplitude`].
pub fn force_from_amplitude(x0: f64, drive_hz: f64, trap: &TrapConfig) -> Result<f64> {
    if !(x0 >= 0.0) {
        return Err(Error::invalid(
            "motion amplitude",
            format!("must be non-negative, got {x0}"),
        ));
    }
    Ok(x0 / trap.susceptibility(drive_hz)?)
}

/// Doppler phase amplitude `A = 2π x₀ · projection / λ`, rad.
pub fn phase_amplitude(x0: f64, trap: &TrapConfig) -> Result<f64> {
    trap.validate()?;
    if !(x0 >= 0.0) {
        return Err(Error::invalid(
            "motion amplitude",
            format!("must be non-negative, got {x0}"),
        ));
    }
    Ok(2.0 * PI * x0 * trap.projection_factor / trap.clock_wavelength)
}

/// Inverse of [`phase_amplitude`]: the motion amplitude in metres.
pub fn amplitude_from_phase(phase_amplitude: f64, trap: &TrapConfig) -> Result<f64> {
    trap.validate()?;
    Ok(phase_amplitude * trap.clock_wavelength / (2.0 * PI * trap.projection_factor))
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be finite and positive, got {value}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reported_drive() -> ForceDrive {
        ForceDrive::new(8.64e-19, 1013.0, 0.0).unwrap()
    }

    #[test]
    fn reported_force_gives_reported_amplitude() {
        let x0 = steady_state_amplitude(&reported_drive(), &TrapConfig::strontium_88()).unwrap();
        assert!((x0 / 117.5e-9 - 1.0).abs() < 2e-3, "x0 = {x0:e}");
    }

    #[test]
    fn reported_amplitudes_give_reported_forces() {
        let trap = TrapConfig::strontium_88();
        let f = force_from_amplitude(117.5e-9, 1013.0, &trap).unwrap();
        assert!((f / 8.64e-19 - 1.0).abs() < 3e-3, "F0 = {f:e}");
        let f = force_from_amplitude(116e-9, 1013.0, &trap).unwrap();
        assert!((f / 8.54e-19 - 1.0).abs() < 3e-3, "F0 = {f:e}");
    }

    #[test]
    fn zero_force_zero_motion() {
        let trap = TrapConfig::strontium_88();
        let drive = ForceDrive::new(0.0, 1013.0, 0.0).unwrap();
        assert_eq!(steady_state_amplitude(&drive, &trap).unwrap(), 0.0);
        assert_eq!(force_from_amplitude(0.0, 1013.0, &trap).unwrap(), 0.0);
        assert_eq!(phase_amplitude(0.0, &trap).unwrap(), 0.0);
    }

    #[test]
    fn phase_amplitude_matches_fit_caption() {
        let a = phase_amplitude(117.5e-9, &TrapConfig::strontium_88()).unwrap();
        assert!((a / 0.774 - 1.0).abs() < 5e-3, "A = {a}");
    }

    #[test]
    fn unit_phase_amplitude_identity() {
        let trap = TrapConfig::strontium_88();
        let x0 = trap.clock_wavelength * 2f64.sqrt() / (2.0 * PI);
        let a = phase_amplitude(x0, &trap).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert!((amplitude_from_phase(1.0, &trap).unwrap() - x0).abs() < 1e-22);
    }

    #[test]
    fn resonance_is_rejected() {
        let trap = TrapConfig::strontium_88();
        let drive = ForceDrive::new(1e-18, trap.trap_frequency * (1.0 + 1e-8), 0.0).unwrap();
        assert!(matches!(
            steady_state_amplitude(&drive, &trap),
            Err(Error::Resonance { .. })
        ));
        assert!(force_from_amplitude(1e-7, trap.trap_frequency, &trap).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrapConfig::new(0.0, 1e6, 674e-9, 0.5).is_err());
        assert!(TrapConfig::new(1e-25, -1.0, 674e-9, 0.5).is_err());
        assert!(TrapConfig::new(1e-25, 1e6, 674e-9, 1.5).is_err());
        assert!(TrapConfig::new(1e-25, 1e6, 674e-9, 0.0).is_err());
        assert!(ForceDrive::new(-1.0, 1e3, 0.0).is_err());
        assert!(ForceDrive::new(1.0, 0.0, 0.0).is_err());
        assert!(force_from_amplitude(-1e-9, 1e3, &TrapConfig::default()).is_err());
    }

    #[test]
    fn above_resonance_motion_is_antiphase() {
        let trap = TrapConfig::strontium_88();
        let drive = ForceDrive::new(1e-19, 2.0e6, 0.0).unwrap();
        assert!(steady_state_amplitude(&drive, &trap).unwrap() < 0.0);
    }
}
