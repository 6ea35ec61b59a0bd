//! End-to-end reproductions: simulate a scan, fit it, and report force and
//! sensitivity alongside the noiseless theory layers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    contrast_ratios, fit_cells, fit_contrast_points, fit_phase_map, phase_map_crlb,
    sensitivity_report, CellPhase, ContrastFitOptions, ContrastPoint, FitResult, PhaseMapOptions,
    SensitivityReport,
};
use crate::lockin::{
    bessel_contrast, lockin_phase_closed_form, wrap_phase, LockInSequence, XiMode,
};
use crate::measure::{
    phase_grid, run_async_scan, run_sync_scan, NoiseModel, ScanResult, ScanSettings, Truth,
    DEFAULT_PHASE_POINTS, DEFAULT_SHOTS_PER_PHASE, DEFAULT_SHOT_OVERHEAD,
};
use crate::oscillator::{phase_amplitude, TrapConfig};

/// Drive frequency of the reproductions, Hz.
pub const DEFAULT_DRIVE_FREQUENCY: f64 = 1013.0;
/// Motion amplitude used as ground truth, m.
pub const DEFAULT_MOTION_AMPLITUDE: f64 = 117.5e-9;

/// `points` values evenly spaced on `[start, end]`.
pub fn linspace(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|i| start + (end - start) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// τ grid whose quarter-period frequencies `1/(4τ)` are evenly spaced on
/// `[f_lo, f_hi]`, returned in increasing τ.
pub fn quarter_period_grid(f_lo: f64, f_hi: f64, points: usize) -> Vec<f64> {
    let mut taus: Vec<f64> = linspace(f_lo, f_hi, points)
        .into_iter()
        .map(|f| 1.0 / (4.0 * f))
        .collect();
    taus.sort_by(f64::total_cmp);
    taus
}

fn check_grid(name: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(name, "must be non-empty and finite"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(name, "must be strictly increasing"));
    }
    Ok(())
}

fn check_sampling(phase_points: usize, shots: u32, overhead: f64) -> Result<()> {
    if phase_points < 3 {
        return Err(Error::invalid(
            "phase_points",
            "need at least 3 analysis phases",
        ));
    }
    if shots == 0 {
        return Err(Error::invalid("shots_per_phase", "must be at least 1"));
    }
    if !(overhead >= 0.0 && overhead.is_finite()) {
        return Err(Error::invalid(
            "shot_overhead",
            "must be finite and non-negative",
        ));
    }
    Ok(())
}

/// Triggered (τ, ξ) phase-map experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncExperiment {
    pub trap: TrapConfig,
    pub drive_frequency: f64,
    /// True motion amplitude, m.
    pub motion_amplitude: f64,
    pub pulse_count: u32,
    pub tau_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub phase_points: usize,
    pub shots_per_phase: u32,
    pub noise: NoiseModel,
    pub xi_offset: f64,
    /// Per-shot time on top of the sequence, s.
    pub shot_overhead: f64,
    pub fit: PhaseMapOptions,
}

impl SyncExperiment {
    /// 20 × 20 grid, n = 10, 250 shots at each of 12 phases.
    pub fn standard(seed: u64) -> Self {
        let f = DEFAULT_DRIVE_FREQUENCY;
        SyncExperiment {
            trap: TrapConfig::strontium_88(),
            drive_frequency: f,
            motion_amplitude: DEFAULT_MOTION_AMPLITUDE,
            pulse_count: 10,
            tau_grid: linspace(0.1 / f, 0.4 / f, 20),
            xi_grid: (0..20).map(|k| 2.0 * PI * k as f64 / 20.0).collect(),
            phase_points: DEFAULT_PHASE_POINTS,
            shots_per_phase: DEFAULT_SHOTS_PER_PHASE,
            noise: NoiseModel::ideal(seed),
            xi_offset: 0.0,
            shot_overhead: DEFAULT_SHOT_OVERHEAD,
            fit: PhaseMapOptions::default(),
        }
    }

    /// Checks every setting a run would use, without running it.
    pub fn validate(&self) -> Result<()> {
        self.trap.susceptibility(self.drive_frequency)?;
        self.noise.validate()?;
        self.truth()?.validate()?;
        check_grid("tau_grid", &self.tau_grid)?;
        check_grid("xi_grid", &self.xi_grid)?;
        if self.tau_grid.len() < 2 || self.xi_grid.len() < 2 {
            return Err(Error::invalid(
                "grid",
                "phase map needs at least 2 τ and 2 ξ values",
            ));
        }
        for &tau in &self.tau_grid {
            LockInSequence::new(tau, self.pulse_count, XiMode::UniformRandom)?;
        }
        check_sampling(self.phase_points, self.shots_per_phase, self.shot_overhead)?;
        if !(self.fit.amplitude_max > 0.0) {
            return Err(Error::invalid("amplitude_max", "must be positive"));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<Truth> {
        Ok(Truth {
            frequency: self.drive_frequency,
            amplitude: phase_amplitude(self.motion_amplitude, &self.trap)?,
            xi_offset: self.xi_offset,
        })
    }

    pub fn settings(&self) -> Result<ScanSettings> {
        Ok(ScanSettings {
            pulse_count: self.pulse_count,
            phases: phase_grid(self.phase_points),
            shots_per_phase: self.shots_per_phase,
            truth: self.truth()?,
            noise: self.noise,
        })
    }
}

/// One point of the noiseless phase map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapPoint {
    pub tau: f64,
    pub xi: f64,
    /// Wrapped lock-in phase from the model with the true parameters.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncOutcome {
    pub scan: ScanResult,
    pub cells: Vec<CellPhase>,
    pub theory: Vec<PhaseMapPoint>,
    pub fit: FitResult,
    pub sensitivity: SensitivityReport,
    /// Cramér–Rao bound on the amplitude A, rad (absent for zero force).
    pub amplitude_crlb: Option<f64>,
    pub truth: Truth,
}

pub fn run_sync_experiment(exp: &SyncExperiment) -> Result<SyncOutcome> {
    exp.validate()?;
    let settings = exp.settings()?;
    let scan = run_sync_scan(&exp.tau_grid, &exp.xi_grid, &settings)?;
    analyze_sync_scan(exp, scan)
}

/// Fits an already simulated or ingested synchronous scan.
pub fn analyze_sync_scan(exp: &SyncExperiment, scan: ScanResult) -> Result<SyncOutcome> {
    let truth = exp.truth()?;
    let cells = fit_cells(&scan)?;
    let fit = fit_phase_map(&scan, exp.drive_frequency, &exp.trap, &exp.fit)?;
    let total_time = scan.total_time(exp.shot_overhead);
    let sensitivity = sensitivity_report(&fit, &exp.trap, exp.drive_frequency, total_time)?;
    let theory = phase_map_theory(&exp.tau_grid, &exp.xi_grid, exp.pulse_count, &truth)?;
    let amplitude_crlb = if truth.amplitude > 0.0 {
        Some(phase_map_crlb(
            &exp.tau_grid,
            &exp.xi_grid,
            exp.pulse_count,
            &phase_grid(exp.phase_points),
            exp.shots_per_phase,
            &truth,
            &exp.noise,
        )?)
    } else {
        None
    };
    Ok(SyncOutcome {
        scan,
        cells,
        theory,
        fit,
        sensitivity,
        amplitude_crlb,
        truth,
    })
}

/// Noiseless wrapped lock-in phase over a (τ, ξ) grid.
pub fn phase_map_theory(
    tau_grid: &[f64],
    xi_grid: &[f64],
    pulse_count: u32,
    truth: &Truth,
) -> Result<Vec<PhaseMapPoint>> {
    let mut out = Vec::with_capacity(tau_grid.len() * xi_grid.len());
    for &tau in tau_grid {
        for &xi in xi_grid {
            let seq = LockInSequence::new(tau, pulse_count, XiMode::Fixed(xi))?;
            let phase = lockin_phase_closed_form(
                &seq,
                xi + truth.xi_offset,
                truth.frequency,
                truth.amplitude,
            );
            out.push(PhaseMapPoint {
                tau,
                xi,
                phase: wrap_phase(phase),
            });
        }
    }
    Ok(out)
}

/// Free-running contrast-curve experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncExperiment {
    pub trap: TrapConfig,
    pub drive_frequency: f64,
    pub motion_amplitude: f64,
    pub pulse_count: u32,
    pub tau_grid: Vec<f64>,
    pub phase_points: usize,
    pub shots_per_phase: u32,
    pub noise: NoiseModel,
    pub paired: bool,
    pub shot_overhead: f64,
    pub fit: ContrastFitOptions,
}

impl AsyncExperiment {
    /// 25 τ values with `1/(4τ)` spanning 500–1500 Hz, 25 shots at each of
    /// 12 phases, each point paired with a force-free twin.
    pub fn standard(pulse_count: u32, seed: u64) -> Self {
        AsyncExperiment {
            trap: TrapConfig::strontium_88(),
            drive_frequency: DEFAULT_DRIVE_FREQUENCY,
            motion_amplitude: DEFAULT_MOTION_AMPLITUDE,
            pulse_count,
            tau_grid: quarter_period_grid(500.0, 1500.0, 25),
            phase_points: DEFAULT_PHASE_POINTS,
            shots_per_phase: 25,
            noise: NoiseModel::ideal(seed),
            paired: true,
            shot_overhead: DEFAULT_SHOT_OVERHEAD,
            fit: ContrastFitOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trap.susceptibility(self.drive_frequency)?;
        self.noise.validate()?;
        self.truth()?.validate()?;
        check_grid("tau_grid", &self.tau_grid)?;
        if self.tau_grid.len() < 3 {
            return Err(Error::invalid(
                "tau_grid",
                "contrast curve needs at least 3 τ values",
            ));
        }
        for &tau in &self.tau_grid {
            LockInSequence::new(tau, self.pulse_count, XiMode::UniformRandom)?;
        }
        check_sampling(self.phase_points, self.shots_per_phase, self.shot_overhead)?;
        if let Some((lo, hi)) = self.fit.frequency_range {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::invalid(
                    "frequency_range",
                    "must satisfy 0 < min < max",
                ));
            }
        }
        if !(self.fit.amplitude_max > 0.0) || self.fit.frequency_grid < 8 {
            return Err(Error::invalid(
                "fit",
                "amplitude_max must be positive and frequency_grid at least 8",
            ));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<Truth> {
        Ok(Truth::new(
            self.drive_frequency,
            phase_amplitude(self.motion_amplitude, &self.trap)?,
        ))
    }

    pub fn settings(&self) -> Result<ScanSettings> {
        Ok(ScanSettings {
            pulse_count: self.pulse_count,
            phases: phase_grid(self.phase_points),
            shots_per_phase: self.shots_per_phase,
            truth: self.truth()?,
            noise: self.noise,
        })
    }
}

/// One point of the noiseless contrast curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastTheoryPoint {
    pub tau: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncOutcome {
    pub scan: ScanResult,
    pub ratios: Vec<ContrastPoint>,
    pub theory: Vec<ContrastTheoryPoint>,
    pub fit: FitResult,
    /// Absent when the fit carries no usable force interval (no force).
    pub sensitivity: Option<SensitivityReport>,
    pub truth: Truth,
}

pub fn run_async_experiment(exp: &AsyncExperiment) -> Result<AsyncOutcome> {
    exp.validate()?;
    let settings = exp.settings()?;
    let scan = run_async_scan(&exp.tau_grid, &settings, exp.paired)?;
    analyze_async_scan(exp, scan)
}

pub fn analyze_async_scan(exp: &AsyncExperiment, scan: ScanResult) -> Result<AsyncOutcome> {
    let truth = exp.truth()?;
    let ratios = contrast_ratios(&scan)?;
    let fit = fit_contrast_points(&ratios, scan.pulse_count, &exp.trap, &exp.fit)?;
    let total_time = scan.total_time(exp.shot_overhead);
    let fitted_f = fit.value("frequency").unwrap_or(exp.drive_frequency);
    let sensitivity = sensitivity_report(&fit, &exp.trap, fitted_f, total_time).ok();
    let theory = contrast_theory(&exp.tau_grid, exp.pulse_count, &truth)?;
    Ok(AsyncOutcome {
        scan,
        ratios,
        theory,
        fit,
        sensitivity,
        truth,
    })
}

/// Noiseless ξ-averaged contrast over a τ grid.
pub fn contrast_theory(
    tau_grid: &[f64],
    pulse_count: u32,
    truth: &Truth,
) -> Result<Vec<ContrastTheoryPoint>> {
    tau_grid
        .iter()
        .map(|&tau| {
            let seq = LockInSequence::new(tau, pulse_count, XiMode::UniformRandom)?;
            Ok(ContrastTheoryPoint {
                tau,
                contrast: bessel_contrast(&seq, truth.frequency, truth.amplitude),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let g = quarter_period_grid(500.0, 1500.0, 5);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!((g[0] - 1.0 / 6000.0).abs() < 1e-15);
        assert!((g[4] - 1.0 / 2000.0).abs() < 1e-15);
    }

    #[test]
    fn theory_layers_have_grid_shape() {
        let truth = Truth::new(1013.0, 0.77);
        let map = phase_map_theory(&[1e-4, 2e-4], &[0.0, 1.0, 2.0], 10, &truth).unwrap();
        assert_eq!(map.len(), 6);
        assert!(map.iter().all(|p| p.phase > -PI && p.phase <= PI));
        let curve = contrast_theory(&[1e-4, 2e-4], 10, &truth.without_force()).unwrap();
        assert!(curve.iter().all(|p| p.contrast == 1.0));
    }
}
