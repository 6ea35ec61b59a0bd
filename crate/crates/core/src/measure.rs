//! Shot-level Monte-Carlo of the lock-in Ramsey experiment.
//!
//! One shot is: π/2 pulse at force phase ξ, the echo train, a second π/2
//! pulse at analysis phase φ, then a projective D/S readout. The D
//! probability is `½ + (C/2) cos(φ − φ_clk)`, so each shot is a Bernoulli
//! draw and the D count at a phase point is binomial.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::{lockin_phase_closed_form, LockInSequence, XiMode};
use crate::rng::stream_rng;

/// Shots per analysis-phase point unless configured otherwise.
pub const DEFAULT_SHOTS_PER_PHASE: u32 = 250;
/// Analysis-phase points per fringe unless configured otherwise.
pub const DEFAULT_PHASE_POINTS: usize = 12;
/// Cooling, state preparation and detection time added to every shot, s.
pub const DEFAULT_SHOT_OVERHEAD: f64 = 3e-3;

/// Contrast loss not caused by the force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Multiplicative fringe-contrast factor in `[0, 1]`.
    pub dephasing_contrast: f64,
    pub rng_seed: u64,
    /// D-level lifetime, s. Decay during the sequence lowers the contrast by
    /// `exp(−2nτ / lifetime)`.
    #[serde(default)]
    pub d_level_lifetime: Option<f64>,
}

impl NoiseModel {
    pub fn ideal(rng_seed: u64) -> Self {
        NoiseModel {
            dephasing_contrast: 1.0,
            rng_seed,
            d_level_lifetime: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dephasing_contrast) {
            return Err(Error::invalid(
                "dephasing_contrast",
                format!("must lie in [0, 1], got {}", self.dephasing_contrast),
            ));
        }
        if let Some(t) = self.d_level_lifetime {
            if !(t > 0.0) {
                return Err(Error::invalid("d_level_lifetime", "must be positive"));
            }
        }
        Ok(())
    }

    /// Fringe contrast in the absence of force for a sequence of this length.
    pub fn effective_contrast(&self, seq: &LockInSequence) -> f64 {
        let decay = self
            .d_level_lifetime
            .map_or(1.0, |life| (-seq.duration() / life).exp());
        self.dephasing_contrast * decay
    }
}

/// The force as seen by the clock: Doppler phase amplitude and frequency,
/// plus the trigger offset added to every nominal ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Drive frequency f_m, Hz.
    pub frequency: f64,
    /// Doppler phase amplitude A, rad.
    pub amplitude: f64,
    /// Instrument delay between trigger and actual force phase, rad.
    #[serde(default)]
    pub xi_offset: f64,
}

impl Truth {
    pub fn new(frequency: f64, amplitude: f64) -> Self {
        Truth {
            frequency,
            amplitude,
            xi_offset: 0.0,
        }
    }

    pub fn without_force(&self) -> Self {
        Truth {
            amplitude: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::invalid("frequency", "must be finite and positive"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid(
                "amplitude",
                "must be finite and non-negative",
            ));
        }
        if !self.xi_offset.is_finite() {
            return Err(Error::invalid("xi_offset", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeMetadata {
    pub provenance: Provenance,
    /// Generating parameters, for synthetic records.
    pub truth: Option<Truth>,
    pub noise: Option<NoiseModel>,
}

impl FringeMetadata {
    pub fn ingested() -> Self {
        FringeMetadata {
            provenance: Provenance::Ingested,
            truth: None,
            noise: None,
        }
    }
}

/// D-state counts versus analysis phase for one sequence setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeRecord {
    pub sequence: LockInSequence,
    /// Analysis phases φ of the second π/2 pulse, rad.
    pub phases: Vec<f64>,
    pub shots_per_phase: u32,
    /// D-state detections at each phase.
    pub d_counts: Vec<u32>,
    pub metadata: FringeMetadata,
}

impl FringeRecord {
    pub fn validate(&self) -> Result<()> {
        self.sequence.validate()?;
        if self.shots_per_phase == 0 {
            return Err(Error::invalid("shots_per_phase", "must be at least 1"));
        }
        if self.phases.len() != self.d_counts.len() {
            return Err(Error::invalid(
                "d_counts",
                format!(
                    "{} counts for {} phase points",
                    self.d_counts.len(),
                    self.phases.len()
                ),
            ));
        }
        if let Some(&d) = self.d_counts.iter().find(|&&d| d > self.shots_per_phase) {
            return Err(Error::invalid(
                "d_counts",
                format!("count {d} exceeds {} shots", self.shots_per_phase),
            ));
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("phases", "must be finite"));
        }
        let distinct: BTreeSet<u64> = self
            .phases
            .iter()
            .map(|p| p.rem_euclid(2.0 * PI).to_bits())
            .collect();
        if distinct.len() < 3 {
            return Err(Error::invalid(
                "phases",
                format!("need at least 3 distinct phases, got {}", distinct.len()),
            ));
        }
        Ok(())
    }

    pub fn total_shots(&self) -> u64 {
        self.shots_per_phase as u64 * self.phases.len() as u64
    }

    /// Empirical D fraction at each phase point.
    pub fn fractions(&self) -> Vec<f64> {
        self.d_counts
            .iter()
            .map(|&d| d as f64 / self.shots_per_phase as f64)
            .collect()
    }
}

/// `points` equally spaced analysis phases on `[0, 2π)`.
pub fn phase_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| 2.0 * PI * k as f64 / points as f64)
        .collect()
}

/// D-state probability for one shot at force phase `xi` (already including
/// any trigger offset) and analysis phase `phi`.
pub fn shot_probability(
    seq: &LockInSequence,
    xi: f64,
    phi: f64,
    truth: &Truth,
    noise: &NoiseModel,
) -> f64 {
    let phi_clk = lockin_phase_closed_form(seq, xi, truth.frequency, truth.amplitude);
    let p = 0.5 + 0.5 * noise.effective_contrast(seq) * (phi - phi_clk).cos();
    p.clamp(0.0, 1.0)
}

/// Simulates one fringe on random stream 0.
pub fn simulate_fringe(
    seq: &LockInSequence,
    phases: &[f64],
    shots_per_phase: u32,
    truth: &Truth,
    noise: &NoiseModel,
) -> Result<FringeRecord> {
    simulate_fringe_on_stream(seq, phases, shots_per_phase, truth, noise, 0)
}

/// Simulates one fringe drawing from random stream `stream`. Phase point `j`
/// uses block `j` of that stream, so every shot has a fixed address.
pub fn simulate_fringe_on_stream(
    seq: &LockInSequence,
    phases: &[f64],
    shots_per_phase: u32,
    truth: &Truth,
    noise: &NoiseModel,
    stream: u64,
) -> Result<FringeRecord> {
    seq.validate()?;
    truth.validate()?;
    noise.validate()?;
    let d_counts = phases
        .iter()
        .enumerate()
        .map(|(j, &phi)| {
            let mut rng = stream_rng(noise.rng_seed, stream, j as u64);
            match seq.xi_mode {
                XiMode::Fixed(xi) => {
                    let p = shot_probability(seq, xi + truth.xi_offset, phi, truth, noise);
                    (0..shots_per_phase)
                        .filter(|_| rng.random::<f64>() < p)
                        .count() as u32
                }
                XiMode::UniformRandom => (0..shots_per_phase)
                    .filter(|_| {
                        let xi = 2.0 * PI * rng.random::<f64>();
                        let p = shot_probability(seq, xi, phi, truth, noise);
                        rng.random::<f64>() < p
                    })
                    .count() as u32,
            }
        })
        .collect();
    let record = FringeRecord {
        sequence: *seq,
        phases: phases.to_vec(),
        shots_per_phase,
        d_counts,
        metadata: FringeMetadata {
            provenance: Provenance::Synthetic,
            truth: Some(*truth),
            noise: Some(*noise),
        },
    };
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    /// Triggered at fixed force phase; τ × ξ grid.
    Synchronous,
    /// Free-running, ξ uniform per shot; τ grid only.
    Asynchronous,
}

/// One grid point of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub tau: f64,
    /// Nominal trigger phase, synchronous scans only.
    pub xi: Option<f64>,
    pub record: FringeRecord,
    /// Zero-force twin for contrast normalization (paired asynchronous scans).
    pub reference: Option<FringeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub kind: ScanKind,
    pub pulse_count: u32,
    pub tau_grid: Vec<f64>,
    pub xi_grid: Option<Vec<f64>>,
    pub paired: bool,
    /// τ-major order: for a synchronous scan cell `i·|ξ| + j` is `(τ_i, ξ_j)`.
    pub cells: Vec<ScanCell>,
}

impl ScanResult {
    pub fn validate(&self) -> Result<()> {
        strictly_increasing("tau_grid", &self.tau_grid)?;
        let per_tau = match (&self.kind, &self.xi_grid) {
            (ScanKind::Synchronous, Some(xi)) => {
                strictly_increasing("xi_grid", xi)?;
                xi.len()
            }
            (ScanKind::Synchronous, None) => {
                return Err(Error::invalid("xi_grid", "synchronous scan needs a ξ grid"))
            }
            (ScanKind::Asynchronous, Some(_)) => {
                return Err(Error::invalid("xi_grid", "asynchronous scan has no ξ grid"))
            }
            (ScanKind::Asynchronous, None) => 1,
        };
        if self.cells.len() != self.tau_grid.len() * per_tau {
            return Err(Error::invalid(
                "cells",
                format!(
                    "expected {} cells, found {}",
                    self.tau_grid.len() * per_tau,
                    self.cells.len()
                ),
            ));
        }
        for cell in &self.cells {
            cell.record.validate()?;
            match (&cell.reference, self.paired) {
                (Some(r), true) => {
                    r.validate()?;
                    if r.shots_per_phase != cell.record.shots_per_phase
                        || r.phases != cell.record.phases
                    {
                        return Err(Error::invalid(
                            "reference",
                            "paired records must share shots and phase grid",
                        ));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::invalid(
                        "reference",
                        "pairing flag disagrees with cell contents",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Total shots across all records, reference arms included.
    pub fn total_shots(&self) -> u64 {
        self.cells
            .iter()
            .map(|c| c.record.total_shots() + c.reference.as_ref().map_or(0, |r| r.total_shots()))
            .sum()
    }

    /// Wall-clock time of the whole scan with `overhead` seconds per shot on
    /// top of the sequence duration.
    pub fn total_time(&self, overhead: f64) -> f64 {
        self.cells
            .iter()
            .flat_map(|c| std::iter::once(&c.record).chain(c.reference.as_ref()))
            .map(|r| r.total_shots() as f64 * (r.sequence.duration() + overhead))
            .sum()
    }
}

fn strictly_increasing(name: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(name, "grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(name, "grid must be strictly increasing"));
    }
    Ok(())
}

/// Shared settings of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    pub pulse_count: u32,
    pub phases: Vec<f64>,
    pub shots_per_phase: u32,
    pub truth: Truth,
    pub noise: NoiseModel,
}

/// Triggered τ × ξ scan: one fringe per cell.
pub fn run_sync_scan(
    tau_grid: &[f64],
    xi_grid: &[f64],
    settings: &ScanSettings,
) -> Result<ScanResult> {
    strictly_increasing("tau_grid", tau_grid)?;
    strictly_increasing("xi_grid", xi_grid)?;
    let grid: Vec<(usize, f64, f64)> = tau_grid
        .iter()
        .flat_map(|&tau| xi_grid.iter().map(move |&xi| (tau, xi)))
        .enumerate()
        .map(|(i, (tau, xi))| (i, tau, xi))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(i, tau, xi)| {
            let seq = LockInSequence::new(tau, settings.pulse_count, XiMode::Fixed(xi))?;
            let record = simulate_fringe_on_stream(
                &seq,
                &settings.phases,
                settings.shots_per_phase,
                &settings.truth,
                &settings.noise,
                2 * i as u64,
            )?;
            Ok(ScanCell {
                tau,
                xi: Some(xi),
                record,
                reference: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        kind: ScanKind::Synchronous,
        pulse_count: settings.pulse_count,
        tau_grid: tau_grid.to_vec(),
        xi_grid: Some(xi_grid.to_vec()),
        paired: false,
        cells,
    })
}

/// Free-running τ scan. With `paired`, every τ also gets a zero-force twin on
/// its own random stream.
pub fn run_async_scan(
    tau_grid: &[f64],
    settings: &ScanSettings,
    paired: bool,
) -> Result<ScanResult> {
    strictly_increasing("tau_grid", tau_grid)?;
    let reference_truth = settings.truth.without_force();
    let cells = tau_grid
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let seq = LockInSequence::new(tau, settings.pulse_count, XiMode::UniformRandom)?;
            let sim = |truth: &Truth, stream: u64| {
                simulate_fringe_on_stream(
                    &seq,
                    &settings.phases,
                    settings.shots_per_phase,
                    truth,
                    &settings.noise,
                    stream,
                )
            };
            let record = sim(&settings.truth, 2 * i as u64)?;
            let reference = if paired {
                Some(sim(&reference_truth, 2 * i as u64 + 1)?)
            } else {
                None
            };
            Ok(ScanCell {
                tau,
                xi: None,
                record,
                reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        kind: ScanKind::Asynchronous,
        pulse_count: settings.pulse_count,
        tau_grid: tau_grid.to_vec(),
        xi_grid: None,
        paired,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(amplitude: f64, seed: u64) -> ScanSettings {
        ScanSettings {
            pulse_count: 10,
            phases: phase_grid(DEFAULT_PHASE_POINTS),
            shots_per_phase: DEFAULT_SHOTS_PER_PHASE,
            truth: Truth::new(1013.0, amplitude),
            noise: NoiseModel::ideal(seed),
        }
    }

    #[test]
    fn probability_examples() {
        let seq = LockInSequence::new(2.4e-4, 10, XiMode::Fixed(0.3)).unwrap();
        let truth = Truth::new(1013.0, 0.774);
        let noise = NoiseModel::ideal(0);
        let phi_clk = lockin_phase_closed_form(&seq, 0.3, 1013.0, 0.774);
        assert!((shot_probability(&seq, 0.3, phi_clk, &truth, &noise) - 1.0).abs() < 1e-15);
        let p = shot_probability(&seq, 0.3, PI / 2.0, &truth.without_force(), &noise);
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decay_lowers_contrast() {
        let seq = LockInSequence::new(1e-3, 5, XiMode::Fixed(0.0)).unwrap();
        let noise = NoiseModel {
            dephasing_contrast: 0.9,
            rng_seed: 0,
            d_level_lifetime: Some(0.39),
        };
        let expect = 0.9 * (-0.01f64 / 0.39).exp();
        assert!((noise.effective_contrast(&seq) - expect).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_deterministic() {
        let seq = LockInSequence::new(2.4e-4, 10, XiMode::UniformRandom).unwrap();
        let truth = Truth::new(1013.0, 0.5);
        let a = simulate_fringe(&seq, &phase_grid(12), 250, &truth, &NoiseModel::ideal(9)).unwrap();
        let b = simulate_fringe(&seq, &phase_grid(12), 250, &truth, &NoiseModel::ideal(9)).unwrap();
        let c =
            simulate_fringe(&seq, &phase_grid(12), 250, &truth, &NoiseModel::ideal(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.d_counts, c.d_counts);
    }

    #[test]
    fn large_sample_frequencies_match_probability() {
        let seq = LockInSequence::new(2.0e-4, 4, XiMode::Fixed(1.1)).unwrap();
        let truth = Truth::new(1013.0, 0.6);
        let noise = NoiseModel::ideal(3);
        let shots = 1_000_000;
        let phases = phase_grid(4);
        let rec = simulate_fringe(&seq, &phases, shots, &truth, &noise).unwrap();
        for (phi, d) in phases.iter().zip(&rec.d_counts) {
            let p = shot_probability(&seq, 1.1, *phi, &truth, &noise);
            let sigma = (p * (1.0 - p) / shots as f64).sqrt();
            let freq = *d as f64 / shots as f64;
            assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "{freq} vs {p}");
        }
    }

    #[test]
    fn record_validation() {
        let seq = LockInSequence::new(2.0e-4, 4, XiMode::Fixed(0.0)).unwrap();
        let mut rec = simulate_fringe(
            &seq,
            &phase_grid(3),
            10,
            &Truth::new(1e3, 0.1),
            &NoiseModel::ideal(0),
        )
        .unwrap();
        rec.d_counts[0] = 11;
        assert!(rec.validate().is_err());
        rec.d_counts[0] = 1;
        rec.phases = vec![0.0, 2.0 * PI, 1.0];
        assert!(rec.validate().is_err());
        let noisy = NoiseModel {
            dephasing_contrast: 1.2,
            ..NoiseModel::ideal(0)
        };
        assert!(simulate_fringe(&seq, &phase_grid(3), 10, &Truth::new(1e3, 0.1), &noisy).is_err());
    }

    #[test]
    fn sync_scan_layout_and_single_cell() {
        let s = settings(0.774, 11);
        let taus = [1.5e-4, 2.5e-4];
        let xis = [0.0, 1.0, 2.0];
        let scan = run_sync_scan(&taus, &xis, &s).unwrap();
        scan.validate().unwrap();
        assert_eq!(scan.cells.len(), 6);
        assert_eq!(scan.cells[4].tau, 2.5e-4);
        assert_eq!(scan.cells[4].xi, Some(1.0));

        let single = run_sync_scan(&taus[..1], &xis[..1], &s).unwrap();
        let seq = LockInSequence::new(1.5e-4, 10, XiMode::Fixed(0.0)).unwrap();
        let direct =
            simulate_fringe_on_stream(&seq, &s.phases, s.shots_per_phase, &s.truth, &s.noise, 0)
                .unwrap();
        assert_eq!(single.cells[0].record, direct);
    }

    #[test]
    fn async_scan_pairs_and_times() {
        let s = settings(0.3, 2);
        let scan = run_async_scan(&[2.0e-4, 2.2e-4], &s, true).unwrap();
        scan.validate().unwrap();
        let r = scan.cells[1].reference.as_ref().unwrap();
        assert_eq!(r.metadata.truth.unwrap().amplitude, 0.0);
        assert_eq!(scan.total_shots(), 4 * 12 * 250);
        let expect = 2.0 * 3000.0 * (4e-3 + 3e-3) + 2.0 * 3000.0 * (4.4e-3 + 3e-3);
        assert!((scan.total_time(DEFAULT_SHOT_OVERHEAD) - expect).abs() < 1e-9);
        assert!(run_async_scan(&[2.0e-4, 1.0e-4], &s, false).is_err());
    }
}
