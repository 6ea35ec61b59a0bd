//! TOML run configuration. Every physical quantity carries a unit.
//!
//! ```toml
//! seed = 7
//!
//! [trap]
//! mass = "87.9 amu"
//! frequency = "1.13 MHz"
//! wavelength = "674 nm"
//!
//! [drive]
//! frequency = "1013 Hz"
//! motion_amplitude = "117.5 nm"   # or force = "8.64e-19 N"
//!
//! [scan]
//! tau = { start = "98.7 us", stop = "394.9 us", points = 20 }
//! xi = { start = "0 deg", stop = "360 deg", points = 20, include_stop = false }
//! shots_per_phase = 250
//! ```

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use ionlock::estimate::{ContrastFitOptions, PhaseMapOptions};
use ionlock::experiments::{linspace, quarter_period_grid, AsyncExperiment, SyncExperiment};
use ionlock::measure::NoiseModel;
use ionlock::oscillator::{steady_state_amplitude, ForceDrive, TrapConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::units::{AngleQ, Dimension, Duration, ForceQ, Frequency, Length, MassQ, Quantity};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Stamp reports with the wall-clock time of the run.
    pub timestamp: Option<bool>,
    #[serde(default)]
    pub trap: TrapSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub mass: Option<MassQ>,
    pub frequency: Option<Frequency>,
    pub wavelength: Option<Length>,
    /// Fraction of the motion along the clock laser.
    pub projection: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub frequency: Option<Frequency>,
    pub force: Option<ForceQ>,
    pub motion_amplitude: Option<Length>,
    pub xi_offset: Option<AngleQ>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub pulse_count: Option<u32>,
    /// Pulse counts of the free-running reproduction.
    pub pulse_counts: Option<Vec<u32>>,
}

/// A grid given as explicit values, as `start`/`stop`/`points`, or (for τ) as
/// quarter-period frequencies `1/(4τ)` evenly spaced between two bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(
    serialize = "Quantity<D>: Serialize",
    deserialize = "Quantity<D>: Deserialize<'de>"
))]
pub struct GridSpec<D> {
    pub values: Option<Vec<Quantity<D>>>,
    pub start: Option<Quantity<D>>,
    pub stop: Option<Quantity<D>>,
    pub points: Option<usize>,
    pub include_stop: Option<bool>,
    pub quarter_period: Option<[Frequency; 2]>,
}

impl<D: Dimension> GridSpec<D> {
    fn resolve(&self, field: &str) -> Result<Vec<f64>, CliError> {
        let bad = |why: &str| CliError::Config(format!("`{field}`: {why}"));
        let ranged = self.start.is_some() || self.stop.is_some();
        let given = [self.values.is_some(), ranged, self.quarter_period.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(bad(
                "give exactly one of `values`, `start`/`stop`, `quarter_period`",
            ));
        }
        let grid = if let Some(values) = &self.values {
            if self.points.is_some() || self.include_stop.is_some() {
                return Err(bad("`points` and `include_stop` do not apply to `values`"));
            }
            values.iter().map(|q| q.si).collect()
        } else {
            let points = self.points.ok_or_else(|| bad("`points` is required"))?;
            if points < 2 {
                return Err(bad("`points` must be at least 2"));
            }
            if let Some([lo, hi]) = self.quarter_period {
                if D::NAME != "time" {
                    return Err(bad("`quarter_period` only applies to τ grids"));
                }
                if !(lo.si > 0.0 && hi.si > lo.si) {
                    return Err(bad("`quarter_period` needs 0 < low < high"));
                }
                quarter_period_grid(lo.si, hi.si, points)
            } else {
                let (Some(start), Some(stop)) = (self.start, self.stop) else {
                    return Err(bad("`start` and `stop` go together"));
                };
                if self.include_stop.unwrap_or(true) {
                    linspace(start.si, stop.si, points)
                } else {
                    let step = (stop.si - start.si) / points as f64;
                    (0..points).map(|i| start.si + step * i as f64).collect()
                }
            }
        };
        if grid
            .windows(2)
            .any(|w: &[f64]| w[1].partial_cmp(&w[0]) != Some(Ordering::Greater))
        {
            return Err(bad("values must be strictly increasing"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub tau: Option<GridSpec<crate::units::Time>>,
    pub xi: Option<GridSpec<crate::units::Angle>>,
    pub phase_points: Option<usize>,
    pub shots_per_phase: Option<u32>,
    /// Pair each free-running point with a force-free twin.
    pub paired: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub dephasing_contrast: Option<f64>,
    pub d_level_lifetime: Option<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// One joint binomial likelihood for the phase map instead of two stages.
    pub joint: Option<bool>,
    pub amplitude_max: Option<AngleQ>,
    pub frequency_min: Option<Frequency>,
    pub frequency_max: Option<Frequency>,
    pub frequency_grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
    /// Also write SVG figures.
    pub plot: Option<bool>,
    /// Cooling, preparation and detection time per shot.
    pub shot_overhead: Option<Duration>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn trap(&self) -> Result<TrapConfig, CliError> {
        let mut trap = TrapConfig::strontium_88();
        let t = &self.trap;
        if let Some(m) = t.mass {
            trap.ion_mass = m.si;
        }
        if let Some(f) = t.frequency {
            trap.trap_frequency = f.si;
        }
        if let Some(l) = t.wavelength {
            trap.clock_wavelength = l.si;
        }
        if let Some(p) = t.projection {
            trap.projection_factor = p;
        }
        trap.validate().map_err(|e| field_error("trap", e))?;
        Ok(trap)
    }

    pub fn drive_frequency(&self) -> f64 {
        self.drive
            .frequency
            .map_or(ionlock::experiments::DEFAULT_DRIVE_FREQUENCY, |f| f.si)
    }

    /// Motion amplitude of the simulated drive, from `drive.force` or
    /// `drive.motion_amplitude`.
    pub fn motion_amplitude(&self, trap: &TrapConfig) -> Result<f64, CliError> {
        match (self.drive.force, self.drive.motion_amplitude) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "`drive`: give either `force` or `motion_amplitude`, not both".to_string(),
            )),
            (Some(force), None) => {
                let drive = ForceDrive::new(force.si, self.drive_frequency(), 0.0)
                    .map_err(|e| field_error("drive", e))?;
                steady_state_amplitude(&drive, trap).map_err(|e| field_error("drive", e))
            }
            (None, Some(x)) => {
                if x.si < 0.0 {
                    return Err(CliError::Config(
                        "`drive.motion_amplitude`: must be non-negative".into(),
                    ));
                }
                Ok(x.si)
            }
            (None, None) => Ok(ionlock::experiments::DEFAULT_MOTION_AMPLITUDE),
        }
    }

    fn noise(&self, seed: u64) -> Result<NoiseModel, CliError> {
        let noise = NoiseModel {
            dephasing_contrast: self.noise.dephasing_contrast.unwrap_or(1.0),
            rng_seed: seed,
            d_level_lifetime: self.noise.d_level_lifetime.map(|d| d.si),
        };
        noise.validate().map_err(|e| field_error("noise", e))?;
        Ok(noise)
    }

    fn phase_points(&self, default: usize) -> usize {
        self.scan.phase_points.unwrap_or(default)
    }

    pub fn shot_overhead(&self) -> f64 {
        self.output
            .shot_overhead
            .map_or(ionlock::measure::DEFAULT_SHOT_OVERHEAD, |d| d.si)
    }

    pub fn phase_map_options(&self) -> PhaseMapOptions {
        let default = PhaseMapOptions::default();
        PhaseMapOptions {
            amplitude_max: self
                .fit
                .amplitude_max
                .map_or(default.amplitude_max, |a| a.si),
            joint: self.fit.joint.unwrap_or(default.joint),
        }
    }

    pub fn contrast_options(&self) -> Result<ContrastFitOptions, CliError> {
        let default = ContrastFitOptions::default();
        let frequency_range = match (self.fit.frequency_min, self.fit.frequency_max) {
            (Some(lo), Some(hi)) => Some((lo.si, hi.si)),
            (None, None) => None,
            _ => {
                return Err(CliError::Config(
                    "`fit`: `frequency_min` and `frequency_max` go together".into(),
                ))
            }
        };
        Ok(ContrastFitOptions {
            frequency_range,
            frequency_grid: self.fit.frequency_grid.unwrap_or(default.frequency_grid),
            amplitude_max: self
                .fit
                .amplitude_max
                .map_or(default.amplitude_max, |a| a.si),
        })
    }

    /// The triggered experiment described by this config.
    pub fn sync_experiment(&self, seed: u64) -> Result<SyncExperiment, CliError> {
        let mut exp = SyncExperiment::standard(seed);
        exp.trap = self.trap()?;
        exp.drive_frequency = self.drive_frequency();
        exp.motion_amplitude = self.motion_amplitude(&exp.trap)?;
        exp.xi_offset = self.drive.xi_offset.map_or(0.0, |x| x.si);
        if self.sequence.pulse_counts.is_some() {
            return Err(CliError::Config(
                "`sequence.pulse_counts` applies to free-running runs; use `pulse_count`".into(),
            ));
        }
        exp.pulse_count = self.sequence.pulse_count.unwrap_or(exp.pulse_count);
        let f = exp.drive_frequency;
        exp.tau_grid = match &self.scan.tau {
            Some(g) => g.resolve("scan.tau")?,
            None => linspace(0.1 / f, 0.4 / f, 20),
        };
        if let Some(g) = &self.scan.xi {
            exp.xi_grid = g.resolve("scan.xi")?;
        }
        exp.phase_points = self.phase_points(exp.phase_points);
        exp.shots_per_phase = self.scan.shots_per_phase.unwrap_or(exp.shots_per_phase);
        if self.scan.paired.is_some() {
            return Err(CliError::Config(
                "`scan.paired` applies to free-running runs".into(),
            ));
        }
        exp.noise = self.noise(seed)?;
        exp.shot_overhead = self.shot_overhead();
        exp.fit = self.phase_map_options();
        exp.validate().map_err(|e| field_error("config", e))?;
        Ok(exp)
    }

    /// The free-running experiments, one per pulse count. `default_counts`
    /// applies when the config names none.
    pub fn async_experiments(
        &self,
        seed: u64,
        default_counts: &[u32],
    ) -> Result<Vec<AsyncExperiment>, CliError> {
        let counts = match (&self.sequence.pulse_counts, self.sequence.pulse_count) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "`sequence`: give either `pulse_count` or `pulse_counts`".into(),
                ))
            }
            (Some(c), None) => c.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => default_counts.to_vec(),
        };
        if counts.is_empty() {
            return Err(CliError::Config(
                "`sequence.pulse_counts`: must not be empty".into(),
            ));
        }
        if self.scan.xi.is_some() {
            return Err(CliError::Config(
                "`scan.xi` applies to triggered runs only".into(),
            ));
        }
        if self.fit.joint.is_some() {
            return Err(CliError::Config(
                "`fit.joint` applies to the phase-map fit only".into(),
            ));
        }
        let trap = self.trap()?;
        let motion = self.motion_amplitude(&trap)?;
        let tau_grid = self
            .scan
            .tau
            .as_ref()
            .map(|g| g.resolve("scan.tau"))
            .transpose()?;
        let fit = self.contrast_options()?;
        counts
            .iter()
            .map(|&n| {
                let mut exp = AsyncExperiment::standard(n, seed);
                exp.trap = trap;
                exp.drive_frequency = self.drive_frequency();
                exp.motion_amplitude = motion;
                if let Some(g) = &tau_grid {
                    exp.tau_grid = g.clone();
                }
                exp.phase_points = self.phase_points(exp.phase_points);
                exp.shots_per_phase = self.scan.shots_per_phase.unwrap_or(exp.shots_per_phase);
                exp.paired = self.scan.paired.unwrap_or(exp.paired);
                exp.noise = self.noise(seed)?;
                exp.shot_overhead = self.shot_overhead();
                exp.fit = fit;
                if self.drive.xi_offset.is_some() {
                    return Err(CliError::Config(
                        "`drive.xi_offset` has no effect on free-running runs".into(),
                    ));
                }
                exp.validate().map_err(|e| field_error("config", e))?;
                Ok(exp)
            })
            .collect()
    }
}

fn field_error(section: &str, e: ionlock::Error) -> CliError {
    CliError::Config(format!("`{section}`: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_standard_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        let exp = cfg.sync_experiment(3).unwrap();
        assert_eq!(exp, {
            let mut e = SyncExperiment::standard(3);
            e.tau_grid = linspace(0.1 / 1013.0, 0.4 / 1013.0, 20);
            e
        });
        let runs = cfg.async_experiments(3, &[10, 20]).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1], AsyncExperiment::standard(20, 3));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::parse("[trap]\nfrequncy = \"1 MHz\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("frequncy") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn units_are_required() {
        let err = RunConfig::parse("[drive]\nfrequency = 1013\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("frequency"), "{err}");
        let err = RunConfig::parse("[drive]\nfrequency = \"1013\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("no unit"), "{err}");
    }

    #[test]
    fn grids_resolve() {
        let cfg = RunConfig::parse(
            "[scan]\ntau = { quarter_period = [\"500 Hz\", \"1500 Hz\"], points = 5 }\n",
        )
        .unwrap();
        let runs = cfg.async_experiments(1, &[10]).unwrap();
        assert_eq!(runs[0].tau_grid, quarter_period_grid(500.0, 1500.0, 5));
        let cfg = RunConfig::parse(
            "[scan]\nxi = { start = \"0 deg\", stop = \"360 deg\", points = 4, include_stop = false }\n",
        )
        .unwrap();
        let xi = cfg.sync_experiment(1).unwrap().xi_grid;
        assert!((xi[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15 && xi.len() == 4);
    }

    #[test]
    fn conflicting_drive_rejected() {
        let cfg = RunConfig::parse("[drive]\nforce = \"1e-19 N\"\nmotion_amplitude = \"10 nm\"\n")
            .unwrap();
        assert!(cfg.sync_experiment(1).is_err());
    }

    #[test]
    fn force_converts_to_motion() {
        let cfg = RunConfig::parse("[drive]\nforce = \"8.64e-19 N\"\n").unwrap();
        let exp = cfg.sync_experiment(1).unwrap();
        assert!((exp.motion_amplitude / 117.5e-9 - 1.0).abs() < 2e-3);
    }
}
