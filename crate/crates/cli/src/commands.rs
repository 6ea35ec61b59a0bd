//! Subcommand bodies. Each writes its files under the output directory and
//! returns the paths written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ionlock::estimate::{
    fit_contrast_curve, fit_fringe, fit_phase_map, sensitivity_report, FitResult, SensitivityReport,
};
use ionlock::experiments::{
    contrast_theory, linspace, phase_map_theory, run_async_experiment, run_sync_experiment,
    AsyncExperiment, ContrastTheoryPoint, SyncExperiment,
};
use ionlock::io::{
    format_f64, read_scan_csv, read_scan_json, write_fit_csv, write_scan_csv, write_scan_json,
};
use ionlock::lockin::{bessel_contrast, LockInSequence, XiMode};
use ionlock::measure::{run_async_scan, run_sync_scan, ScanResult, Truth};
use ionlock::oscillator::{amplitude_from_phase, force_from_amplitude};
use ionlock::selftest::{run_selftest, CheckOutcome, SelftestOptions};
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::error::CliError;
use crate::plot;

/// Settings shared by every command after flags and config are merged.
#[derive(Debug, Clone)]
pub struct Context {
    pub out_dir: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub timestamp: bool,
    pub plot: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn stamp(&self) -> Option<u64> {
        self.timestamp.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with<F>(path: &Path, body: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(ionlock::Error::from)?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

fn write_scan(ctx: &Context, stem: &str, scan: &ScanResult) -> Result<PathBuf, CliError> {
    let path = ctx.path(&format!("{stem}.{}", ctx.format.extension()));
    write_with(&path, |w| {
        match ctx.format {
            Format::Csv => write_scan_csv(scan, w)?,
            Format::Json => write_scan_json(scan, w)?,
        }
        Ok(())
    })
}

fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<PathBuf, CliError> {
    write_with(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let wrap = |e: csv::Error| CliError::Core(e.into());
        csv.write_record(header).map_err(wrap)?;
        for row in rows {
            csv.write_record(&row).map_err(wrap)?;
        }
        csv.flush().map_err(|e| CliError::io(path, e))
    })
}

fn require_converged(label: &str, fit: &FitResult) -> Result<(), CliError> {
    if fit.diagnostics.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "{label}: fit stopped after {} iterations without converging (outputs were written)",
            fit.diagnostics.iterations
        )))
    }
}

/// True drive parameters, in every unit a reader may want.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub frequency_hz: f64,
    pub motion_amplitude_m: f64,
    pub force_n: f64,
    pub phase_amplitude_rad: f64,
    pub xi_offset_rad: f64,
}

impl TruthReport {
    fn new(truth: &Truth, exp_trap: &ionlock::TrapConfig) -> Result<Self, CliError> {
        let x0 = amplitude_from_phase(truth.amplitude, exp_trap)?;
        Ok(TruthReport {
            frequency_hz: truth.frequency,
            motion_amplitude_m: x0,
            force_n: force_from_amplitude(x0, truth.frequency, exp_trap)?,
            phase_amplitude_rad: truth.amplitude,
            xi_offset_rad: truth.xi_offset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    pub command: String,
    pub seed: u64,
    pub generated_unix_s: Option<u64>,
    pub truth: TruthReport,
    pub fit: FitResult,
    pub sensitivity: SensitivityReport,
    /// Cramér–Rao bound on the motion amplitude, m.
    pub motion_amplitude_crlb_m: Option<f64>,
    pub total_shots: u64,
    pub total_time_s: f64,
    pub experiment: SyncExperiment,
}

pub fn reproduce_fig2(
    cfg: &RunConfig,
    ctx: &Context,
) -> Result<(Fig2Report, Vec<PathBuf>), CliError> {
    let exp = cfg.sync_experiment(ctx.seed)?;
    let outcome = run_sync_experiment(&exp)?;
    let fitted_amp = outcome.fit.value("amplitude").unwrap_or(0.0);
    let fitted_offset = outcome.fit.value("xi_offset").unwrap_or(0.0);
    let model = phase_map_theory(
        &exp.tau_grid,
        &exp.xi_grid,
        exp.pulse_count,
        &Truth {
            frequency: exp.drive_frequency,
            amplitude: fitted_amp,
            xi_offset: fitted_offset,
        },
    )?;

    let mut files = vec![write_scan(ctx, "fig2_scan", &outcome.scan)?];
    let rows = outcome
        .theory
        .iter()
        .zip(&outcome.cells)
        .zip(&model)
        .map(|((t, c), m)| {
            vec![
                format_f64(t.tau),
                format_f64(t.xi),
                format_f64(t.phase),
                format_f64(c.phase),
                format_f64(c.sigma),
                format_f64(c.contrast),
                format_f64(m.phase),
            ]
        });
    files.push(write_table(
        &ctx.path("fig2_phase_map.csv"),
        &[
            "tau_s",
            "xi_rad",
            "theory_phase_rad",
            "measured_phase_rad",
            "measured_sigma_rad",
            "measured_contrast",
            "fitted_model_phase_rad",
        ],
        rows,
    )?);
    files.push(write_with(&ctx.path("fig2_fit.csv"), |w| {
        Ok(write_fit_csv(&outcome.fit, w)?)
    })?);

    let crlb_x = outcome
        .amplitude_crlb
        .map(|a| amplitude_from_phase(a, &exp.trap))
        .transpose()?;
    let report = Fig2Report {
        command: "reproduce-fig2".to_string(),
        seed: ctx.seed,
        generated_unix_s: ctx.stamp(),
        truth: TruthReport::new(&outcome.truth, &exp.trap)?,
        fit: outcome.fit.clone(),
        sensitivity: outcome.sensitivity,
        motion_amplitude_crlb_m: crlb_x,
        total_shots: outcome.scan.total_shots(),
        total_time_s: outcome.scan.total_time(exp.shot_overhead),
        experiment: exp.clone(),
    };
    files.push(write_json(&ctx.path("fig2_report.json"), &report)?);
    if ctx.plot {
        let svg = plot::phase_map_svg(&exp.tau_grid, &exp.xi_grid, &outcome.theory, &outcome.cells);
        files.push(write_with(&ctx.path("fig2_phase_map.svg"), |w| {
            w.write_all(svg.as_bytes())
                .map_err(|e| CliError::io(&ctx.path("fig2_phase_map.svg"), e))
        })?);
    }
    require_converged("phase-map fit", &report.fit)?;
    Ok((report, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Run {
    pub pulse_count: u32,
    pub truth: TruthReport,
    pub fit: FitResult,
    pub sensitivity: Option<SensitivityReport>,
    /// `1/(2nτ_max)`, Hz.
    pub fourier_limit_hz: f64,
    pub total_shots: u64,
    pub total_time_s: f64,
    pub experiment: AsyncExperiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Report {
    pub command: String,
    pub seed: u64,
    pub generated_unix_s: Option<u64>,
    pub runs: Vec<Fig3Run>,
}

/// Dense noiseless curve over the span of `tau_grid`.
fn dense_curve(
    tau_grid: &[f64],
    n: u32,
    truth: &Truth,
) -> Result<Vec<ContrastTheoryPoint>, CliError> {
    let lo = tau_grid.first().copied().unwrap_or(0.0);
    let hi = tau_grid.last().copied().unwrap_or(0.0);
    Ok(contrast_theory(&linspace(lo, hi, 600), n, truth)?)
}

pub fn reproduce_fig3(
    cfg: &RunConfig,
    ctx: &Context,
) -> Result<(Fig3Report, Vec<PathBuf>), CliError> {
    let experiments = cfg.async_experiments(ctx.seed, &[10, 20])?;
    let mut files = Vec::new();
    let mut runs = Vec::new();
    let mut panels = Vec::new();
    let mut summary = Vec::new();
    for exp in &experiments {
        let n = exp.pulse_count;
        let outcome = run_async_experiment(exp)?;
        files.push(write_scan(ctx, &format!("fig3_n{n}_scan"), &outcome.scan)?);
        let fitted = Truth::new(
            outcome
                .fit
                .value("frequency")
                .unwrap_or(exp.drive_frequency),
            outcome.fit.value("amplitude").unwrap_or(0.0),
        );
        let rows = outcome
            .ratios
            .iter()
            .zip(&outcome.theory)
            .map(|(p, t)| -> Result<Vec<String>, CliError> {
                let seq = LockInSequence::new(p.tau, n, XiMode::UniformRandom)?;
                Ok(vec![
                    format_f64(p.tau),
                    format_f64(p.ratio),
                    format_f64(p.sigma),
                    format_f64(p.unsigned_contrast),
                    format_f64(p.reference_contrast),
                    format_f64(t.contrast),
                    format_f64(bessel_contrast(&seq, fitted.frequency, fitted.amplitude)),
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        files.push(write_table(
            &ctx.path(&format!("fig3_n{n}_contrast.csv")),
            &[
                "tau_s",
                "contrast_ratio",
                "sigma",
                "unsigned_contrast",
                "reference_contrast",
                "theory_contrast",
                "fitted_model_contrast",
            ],
            rows,
        )?);
        let theory = dense_curve(&exp.tau_grid, n, &outcome.truth)?;
        let model = dense_curve(&exp.tau_grid, n, &fitted)?;
        files.push(write_table(
            &ctx.path(&format!("fig3_n{n}_theory.csv")),
            &["tau_s", "theory_contrast", "fitted_model_contrast"],
            theory.iter().zip(&model).map(|(t, m)| {
                vec![
                    format_f64(t.tau),
                    format_f64(t.contrast),
                    format_f64(m.contrast),
                ]
            }),
        )?);
        for p in &outcome.fit.parameters {
            summary.push(vec![
                n.to_string(),
                p.name.clone(),
                format_f64(p.value),
                format_f64(p.lower),
                format_f64(p.upper),
            ]);
        }
        let tau_max = exp.tau_grid.iter().copied().fold(0.0, f64::max);
        runs.push(Fig3Run {
            pulse_count: n,
            truth: TruthReport::new(&outcome.truth, &exp.trap)?,
            fit: outcome.fit.clone(),
            sensitivity: outcome.sensitivity,
            fourier_limit_hz: 1.0 / (2.0 * n as f64 * tau_max),
            total_shots: outcome.scan.total_shots(),
            total_time_s: outcome.scan.total_time(exp.shot_overhead),
            experiment: exp.clone(),
        });
        panels.push((n, outcome.ratios, theory, model));
    }
    files.push(write_table(
        &ctx.path("fig3_fit.csv"),
        &["pulse_count", "parameter", "value", "lower", "upper"],
        summary,
    )?);
    let report = Fig3Report {
        command: "reproduce-fig3".to_string(),
        seed: ctx.seed,
        generated_unix_s: ctx.stamp(),
        runs,
    };
    files.push(write_json(&ctx.path("fig3_report.json"), &report)?);
    if ctx.plot {
        let path = ctx.path("fig3_contrast.svg");
        let svg = plot::contrast_svg(&panels);
        files.push(write_with(&path, |w| {
            w.write_all(svg.as_bytes())
                .map_err(|e| CliError::io(&path, e))
        })?);
    }
    for run in &report.runs {
        require_converged(
            &format!("contrast-curve fit, n = {}", run.pulse_count),
            &run.fit,
        )?;
    }
    Ok((report, files))
}

pub fn simulate_sync(cfg: &RunConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let exp = cfg.sync_experiment(ctx.seed)?;
    let scan = run_sync_scan(&exp.tau_grid, &exp.xi_grid, &exp.settings()?)?;
    Ok(vec![write_scan(ctx, "scan_sync", &scan)?])
}

pub fn simulate_async(cfg: &RunConfig, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    cfg.async_experiments(ctx.seed, &[10])?
        .iter()
        .map(|exp| {
            let scan = run_async_scan(&exp.tau_grid, &exp.settings()?, exp.paired)?;
            write_scan(ctx, &format!("scan_async_n{}", exp.pulse_count), &scan)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Fringe,
    PhaseMap,
    ContrastCurve,
}

impl Model {
    fn label(self) -> &'static str {
        match self {
            Model::Fringe => "fringe",
            Model::PhaseMap => "phase-map",
            Model::ContrastCurve => "contrast-curve",
        }
    }
}

/// One fitted record of a fringe-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub tau_s: f64,
    pub xi_rad: Option<f64>,
    pub arm: String,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub command: String,
    pub model: Model,
    pub data: String,
    pub generated_unix_s: Option<u64>,
    pub fit: Option<FitResult>,
    pub sensitivity: Option<SensitivityReport>,
    pub fringes: Vec<FringeFit>,
}

/// Reads a scan file; `.json` files are JSON, anything else CSV.
pub fn read_scan(path: &Path, pulse_count: Option<u32>) -> Result<ScanResult, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let scan = if is_json {
        read_scan_json(reader)?
    } else {
        read_scan_csv(reader, pulse_count)?
    };
    if let Some(n) = pulse_count {
        if is_json && n != scan.pulse_count {
            return Err(CliError::Config(format!(
                "--pulse-count {n} disagrees with the file's {}",
                scan.pulse_count
            )));
        }
    }
    Ok(scan)
}

pub fn fit(
    cfg: &RunConfig,
    ctx: &Context,
    data: &Path,
    model: Model,
    pulse_count: Option<u32>,
) -> Result<(FitReport, Vec<PathBuf>), CliError> {
    let scan = read_scan(data, pulse_count)?;
    let trap = cfg.trap()?;
    let mut report = FitReport {
        command: "fit".to_string(),
        model,
        data: data.display().to_string(),
        generated_unix_s: ctx.stamp(),
        fit: None,
        sensitivity: None,
        fringes: Vec::new(),
    };
    let total_time = scan.total_time(cfg.shot_overhead());
    match model {
        Model::Fringe => {
            for cell in &scan.cells {
                let arms = std::iter::once(("force", &cell.record))
                    .chain(cell.reference.iter().map(|r| ("reference", r)));
                for (arm, record) in arms {
                    let (fit, error) = match fit_fringe(record) {
                        Ok(f) => (Some(f), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    report.fringes.push(FringeFit {
                        tau_s: cell.tau,
                        xi_rad: cell.xi,
                        arm: arm.to_string(),
                        fit,
                        error,
                    });
                }
            }
        }
        Model::PhaseMap => {
            let frequency = cfg.drive_frequency();
            let fit = fit_phase_map(&scan, frequency, &trap, &cfg.phase_map_options())?;
            report.sensitivity = sensitivity_report(&fit, &trap, frequency, total_time).ok();
            report.fit = Some(fit);
        }
        Model::ContrastCurve => {
            let fit = fit_contrast_curve(&scan, &trap, &cfg.contrast_options()?)?;
            let frequency = fit.value("frequency").unwrap_or(cfg.drive_frequency());
            report.sensitivity = sensitivity_report(&fit, &trap, frequency, total_time).ok();
            report.fit = Some(fit);
        }
    }

    let stem = format!("fit_{}", model.label());
    let mut files = vec![write_json(&ctx.path(&format!("{stem}.json")), &report)?];
    let csv_path = ctx.path(&format!("{stem}.csv"));
    match &report.fit {
        Some(f) => files.push(write_with(&csv_path, |w| Ok(write_fit_csv(f, w)?))?),
        None => {
            let rows = report.fringes.iter().map(|r| {
                let get = |name: &str| r.fit.as_ref().and_then(|f| f.get(name)).cloned();
                let (c, p) = (get("contrast"), get("phase"));
                let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), format_f64);
                vec![
                    format_f64(r.tau_s),
                    r.xi_rad.map_or_else(|| "NA".to_string(), format_f64),
                    r.arm.clone(),
                    num(c.as_ref().map(|c| c.value)),
                    num(c.as_ref().map(|c| c.lower)),
                    num(c.as_ref().map(|c| c.upper)),
                    num(p.as_ref().map(|p| p.value)),
                    num(p.as_ref().map(|p| p.lower)),
                    num(p.as_ref().map(|p| p.upper)),
                ]
            });
            files.push(write_table(
                &csv_path,
                &[
                    "tau_s",
                    "xi_rad",
                    "arm",
                    "contrast",
                    "contrast_lower",
                    "contrast_upper",
                    "phase_rad",
                    "phase_lower",
                    "phase_upper",
                ],
                rows,
            )?);
        }
    }
    if let Some(f) = &report.fit {
        require_converged(model.label(), f)?;
    }
    Ok((report, files))
}

/// Runs the oracle suites, printing one line per check.
pub fn selftest(
    ctx: &Context,
    quick: bool,
    mut out: impl Write,
) -> Result<Vec<CheckOutcome>, CliError> {
    let mut opts = SelftestOptions {
        seed: ctx.seed,
        ..SelftestOptions::default()
    };
    if quick {
        opts.oscillator_cases = 10;
        opts.equivalence_draws = 200;
        opts.near_pole_draws = 20;
        opts.bessel_draws = 20_000;
        opts.chi2_replicas = 1_000;
        opts.coverage_seeds = 100;
    }
    let report = run_selftest(&opts);
    for check in &report.checks {
        let _ = writeln!(out, "{check}");
    }
    let _ = writeln!(out, "total {:.1} s", report.seconds);
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(report.checks)
    } else {
        Err(CliError::Selftest(failed.join(", ")))
    }
}
