//! Acceptance criteria, one PASS/FAIL line each. Seeds are fixed here and
//! were not tuned.

use std::time::Instant;

use ionlock::estimate::SensitivityReport;
use ionlock::oscillator::{phase_amplitude, steady_state_amplitude, TrapConfig};
use ionlock::selftest::{bessel_oracle, closed_form_equivalence, run_selftest, SelftestOptions};
use ionlock::ForceDrive;
use ionlock_cli::commands::{reproduce_fig2, reproduce_fig3};
use ionlock_cli::{Context, Format, RunConfig};

const ORACLE_SEED: u64 = 20_240_601;
const FIG2_SEEDS: std::ops::RangeInclusive<u64> = 1..=100;
const FIG3_SEED: u64 = 2024;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn context(dir: &std::path::Path, seed: u64) -> Context {
    Context {
        out_dir: dir.to_path_buf(),
        format: Format::Csv,
        seed,
        timestamp: false,
        plot: false,
    }
}

fn physics_round_trip() -> Outcome {
    let trap = TrapConfig::from_amu(87.9, 1.13e6, 674e-9).map_err(|e| e.to_string())?;
    let drive = ForceDrive::new(8.64e-19, 1013.0, 0.0).map_err(|e| e.to_string())?;
    let x0 = steady_state_amplitude(&drive, &trap).map_err(|e| e.to_string())?;
    let a = phase_amplitude(x0, &trap).map_err(|e| e.to_string())?;
    let (dx, da) = (x0 / 117.5e-9 - 1.0, a / 0.774 - 1.0);
    Ok((
        dx.abs() < 2e-3 && da.abs() < 5e-3,
        format!(
            "x₀ = {:.3} nm ({:+.3}% from 117.5), A = {a:.4} rad ({:+.3}% from 0.774)",
            x0 * 1e9,
            dx * 100.0,
            da * 100.0
        ),
    ))
}

fn oracle_equivalence() -> Outcome {
    let c = closed_form_equivalence(ORACLE_SEED, 10_000, 100);
    Ok((
        c.passed && c.seconds < 60.0,
        format!("{}; {:.1} s", c.detail, c.seconds),
    ))
}

fn bessel() -> Outcome {
    let c = bessel_oracle(ORACLE_SEED, 50, 100_000);
    Ok((
        c.passed && c.seconds < 60.0,
        format!("{}; {:.1} s", c.detail, c.seconds),
    ))
}

fn synchronous() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let mut covered = 0;
    let mut estimates = Vec::new();
    let mut crlb = Vec::new();
    let mut failures = 0;
    let mut truth = 0.0;
    for seed in FIG2_SEEDS {
        match reproduce_fig2(&cfg, &context(dir.path(), seed)) {
            Ok((report, _)) => {
                let x = report
                    .fit
                    .get("motion_amplitude")
                    .ok_or("no motion_amplitude")?;
                truth = report.truth.motion_amplitude_m;
                covered += usize::from(x.contains(truth));
                estimates.push(x.value);
                crlb.push(report.motion_amplitude_crlb_m.ok_or("no CRLB")?);
            }
            Err(_) => failures += 1,
        }
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let sd = (estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let bound = crlb.iter().sum::<f64>() / m;
    let ratio = sd / bound;
    let runs = FIG2_SEEDS.count();
    Ok((
        covered >= 93 && (ratio - 1.0).abs() <= 0.2,
        format!(
            "truth {:.1} nm in 95% CI for {covered}/{runs} seeds ({failures} failed fits), mean x̂ {:.4} nm, SD {:.4} nm vs CRLB {:.4} nm (ratio {ratio:.3})",
            truth * 1e9,
            mean * 1e9,
            sd * 1e9,
            bound * 1e9
        ),
    ))
}

fn asynchronous() -> Outcome {
    // Reported half-widths of x̂₀ for n = 10 and n = 20.
    let reported_half_width = |n: u32| if n == 10 { 3e-9 } else { 4e-9 };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (report, _) = reproduce_fig3(&RunConfig::default(), &context(dir.path(), FIG3_SEED))
        .map_err(|e| e.to_string())?;
    let mut ok = report.runs.len() == 2;
    let mut parts = Vec::new();
    for run in &report.runs {
        let n = run.pulse_count;
        let f = run.fit.get("frequency").ok_or("no frequency")?;
        let x = run
            .fit
            .get("motion_amplitude")
            .ok_or("no motion_amplitude")?;
        let f_width = f.upper - f.lower;
        let x_err = x.value - run.truth.motion_amplitude_m;
        let half_ratio = 0.5 * (x.upper - x.lower) / reported_half_width(n);
        ok &= f_width <= 4.0
            && f_width < run.fourier_limit_hz
            && f.contains(run.truth.frequency_hz)
            && x_err.abs() <= reported_half_width(n)
            && (0.5..=2.0).contains(&half_ratio);
        parts.push(format!(
            "n={n}: f̂ {:.2} Hz, CI width {f_width:.2} Hz (Fourier limit {:.0} Hz), x̂ {:.2} nm ({:+.2} nm), half-width {:.2} nm = {half_ratio:.2}× reported",
            f.value,
            run.fourier_limit_hz,
            x.value * 1e9,
            x_err * 1e9,
            0.5 * (x.upper - x.lower) * 1e9
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn sensitivity_arithmetic() -> Outcome {
    let r = SensitivityReport::new(8.64e-19, 0.03e-19, 9.0 * 3600.0).map_err(|e| e.to_string())?;
    let rel = r.sensitivity / 5.3e-19 - 1.0;
    Ok((
        (r.sensitivity / 5.4e-19 - 1.0).abs() < 1e-12 && rel.abs() < 0.03,
        format!(
            "σ_F √T = {:.3e} N/√Hz, {:+.2}% from 5.3e-19",
            r.sensitivity,
            rel * 100.0
        ),
    ))
}

fn property_suites() -> Outcome {
    let report = run_selftest(&SelftestOptions {
        seed: ORACLE_SEED,
        ..SelftestOptions::default()
    });
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    Ok((
        report.passed() && report.seconds < 300.0,
        format!(
            "{} checks in {:.1} s ({}); failed: [{}]",
            report.checks.len(),
            report.seconds,
            names.join(", "),
            failed.join(", ")
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("physics round trip", physics_round_trip),
        ("closed form vs numeric oracle", oracle_equivalence),
        ("Bessel contrast oracle", bessel),
        ("synchronous end to end", synchronous),
        ("asynchronous end to end", asynchronous),
        ("sensitivity arithmetic", sensitivity_arithmetic),
        ("property suites", property_suites),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= passed;
        println!(
            "{} criterion {}: {name}: {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if !all {
        std::process::exit(1);
    }
}
