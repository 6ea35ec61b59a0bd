use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use ionlock_cli::commands::{Fig2Report, Fig3Report, FitReport};
use ionlock_cli::{execute, Cli, CliError};

const SMALL_SYNC: &str = r#"
[scan]
tau = { start = "100 us", stop = "380 us", points = 6 }
xi = { start = "0 deg", stop = "360 deg", points = 6, include_stop = false }
shots_per_phase = 100
"#;

fn ionlock(dir: &Path, args: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut argv = vec!["ionlock", "--no-timestamp", "--out"];
    argv.push(dir.to_str().unwrap());
    argv.extend_from_slice(args);
    execute(Cli::try_parse_from(argv).unwrap())
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

fn width(fit: &ionlock::estimate::FitResult, name: &str) -> f64 {
    let p = fit.get(name).unwrap();
    p.upper - p.lower
}

#[test]
fn csv_and_json_round_trips_fit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, SMALL_SYNC);
    ionlock(d, &["--config", &cfg, "simulate-sync"]).unwrap();
    ionlock(d, &["--config", &cfg, "--format", "json", "simulate-sync"]).unwrap();
    let from_csv = d.join("csv");
    let from_json = d.join("json");
    let data_csv = d.join("scan_sync.csv");
    let data_json = d.join("scan_sync.json");
    ionlock(
        &from_csv,
        &["fit", data_csv.to_str().unwrap(), "--model", "phase-map"],
    )
    .unwrap();
    ionlock(
        &from_json,
        &["fit", data_json.to_str().unwrap(), "--model", "phase-map"],
    )
    .unwrap();
    let a: FitReport = read_json(&from_csv.join("fit_phase-map.json"));
    let b: FitReport = read_json(&from_json.join("fit_phase-map.json"));
    assert_eq!(a.fit, b.fit);
    assert_eq!(
        fs::read(from_csv.join("fit_phase-map.csv")).unwrap(),
        fs::read(from_json.join("fit_phase-map.csv")).unwrap()
    );

    // The same scan fitted in memory gives the same numbers.
    let scan = ionlock_cli::commands::read_scan(&data_csv, None).unwrap();
    let direct = ionlock::estimate::fit_phase_map(
        &scan,
        1013.0,
        &ionlock::TrapConfig::default(),
        &ionlock::estimate::PhaseMapOptions::default(),
    )
    .unwrap();
    assert_eq!(a.fit.unwrap(), direct);
}

#[test]
fn truncated_files_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, SMALL_SYNC);
    ionlock(d, &["--config", &cfg, "simulate-sync"]).unwrap();
    let text = fs::read_to_string(d.join("scan_sync.csv")).unwrap();

    let no_columns: String = text
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                l.to_string()
            } else {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{}", f[0], f[2], f[4])
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let bad = d.join("columns.csv");
    fs::write(&bad, no_columns).unwrap();
    let err = ionlock(d, &["fit", bad.to_str().unwrap(), "--model", "phase-map"]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("xi_rad") && msg.contains("shots"), "{msg}");
    assert_eq!(err.exit_code(), 1);

    let cut = &text[..text.len() - 7];
    let bad = d.join("cut.csv");
    fs::write(&bad, cut).unwrap();
    let err = ionlock(d, &["fit", bad.to_str().unwrap(), "--model", "phase-map"]).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn noiseless_fringe_recovers_exact_parameters() {
    // P = ½ + (C/2)cos(φ − φ_clk) with C cos φ = 0.48 and C sin φ = 0.36.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("# pulse_count = 1\ntau_s,xi_rad,phi_rad,shots,d_counts\n");
    for (k, counts) in [740, 680, 260, 320].iter().enumerate() {
        let phi = k as f64 * std::f64::consts::FRAC_PI_2;
        text.push_str(&format!("1e-4,0.0,{phi:?},1000,{counts}\n"));
    }
    let data = d.join("fringe.csv");
    fs::write(&data, text).unwrap();
    ionlock(d, &["fit", data.to_str().unwrap(), "--model", "fringe"]).unwrap();
    let report: FitReport = read_json(&d.join("fit_fringe.json"));
    let fit = report.fringes[0].fit.as_ref().unwrap();
    assert!((fit.value("contrast").unwrap() - 0.6).abs() < 1e-8);
    // A maximized likelihood pins its argument to about √ε.
    assert!((fit.value("phase").unwrap() - 0.36f64.atan2(0.48)).abs() < 1e-7);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ionlock(out, &["--seed", "99", "--plot", "reproduce-fig3"]).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let c = dir.path().join("c");
    ionlock(&c, &["--seed", "100", "reproduce-fig3"]).unwrap();
    assert_ne!(
        fs::read(a.join("fig3_n10_scan.csv")).unwrap(),
        fs::read(c.join("fig3_n10_scan.csv")).unwrap()
    );
}

#[test]
fn zero_force_gives_a_flat_phase_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, SMALL_SYNC);
    // Without signal the offset is unidentifiable; the fit may flag that.
    let _ = ionlock(d, &["--config", &cfg, "reproduce-fig2", "--force", "0 N"]);
    assert!(column(&d.join("fig2_phase_map.csv"), "theory_phase_rad")
        .iter()
        .all(|&p| p == 0.0));
    let measured = column(&d.join("fig2_phase_map.csv"), "measured_phase_rad");
    let sigma = column(&d.join("fig2_phase_map.csv"), "measured_sigma_rad");
    let chi2: f64 = measured
        .iter()
        .zip(&sigma)
        .map(|(p, s)| (p / s).powi(2))
        .sum();
    // 36 cells; the 99.9% point of χ²(36) is 67.9.
    assert!(chi2 < 67.9, "χ² = {chi2}");
    let report: Fig2Report = read_json(&d.join("fig2_report.json"));
    assert_eq!(report.fit.get("amplitude").unwrap().lower, 0.0);
}

#[test]
fn ten_times_the_shots_shrinks_intervals_by_root_ten() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, SMALL_SYNC);
    let few = d.join("few");
    let many = d.join("many");
    ionlock(&few, &["--config", &cfg, "reproduce-fig2", "--shots", "40"]).unwrap();
    ionlock(
        &many,
        &["--config", &cfg, "reproduce-fig2", "--shots", "400"],
    )
    .unwrap();
    let a: Fig2Report = read_json(&few.join("fig2_report.json"));
    let b: Fig2Report = read_json(&many.join("fig2_report.json"));
    let ratio = width(&a.fit, "motion_amplitude") / width(&b.fit, "motion_amplitude");
    assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    assert_eq!(b.total_shots, 10 * a.total_shots);
}

#[test]
fn zero_force_contrast_ratio_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let _ = ionlock(d, &["reproduce-fig3", "--force", "0 N"]);
    for n in [10, 20] {
        let path = d.join(format!("fig3_n{n}_contrast.csv"));
        let ratio = column(&path, "contrast_ratio");
        let sigma = column(&path, "sigma");
        assert!(column(&path, "theory_contrast").iter().all(|&c| c == 1.0));
        let w: f64 = sigma.iter().map(|s| s.powi(-2)).sum();
        let mean = ratio
            .iter()
            .zip(&sigma)
            .map(|(r, s)| r / s.powi(2))
            .sum::<f64>()
            / w;
        assert!(
            (mean - 1.0).abs() < 4.0 / w.sqrt(),
            "n={n}: mean {mean} ± {}",
            1.0 / w.sqrt()
        );
    }
    let report: Fig3Report = read_json(&d.join("fig3_report.json"));
    assert!(report.runs.iter().all(|r| r.truth.force_n == 0.0));
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "[trap]\nfrequncy = \"1 MHz\"\n");
    let err = ionlock(d, &["--config", &cfg, "simulate-sync"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("frequncy"));
    let err = ionlock(d, &["simulate-sync", "--force", "1e-19 kg"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let cfg = config(d, "[drive]\nfrequency = \"1.13 MHz\"\n");
    let err = ionlock(d, &["--config", &cfg, "simulate-sync"]).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn binary_reports_files_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ionlock"))
        .args(["--no-timestamp", "--out"])
        .arg(dir.path())
        .arg("simulate-async")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("scan_async_n10.csv"));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ionlock"))
        .args(["fit", "/nonexistent.csv", "--model", "fringe"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn readme_configs_load() {
    let readme = include_str!("../../../README.md");
    let blocks: Vec<&str> = readme
        .split("```toml\n")
        .skip(1)
        .map(|b| &b[..b.find("```").unwrap()])
        .collect();
    assert_eq!(blocks.len(), 2);
    let sync = ionlock_cli::RunConfig::parse(blocks[0]).unwrap();
    assert_eq!(sync.sync_experiment(1).unwrap().xi_grid.len(), 20);
    let free = ionlock_cli::RunConfig::parse(blocks[1]).unwrap();
    let runs = free.async_experiments(1, &[10]).unwrap();
    assert_eq!(
        runs.iter().map(|r| r.pulse_count).collect::<Vec<_>>(),
        [10, 20]
    );
    assert!(free.sync_experiment(1).is_err());
}
