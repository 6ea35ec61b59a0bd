use ionlock::experiments::{
    linspace, run_async_experiment, run_sync_experiment, AsyncExperiment, SyncExperiment,
};

fn small_sync(seed: u64) -> SyncExperiment {
    let mut exp = SyncExperiment::standard(seed);
    exp.tau_grid = linspace(0.1 / 1013.0, 0.4 / 1013.0, 8);
    exp.xi_grid = linspace(0.0, 6.0, 8);
    exp
}

#[test]
fn sync_interval_matches_the_bound() {
    let out = run_sync_experiment(&small_sync(11)).unwrap();
    let a = out.fit.get("amplitude").unwrap();
    assert!(a.contains(out.truth.amplitude), "{a:?}");
    let crlb = out.amplitude_crlb.unwrap();
    let half = 0.5 * (a.upper - a.lower);
    assert!(
        (half / (1.96 * crlb) - 1.0).abs() < 0.15,
        "half-width {half} vs 1.96 × {crlb}"
    );
    assert!(out.fit.diagnostics.converged);
}

#[test]
fn async_recovers_frequency_below_fourier_limit() {
    let out = run_async_experiment(&AsyncExperiment::standard(20, 5)).unwrap();
    let f = out.fit.get("frequency").unwrap();
    assert!(f.contains(1013.0), "{f:?}");
    let tau_max = 1.0 / (4.0 * 500.0);
    assert!(f.upper - f.lower < 1.0 / (2.0 * 20.0 * tau_max) / 10.0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sync_experiment(&small_sync(3)).unwrap())
    };
    let (one, many) = (run(1), run(4));
    assert_eq!(one.scan, many.scan);
    assert_eq!(one.fit, many.fit);
}
