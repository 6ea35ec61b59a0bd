//! Fixtures shared by the benchmarks.

use ionlock::experiments::{AsyncExperiment, SyncExperiment};
use ionlock::measure::{run_async_scan, run_sync_scan, FringeRecord, ScanResult};

/// Triggered scan at the default desk-scale settings.
pub fn sync_scan(seed: u64) -> (SyncExperiment, ScanResult) {
    let exp = SyncExperiment::standard(seed);
    let scan = run_sync_scan(&exp.tau_grid, &exp.xi_grid, &exp.settings().unwrap()).unwrap();
    (exp, scan)
}

/// Free-running paired scan for `pulse_count` pulses.
pub fn async_scan(pulse_count: u32, seed: u64) -> (AsyncExperiment, ScanResult) {
    let exp = AsyncExperiment::standard(pulse_count, seed);
    let scan = run_async_scan(&exp.tau_grid, &exp.settings().unwrap(), exp.paired).unwrap();
    (exp, scan)
}

/// One fringe of the triggered scan.
pub fn fringe(seed: u64) -> FringeRecord {
    sync_scan(seed).1.cells[57].record.clone()
}
