//! Oracle and property suites runnable outside the test harness.
//!
//! Each check compares the production code against an independent reference
//! (numeric integration, equation-of-motion integration, Monte-Carlo
//! averaging, exact binomial law) and reports a one-line verdict.

use std::f64::consts::PI;
use std::time::Instant;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use crate::error::Result;
use crate::estimate::{fit_fringe, ParameterEstimate};
use crate::lockin::{
    bessel_contrast, lockin_phase_closed_form, lockin_phase_numeric, modulated_integral,
    printed_contrast, wrap_phase, LockInSequence, XiMode,
};
use crate::measure::{
    phase_grid, run_async_scan, run_sync_scan, simulate_fringe, NoiseModel, ScanSettings, Truth,
};
use crate::oracle::{driven_oscillator_amplitude, xi_average, ORACLE_QUALITY_FACTOR};
use crate::oscillator::{
    force_from_amplitude, steady_state_amplitude, ForceDrive, TrapConfig, AMU_KG,
};
use crate::rng::stream_rng;

/// Verdict of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {}: {} ({:.1} s)",
            self.name, self.detail, self.seconds
        )
    }
}

fn timed(name: &str, check: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Sizes of the suites run by [`run_selftest`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelftestOptions {
    pub seed: u64,
    pub oscillator_cases: usize,
    pub equivalence_draws: usize,
    pub near_pole_draws: usize,
    pub bessel_draws: usize,
    pub chi2_replicas: usize,
    pub coverage_seeds: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 20_240_601,
            oscillator_cases: 100,
            equivalence_draws: 2_000,
            near_pole_draws: 100,
            bessel_draws: 100_000,
            chi2_replicas: 2_000,
            coverage_seeds: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let start = Instant::now();
    let checks = vec![
        dc_rejection(opts.seed, 200),
        oscillator_invariants(opts.seed, opts.oscillator_cases),
        oscillator_ode_oracle(opts.seed, opts.oscillator_cases),
        closed_form_equivalence(opts.seed, opts.equivalence_draws, opts.near_pole_draws),
        bessel_oracle(opts.seed, 50, opts.bessel_draws),
        determinism(opts.seed),
        binomial_chi2(opts.seed, opts.chi2_replicas),
        fringe_coverage(opts.seed, opts.coverage_seeds),
    ];
    SelftestReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// A constant detuning accumulates no phase under the echo train.
pub fn dc_rejection(seed: u64, cases: usize) -> CheckOutcome {
    timed("dc-rejection", || {
        let mut rng = stream_rng(seed, 1, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let tau = 1e-5 + 1e-3 * rng.random::<f64>();
            let n = 1 + rng.random_range(0..30u32);
            let delta = 2.0 * PI * 1e3 * (rng.random::<f64>() - 0.5);
            let seq = LockInSequence::new(tau, n, XiMode::UniformRandom)?;
            let phase = modulated_integral(&seq, |_| delta, 1e-13, f64::INFINITY)?;
            worst = worst.max(phase.abs());
        }
        Ok((
            worst < 1e-9,
            format!("{cases} sequences, max |φ| = {worst:.1e} rad"),
        ))
    })
}

fn random_trap(rng: &mut impl rand::Rng) -> Result<TrapConfig> {
    TrapConfig::new(
        (1.0 + 200.0 * rng.random::<f64>()) * AMU_KG,
        1e5 + 2e6 * rng.random::<f64>(),
        300e-9 + 1e-6 * rng.random::<f64>(),
        0.2 + 0.8 * rng.random::<f64>(),
    )
}

/// Linearity in force, exact force ↔ amplitude round trip, and monotonic
/// growth of the response toward resonance.
pub fn oscillator_invariants(seed: u64, cases: usize) -> CheckOutcome {
    timed("oscillator-invariants", || {
        let mut rng = stream_rng(seed, 2, 0);
        let mut worst_linear: f64 = 0.0;
        let mut worst_round_trip: f64 = 0.0;
        let mut monotone = true;
        for _ in 0..cases {
            let trap = random_trap(&mut rng)?;
            let f_t = trap.trap_frequency;
            let force = 1e-21 * 10f64.powf(4.0 * rng.random::<f64>());
            let f_m = f_t * 0.95 * rng.random::<f64>();
            let k = 0.1 + 10.0 * rng.random::<f64>();
            let x = steady_state_amplitude(&ForceDrive::new(force, f_m, 0.0)?, &trap)?;
            let xk = steady_state_amplitude(&ForceDrive::new(k * force, f_m, 0.0)?, &trap)?;
            worst_linear = worst_linear.max((xk / (k * x) - 1.0).abs());
            let back = force_from_amplitude(x, f_m, &trap)?;
            worst_round_trip = worst_round_trip.max((back / force - 1.0).abs());
            let mut last = 0.0;
            for i in 1..=20 {
                let f = f_t * 0.95 * i as f64 / 20.0;
                let xi = steady_state_amplitude(&ForceDrive::new(force, f, 0.0)?, &trap)?;
                monotone &= xi > last;
                last = xi;
            }
        }
        Ok((
            worst_linear < 1e-12 && worst_round_trip < 1e-12 && monotone,
            format!(
                "linearity {worst_linear:.1e}, round trip {worst_round_trip:.1e}, monotone below resonance: {monotone}"
            ),
        ))
    })
}

/// Closed-form amplitude against RK4 integration of the equation of motion
/// for random parameter sets with `f_m < f_t / 2`.
pub fn oscillator_ode_oracle(seed: u64, cases: usize) -> CheckOutcome {
    timed("oscillator-ode-oracle", || {
        let mut rng = stream_rng(seed, 3, 0);
        let mut sets = Vec::with_capacity(cases);
        for _ in 0..cases {
            let trap = random_trap(&mut rng)?;
            let f_m = trap.trap_frequency * (0.01 + 0.49 * rng.random::<f64>());
            let force = 1e-21 * 10f64.powf(4.0 * rng.random::<f64>());
            sets.push((trap, ForceDrive::new(force, f_m, 0.0)?));
        }
        let errors = sets
            .par_iter()
            .map(|(trap, drive)| {
                let ode = driven_oscillator_amplitude(drive, trap, ORACLE_QUALITY_FACTOR)?;
                let closed = steady_state_amplitude(drive, trap)?;
                Ok((ode / closed - 1.0).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let worst = errors.iter().copied().fold(0.0, f64::max);
        Ok((
            worst < 1e-3,
            format!("{cases} sets, max relative deviation {worst:.1e} (limit 1e-3)"),
        ))
    })
}

/// Closed-form lock-in phase against segment-wise numeric integration, over
/// random draws of τ ∈ [0.1, 2]/f, ξ, n ∈ [1, 30] and A ∈ [0, 3], plus
/// `near_pole` draws with `2πfτ` within 10⁻⁴ rad of a zero of its cosine.
pub fn closed_form_equivalence(seed: u64, draws: usize, near_pole: usize) -> CheckOutcome {
    timed("closed-form-vs-numeric", || {
        let f = 1013.0;
        let mut rng = stream_rng(seed, 4, 0);
        let mut cases = Vec::with_capacity(draws + near_pole);
        for i in 0..draws + near_pole {
            let tau = if i < draws {
                (0.1 + 1.9 * rng.random::<f64>()) / f
            } else {
                // Pole k of cos(2πfτ) inside [0.1, 2]/f, approached at a
                // log-uniform distance down to exact coincidence.
                let k = rng.random_range(0..4u32) as f64;
                let pole = (2.0 * k + 1.0) * PI / 2.0;
                let j = i - draws;
                let offset = if j.is_multiple_of(10) {
                    0.0
                } else {
                    let mag = 10f64.powf(-4.0 - 10.0 * rng.random::<f64>());
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                };
                (pole + offset) / (2.0 * PI * f)
            };
            let xi = 2.0 * PI * rng.random::<f64>();
            let n = 1 + rng.random_range(0..30u32);
            let a = 3.0 * rng.random::<f64>();
            cases.push((i >= draws, tau, xi, n, a));
        }
        let errors = cases
            .par_iter()
            .map(|&(pole, tau, xi, n, a)| {
                let seq = LockInSequence::new(tau, n, XiMode::Fixed(xi))?;
                let numeric = lockin_phase_numeric(&seq, xi, f, a)?;
                let closed = lockin_phase_closed_form(&seq, xi, f, a);
                Ok((pole, (numeric - closed).abs(), (tau, xi, n, a)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, worst_err, (wt, wx, wn, wa)) = errors
            .iter()
            .copied()
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap_or((false, 0.0, (0.0, 0.0, 0, 0.0)));
        let worst = |pole: bool| {
            errors
                .iter()
                .filter(|e| e.0 == pole)
                .map(|e| e.1)
                .fold(0.0, f64::max)
        };
        let (random, poles) = (worst(false), worst(true));
        Ok((
            random < 1e-9 && poles < 1e-9,
            format!(
                "{draws} random draws max |Δφ| = {random:.1e} rad, {near_pole} near-pole max |Δφ| = {poles:.1e} rad; worst {worst_err:.1e} at fτ = {:.6}, ξ = {wx:.4}, n = {wn}, A = {wa:.4}",
                wt * f
            ),
        ))
    })
}

/// Monte-Carlo ξ-average of `cos φ` on a τ grid spanning several contrast
/// sign flips, against `J₀(Φ)` and against `½ + ½J₀(Φ)`.
pub fn bessel_oracle(seed: u64, points: usize, draws: usize) -> CheckOutcome {
    timed("bessel-contrast-oracle", || {
        let (f, a, n) = (1013.0, 0.774, 10);
        let taus: Vec<f64> = (0..points)
            .map(|i| (0.05 + 0.2 * i as f64 / (points - 1) as f64) / f)
            .collect();
        let mut within = 0;
        let mut printed_within = 0;
        let mut worst_z: f64 = 0.0;
        let mut signs = (false, false);
        for (i, &tau) in taus.iter().enumerate() {
            let seq = LockInSequence::new(tau, n, XiMode::UniformRandom)?;
            let mc = xi_average(&seq, f, a, draws, seed.wrapping_add(i as u64), 8);
            let j0 = bessel_contrast(&seq, f, a);
            let se = mc.stderr_cos.max(1e-12);
            let z = (mc.mean_cos - j0).abs() / se;
            worst_z = worst_z.max(z);
            within += usize::from(z <= 3.0);
            printed_within +=
                usize::from((mc.mean_cos - printed_contrast(&seq, f, a)).abs() <= 3.0 * se);
            signs.0 |= j0 > 0.0;
            signs.1 |= j0 < 0.0;
        }
        let flips = signs.0 && signs.1;
        Ok((
            within == points && flips,
            format!(
                "J₀ within 3 SE at {within}/{points} τ (max {worst_z:.2} SE), ½+½J₀ at {printed_within}/{points}, sign flip spanned: {flips}"
            ),
        ))
    })
}

/// Reruns small scans on one and on several threads and requires
/// bit-identical records.
pub fn determinism(seed: u64) -> CheckOutcome {
    timed("determinism", || {
        let settings = ScanSettings {
            pulse_count: 6,
            phases: phase_grid(8),
            shots_per_phase: 40,
            truth: Truth {
                frequency: 1013.0,
                amplitude: 0.7,
                xi_offset: 0.2,
            },
            noise: NoiseModel::ideal(seed),
        };
        let taus = [1e-4, 1.5e-4, 2.5e-4];
        let xis = [0.0, 1.0, 2.0, 4.0];
        let run = |threads: usize| -> Result<_> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| crate::Error::NonConvergence(format!("thread pool: {e}")))?;
            pool.install(|| {
                Ok((
                    run_sync_scan(&taus, &xis, &settings)?,
                    run_async_scan(&taus, &settings, true)?,
                ))
            })
        };
        let first = run(1)?;
        let again = run(1)?;
        let parallel = run(4)?;
        let same = first == again && first == parallel;
        let mut other = settings.clone();
        other.noise.rng_seed = seed.wrapping_add(1);
        let differs = run_sync_scan(&taus, &xis, &other)? != first.0;
        Ok((
            same && differs,
            format!(
                "reruns identical on 1 and 4 threads: {same}; new seed changes data: {differs}"
            ),
        ))
    })
}

/// Pearson χ² of the D-count histogram against the exact binomial law, over
/// `replicas` independently seeded fringes at fixed (φ, ξ).
pub fn binomial_chi2(seed: u64, replicas: usize) -> CheckOutcome {
    timed("binomial-chi2", || {
        let shots = 40u32;
        let phases = [0.3, 2.0, 4.4];
        let seq = LockInSequence::new(1.9e-4, 10, XiMode::Fixed(0.8))?;
        let truth = Truth::new(1013.0, 0.774);
        let noise = NoiseModel {
            dephasing_contrast: 0.9,
            rng_seed: 0,
            d_level_lifetime: None,
        };
        let counts: Vec<Vec<u32>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let noise = NoiseModel {
                    rng_seed: seed.wrapping_mul(1_000_003).wrapping_add(r as u64),
                    ..noise
                };
                Ok(simulate_fringe(&seq, &phases, shots, &truth, &noise)?.d_counts)
            })
            .collect::<Result<_>>()?;
        let mut chi2 = 0.0;
        let mut dof = 0usize;
        for (j, &phi) in phases.iter().enumerate() {
            let p = crate::measure::shot_probability(&seq, 0.8, phi, &truth, &noise);
            let law = Binomial::new(p, shots as u64).expect("valid binomial");
            let mut observed = vec![0f64; shots as usize + 1];
            for c in &counts {
                observed[c[j] as usize] += 1.0;
            }
            let expected: Vec<f64> = (0..=shots as u64)
                .map(|k| replicas as f64 * law.pmf(k))
                .collect();
            let (obs, exp) = pool_bins(&observed, &expected, 5.0);
            dof += obs.len() - 1;
            chi2 += obs
                .iter()
                .zip(&exp)
                .map(|(o, e)| (o - e) * (o - e) / e)
                .sum::<f64>();
        }
        let p_value = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(chi2);
        Ok((
            p_value >= 0.01,
            format!("χ² = {chi2:.1} on {dof} dof, p = {p_value:.3} (reject below 0.01)"),
        ))
    })
}

/// Merges adjacent bins from both tails until every expected count reaches
/// `min_expected`.
fn pool_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
        *o += o_acc;
        *e += e_acc;
    }
    (obs, exp)
}

fn covers_angle(est: &ParameterEstimate, truth: f64) -> bool {
    (-1..=1).any(|k| est.contains(truth + 2.0 * PI * k as f64))
}

/// Fraction of seeded 250 × 12 fringes whose 95 % intervals contain the
/// generating contrast and phase.
pub fn fringe_coverage(seed: u64, seeds: usize) -> CheckOutcome {
    timed("fringe-fit-coverage", || {
        let seq = LockInSequence::new(1.9e-4, 10, XiMode::Fixed(0.8))?;
        let truth = Truth::new(1013.0, 0.774);
        let contrast = 0.9;
        let phase = wrap_phase(lockin_phase_closed_form(
            &seq,
            0.8,
            truth.frequency,
            truth.amplitude,
        ));
        let phases = phase_grid(12);
        let hits = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let noise = NoiseModel {
                    dephasing_contrast: contrast,
                    rng_seed: seed.wrapping_mul(7_919).wrapping_add(s as u64),
                    d_level_lifetime: None,
                };
                let record = simulate_fringe(&seq, &phases, 250, &truth, &noise)?;
                let fit = fit_fringe(&record)?;
                let c = fit.get("contrast").expect("contrast").contains(contrast);
                let p = covers_angle(fit.get("phase").expect("phase"), phase);
                Ok((usize::from(c), usize::from(p)))
            })
            .collect::<Result<Vec<_>>>()?;
        let c_hits: usize = hits.iter().map(|h| h.0).sum();
        let p_hits: usize = hits.iter().map(|h| h.1).sum();
        let need = (0.93 * seeds as f64).ceil() as usize;
        Ok((
            c_hits >= need && p_hits >= need,
            format!(
                "contrast covered {c_hits}/{seeds}, phase covered {p_hits}/{seeds} (need {need})"
            ),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_keeps_totals() {
        let (o, e) = pool_bins(
            &[1.0, 2.0, 30.0, 40.0, 3.0, 1.0],
            &[0.5, 2.0, 35.0, 35.0, 2.0, 0.5],
            5.0,
        );
        assert_eq!(o.iter().sum::<f64>(), 77.0);
        assert_eq!(e.iter().sum::<f64>(), 75.0);
        assert!(e.iter().all(|&x| x >= 5.0));
    }

    #[test]
    fn quick_suites_pass() {
        let seed = 11;
        for check in [
            dc_rejection(seed, 40),
            oscillator_invariants(seed, 20),
            determinism(seed),
        ] {
            assert!(check.passed, "{check}");
        }
    }
}
