//! Independent reference computations used to validate the closed forms.
//!
//! None of these call the routine they check: the oscillator amplitude is
//! obtained by integrating the equation of motion, the ξ-averaged contrast by
//! sampling ξ, and J₀ by quadrature of its integral representation.

use std::f64::consts::PI;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::{lockin_phase_closed_form, LockInSequence};
use crate::oscillator::{ForceDrive, TrapConfig};
use crate::quad::adaptive_simpson;
use crate::rng::stream_rng;

/// Integration steps per trap period for the equation-of-motion oracle.
pub const STEPS_PER_TRAP_PERIOD: usize = 200;

/// Artificial quality factor of the ring-down used to reach steady state.
pub const ORACLE_QUALITY_FACTOR: f64 = 1e4;

/// Steady-state motion amplitude from RK4 integration of
/// `ẍ + (ω_t/Q) ẋ + ω_t² x = (F₀/m) cos(ω_m t)`, starting at rest.
///
/// The ion rings down for nine amplitude e-folding times; the amplitude is
/// then read out by demodulating `x(t)` at the drive frequency over a whole
/// number of drive periods.
pub fn driven_oscillator_amplitude(
    drive: &ForceDrive,
    trap: &TrapConfig,
    quality_factor: f64,
) -> Result<f64> {
    trap.validate()?;
    if !(quality_factor > 0.0) {
        return Err(Error::invalid("quality_factor", "must be positive"));
    }
    let f_t = trap.trap_frequency;
    let f_m = drive.frequency;
    let omega_t = 2.0 * PI * f_t;
    let omega_m = 2.0 * PI * f_m;
    let gamma = omega_t / quality_factor;
    let accel = drive.amplitude / trap.ion_mass;

    // Whole number of steps per drive period, no coarser than the trap grid.
    let steps_per_drive = ((STEPS_PER_TRAP_PERIOD as f64) * f_t / f_m).ceil() as usize;
    let dt = 1.0 / (f_m * steps_per_drive as f64);
    let ringdown = 9.0 * 2.0 / gamma;
    let ringdown_periods = (ringdown * f_m).ceil() as usize;
    let readout_periods = ((f_m / f_t) * 50.0).ceil().max(1.0) as usize;

    let deriv = |t: f64, x: f64, v: f64| -> (f64, f64) {
        (
            v,
            accel * (omega_m * t).cos() - gamma * v - omega_t * omega_t * x,
        )
    };

    let (mut x, mut v) = (0.0f64, 0.0f64);
    let mut in_phase = 0.0;
    let mut quadrature = 0.0;
    let total = (ringdown_periods + readout_periods) * steps_per_drive;
    let readout_start = ringdown_periods * steps_per_drive;
    for step in 0..total {
        let t = step as f64 * dt;
        if step >= readout_start {
            // Rectangle rule is exact for trigonometric polynomials over whole periods.
            in_phase += x * (omega_m * t).cos();
            quadrature += x * (omega_m * t).sin();
        }
        let (k1x, k1v) = deriv(t, x, v);
        let (k2x, k2v) = deriv(t + 0.5 * dt, x + 0.5 * dt * k1x, v + 0.5 * dt * k1v);
        let (k3x, k3v) = deriv(t + 0.5 * dt, x + 0.5 * dt * k2x, v + 0.5 * dt * k2v);
        let (k4x, k4v) = deriv(t + dt, x + dt * k3x, v + dt * k3v);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    let samples = (readout_periods * steps_per_drive) as f64;
    Ok(2.0 * (in_phase * in_phase + quadrature * quadrature).sqrt() / samples)
}

/// Monte-Carlo ξ-average of the lock-in phasor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiAverage {
    pub mean_cos: f64,
    pub stderr_cos: f64,
    pub mean_sin: f64,
    pub stderr_sin: f64,
    pub draws: usize,
}

/// Averages `cos φ(ξ)` and `sin φ(ξ)` over `draws` uniform ξ, split over
/// `streams` independent random streams. Reproducible for a fixed
/// `(seed, streams)` pair regardless of thread count.
pub fn xi_average(
    seq: &LockInSequence,
    frequency: f64,
    amplitude: f64,
    draws: usize,
    seed: u64,
    streams: usize,
) -> XiAverage {
    let streams = streams.max(1);
    let per_stream = draws.div_ceil(streams);
    let partial: Vec<[f64; 4]> = (0..streams)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64, 0);
            let count = per_stream.min(draws.saturating_sub(s * per_stream));
            let mut acc = [0.0; 4];
            for _ in 0..count {
                let xi = 2.0 * PI * rng.random::<f64>();
                let phi = lockin_phase_closed_form(seq, xi, frequency, amplitude);
                let (s, c) = phi.sin_cos();
                acc[0] += c;
                acc[1] += c * c;
                acc[2] += s;
                acc[3] += s * s;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for p in &partial {
        for (t, v) in tot.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = draws as f64;
    let stats = |sum: f64, sum_sq: f64| {
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (mean_cos, stderr_cos) = stats(tot[0], tot[1]);
    let (mean_sin, stderr_sin) = stats(tot[2], tot[3]);
    XiAverage {
        mean_cos,
        stderr_cos,
        mean_sin,
        stderr_sin,
        draws,
    }
}

/// J₀ from `(1/π) ∫₀^π cos(x sin θ) dθ`.
pub fn bessel_j0_quadrature(x: f64) -> Result<f64> {
    Ok(adaptive_simpson(|theta| (x * theta.sin()).cos(), 0.0, PI, 1e-13)? / PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lockin::{bessel_contrast, XiMode};
    use crate::oscillator::steady_state_amplitude;

    #[test]
    fn ode_matches_closed_form_at_operating_point() {
        // Shrunk trap frequency keeps the integration short; the ratio is what matters.
        let trap = TrapConfig::from_amu(87.9, 50e3, 674e-9).unwrap();
        let drive = ForceDrive::new(8.64e-19, 5e3, 0.0).unwrap();
        let oracle = driven_oscillator_amplitude(&drive, &trap, ORACLE_QUALITY_FACTOR).unwrap();
        let closed = steady_state_amplitude(&drive, &trap).unwrap();
        assert!(
            (oracle / closed - 1.0).abs() < 1e-3,
            "{oracle:e} vs {closed:e}"
        );
    }

    #[test]
    fn j0_quadrature_agrees_with_libm() {
        for x in [0.0, 0.5, 1.0, 2.404_825_557_695_773, 5.0, 15.48, 30.0] {
            let q = bessel_j0_quadrature(x).unwrap();
            assert!(
                (q - libm::j0(x)).abs() < 1e-11,
                "x={x}: {q} vs {}",
                libm::j0(x)
            );
        }
    }

    #[test]
    fn xi_average_reproducible_and_close_to_bessel() {
        let seq = LockInSequence::new(2.3e-4, 10, XiMode::UniformRandom).unwrap();
        let a = xi_average(&seq, 1013.0, 0.3, 20_000, 5, 4);
        let b = xi_average(&seq, 1013.0, 0.3, 20_000, 5, 4);
        assert_eq!(a, b);
        let j = bessel_contrast(&seq, 1013.0, 0.3);
        assert!((a.mean_cos - j).abs() < 4.0 * a.stderr_cos + 1e-12);
        assert!(a.mean_sin.abs() < 4.0 * a.stderr_sin + 1e-12);
    }
}
