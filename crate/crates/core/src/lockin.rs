//! Quantum lock-in phase accumulation.
//!
//! A Ramsey superposition is interrupted by `n` optical π-pulses spaced `2τ`
//! apart (first pulse at `τ`, last wait `τ`). Each pulse flips the sign of the
//! subsequent phase accumulation, so the clock phase is the integral of the
//! Doppler detuning weighted by a ±1 square wave. For a sinusoidal drive the
//! integral has a closed form; a segment-wise numeric integral of the same
//! quantity is kept alongside as its oracle.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::panelled_simpson;

/// Absolute tolerance of [`lockin_phase_numeric`], rad.
pub const NUMERIC_TOLERANCE: f64 = 1e-12;

/// Below this reduced distance from a pole of `1/cos(2π f τ)` the closed form
/// switches to the series limit of the Dirichlet ratio.
const SINGULARITY_WINDOW: f64 = 1e-6;

/// How the force phase ξ at the first π/2 pulse is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "xi_rad", rename_all = "snake_case")]
pub enum XiMode {
    /// Sequence triggered at a fixed phase of the force.
    Fixed(f64),
    /// Free-running: ξ is uniform on [0, 2π) and redrawn every shot.
    UniformRandom,
}

/// Echo train: `n` blocks of (wait τ, π-pulse, wait τ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockInSequence {
    /// Wait time τ on either side of each π-pulse, s.
    pub half_period: f64,
    /// Number of π-pulses n.
    pub pulse_count: u32,
    pub xi_mode: XiMode,
}

impl LockInSequence {
    pub fn new(half_period: f64, pulse_count: u32, xi_mode: XiMode) -> Result<Self> {
        let seq = LockInSequence {
            half_period,
            pulse_count,
            xi_mode,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_period > 0.0 && self.half_period.is_finite()) {
            return Err(Error::invalid(
                "half_period",
                format!("must be finite and positive, got {}", self.half_period),
            ));
        }
        if self.pulse_count == 0 {
            return Err(Error::invalid("pulse_count", "must be at least 1"));
        }
        if let XiMode::Fixed(xi) = self.xi_mode {
            if !xi.is_finite() {
                return Err(Error::invalid("xi", "must be finite"));
            }
        }
        Ok(())
    }

    /// Total free-evolution time `2nτ`, s.
    pub fn duration(&self) -> f64 {
        2.0 * self.pulse_count as f64 * self.half_period
    }

    /// Constant-sign pieces of the modulation as `(start, end, sign)`.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let tau = self.half_period;
        let n = self.pulse_count as usize;
        let mut out = Vec::with_capacity(n + 1);
        out.push((0.0, tau, 1.0));
        for k in 1..n {
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            out.push(((2 * k - 1) as f64 * tau, (2 * k + 1) as f64 * tau, sign));
        }
        let last_sign = if n % 2 == 1 { -1.0 } else { 1.0 };
        out.push(((2 * n - 1) as f64 * tau, self.duration(), last_sign));
        out
    }
}

/// Square-wave modulation: `+1` on `[0, τ)`, flipping sign at every
/// `(2k−1)τ` for `k = 1..=n`, and `0` outside `[0, 2nτ]`.
pub fn modulation_value(t: f64, seq: &LockInSequence) -> i8 {
    if !(t >= 0.0 && t <= seq.duration()) {
        return 0;
    }
    let flips = ((t + seq.half_period) / (2.0 * seq.half_period)).floor() as u64;
    let flips = flips.min(seq.pulse_count as u64);
    if flips.is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Unmodulated Doppler phase `A [sin(2π f t + ξ) − sin ξ]`.
pub fn doppler_phase(t: f64, amplitude: f64, xi: f64, frequency: f64) -> f64 {
    amplitude * ((2.0 * PI * frequency * t + xi).sin() - xi.sin())
}

/// Instantaneous Doppler detuning, the time derivative of [`doppler_phase`],
/// rad/s.
pub fn doppler_detuning(t: f64, amplitude: f64, xi: f64, frequency: f64) -> f64 {
    let omega = 2.0 * PI * frequency;
    amplitude * omega * (omega * t + xi).cos()
}

/// Integral over the sequence of an arbitrary detuning weighted by the
/// square-wave modulation, to absolute tolerance `tol`.
/// Quadrature panels are at most `max_panel` wide; pass a fraction of the
/// shortest period in `detuning`, or infinity for slowly varying integrands.
pub fn modulated_integral<F: Fn(f64) -> f64>(
    seq: &LockInSequence,
    detuning: F,
    tol: f64,
    max_panel: f64,
) -> Result<f64> {
    seq.validate()?;
    let segments = seq.segments();
    let per_segment = tol / segments.len() as f64;
    segments.iter().try_fold(0.0, |acc, &(a, b, sign)| {
        Ok(acc + sign * panelled_simpson(&detuning, a, b, per_segment, max_panel)?)
    })
}

/// Panel width for integrating a drive at `frequency`.
fn drive_panel(frequency: f64) -> f64 {
    0.25 / frequency
}

/// Lock-in phase by numeric integration of the modulated Doppler detuning.
pub fn lockin_phase_numeric(
    seq: &LockInSequence,
    xi: f64,
    frequency: f64,
    amplitude: f64,
) -> Result<f64> {
    if amplitude == 0.0 {
        return Ok(0.0);
    }
    modulated_integral(
        seq,
        |t| doppler_detuning(t, amplitude, xi, frequency),
        NUMERIC_TOLERANCE,
        drive_panel(frequency),
    )
}

/// Time-resolved lock-in phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    /// Sample times, strictly increasing over `[0, 2nτ]`, s.
    pub times: Vec<f64>,
    /// Modulated detuning `F_mod(t) δ(t)` at each sample, rad/s. At a pulse
    /// the value of the segment starting there is used.
    pub detuning: Vec<f64>,
    /// Running integral of the modulated detuning, rad.
    pub phase: Vec<f64>,
}

impl PhaseTrace {
    pub fn final_phase(&self) -> f64 {
        self.phase.last().copied().unwrap_or(0.0)
    }
}

/// Samples the lock-in phase evolution with `samples_per_segment` intervals
/// on each constant-sign piece of the modulation.
pub fn phase_trace(
    seq: &LockInSequence,
    xi: f64,
    frequency: f64,
    amplitude: f64,
    samples_per_segment: usize,
) -> Result<PhaseTrace> {
    seq.validate()?;
    if samples_per_segment == 0 {
        return Err(Error::invalid("samples_per_segment", "must be at least 1"));
    }
    let segments = seq.segments();
    let steps = segments.len() * samples_per_segment;
    let tol = NUMERIC_TOLERANCE / steps as f64;
    let detuning = |t: f64| doppler_detuning(t, amplitude, xi, frequency);

    let mut times = vec![0.0];
    let mut values = vec![detuning(0.0)];
    let mut phase = vec![0.0];
    let mut acc = 0.0;
    for &(a, b, sign) in &segments {
        let h = (b - a) / samples_per_segment as f64;
        let mut prev = a;
        for i in 1..=samples_per_segment {
            let t = if i == samples_per_segment {
                b
            } else {
                a + h * i as f64
            };
            acc += sign * panelled_simpson(detuning, prev, t, tol, drive_panel(frequency))?;
            let next_sign = if i == samples_per_segment {
                -sign
            } else {
                sign
            };
            times.push(t);
            phase.push(acc);
            values.push(if t >= seq.duration() { sign } else { next_sign } * detuning(t));
            prev = t;
        }
    }
    Ok(PhaseTrace {
        times,
        detuning: values,
        phase,
    })
}

/// `sin(n u) / sin(u)`, evaluated stably near the zeros of `sin u`.
fn dirichlet_ratio(n: u32, u: f64) -> f64 {
    let m = (u / PI).round();
    let r = u - m * PI;
    let n_f = n as f64;
    let reduced = if r.abs() < SINGULARITY_WINDOW {
        n_f * (1.0 - (n_f * n_f - 1.0) * r * r / 6.0)
    } else {
        (n_f * r).sin() / r.sin()
    };
    // sin(n(r + mπ)) / sin(r + mπ) = (−1)^{m(n−1)} sin(n r) / sin(r)
    let parity = (m as i64).rem_euclid(2) * ((n as i64 - 1).rem_euclid(2));
    if parity == 1 {
        -reduced
    } else {
        reduced
    }
}

/// Signed amplitude `a(τ, n, f)` such that the lock-in phase is
/// `A · a · cos(ξ + n(2π f τ + π/2))`.
fn lockin_gain(seq: &LockInSequence, frequency: f64) -> (f64, f64) {
    let theta = 2.0 * PI * frequency * seq.half_period;
    let u = theta + FRAC_PI_2;
    let half = (0.5 * theta).sin();
    let gain = -4.0 * half * half * dirichlet_ratio(seq.pulse_count, u);
    (gain, seq.pulse_count as f64 * u)
}

/// Closed-form lock-in phase for a sinusoidal force of phase amplitude
/// `amplitude`, frequency `frequency` and phase `xi` at the first π/2 pulse.
///
/// `φ = −4A sin²(πfτ) cos(ξ + n(2πfτ + π/2)) · sin(n(2πfτ + π/2)) / cos(2πfτ)`,
/// with the `cos(2πfτ) = 0` poles removed analytically. The result is not
/// wrapped.
pub fn lockin_phase_closed_form(
    seq: &LockInSequence,
    xi: f64,
    frequency: f64,
    amplitude: f64,
) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    let (gain, offset) = lockin_gain(seq, frequency);
    amplitude * gain * (xi + offset).cos()
}

/// Amplitude Φ of the ξ-dependence of the lock-in phase,
/// `φ(ξ) = Φ cos(ξ + const)`.
pub fn lockin_phase_amplitude(seq: &LockInSequence, frequency: f64, amplitude: f64) -> f64 {
    (amplitude * lockin_gain(seq, frequency).0).abs()
}

/// The force phase ξ ∈ [0, 2π) that maximizes the accumulated lock-in phase.
pub fn maximizing_xi(seq: &LockInSequence, frequency: f64) -> f64 {
    let (gain, offset) = lockin_gain(seq, frequency);
    let xi = if gain >= 0.0 { -offset } else { PI - offset };
    xi.rem_euclid(2.0 * PI)
}

/// Fringe contrast after averaging the lock-in phase over a uniformly random
/// force phase: `⟨cos φ(ξ)⟩_ξ = J₀(Φ)`. Negative past the first zero of J₀.
pub fn bessel_contrast(seq: &LockInSequence, frequency: f64, amplitude: f64) -> f64 {
    libm::j0(lockin_phase_amplitude(seq, frequency, amplitude))
}

/// The alternative `½ + ½ J₀(Φ)` contrast form. Kept for comparison only;
/// ξ-averaging yields [`bessel_contrast`].
pub fn printed_contrast(seq: &LockInSequence, frequency: f64, amplitude: f64) -> f64 {
    0.5 + 0.5 * bessel_contrast(seq, frequency, amplitude)
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F_M: f64 = 1013.0;

    fn seq(tau: f64, n: u32) -> LockInSequence {
        LockInSequence::new(tau, n, XiMode::Fixed(0.0)).unwrap()
    }

    /// Direct sum of the segment end-point values of the antiderivative.
    fn telescoped(seq: &LockInSequence, xi: f64, f: f64, a: f64) -> f64 {
        seq.segments()
            .iter()
            .map(|&(s, e, sign)| sign * (doppler_phase(e, a, xi, f) - doppler_phase(s, a, xi, f)))
            .sum()
    }

    #[test]
    fn modulation_matches_echo_timeline() {
        let tau = 1e-3;
        let s = seq(tau, 4);
        assert_eq!(modulation_value(0.5 * tau, &s), 1);
        assert_eq!(modulation_value(1.5 * tau, &s), -1);
        assert_eq!(modulation_value(3.5 * tau, &s), 1);
        assert_eq!(modulation_value(5.5 * tau, &s), -1);
        assert_eq!(modulation_value(7.5 * tau, &s), 1);
        assert_eq!(modulation_value(-1.0, &s), 0);
        assert_eq!(modulation_value(8.0 * tau * (1.0 + 1e-12), &s), 0);
        let odd = seq(tau, 3);
        assert_eq!(modulation_value(5.9 * tau, &odd), -1);
    }

    #[test]
    fn segments_cover_sequence() {
        for n in 1..8 {
            let s = seq(2e-4, n);
            let segs = s.segments();
            assert_eq!(segs.len(), n as usize + 1);
            assert_eq!(segs[0].0, 0.0);
            assert!((segs.last().unwrap().1 - s.duration()).abs() < 1e-18);
            for w in segs.windows(2) {
                assert_eq!(w[0].1, w[1].0);
                assert_eq!(w[0].2, -w[1].2);
            }
            for &(a, b, sign) in &segs {
                assert_eq!(modulation_value(0.5 * (a + b), &s) as f64, sign);
            }
        }
    }

    #[test]
    fn doppler_phase_examples() {
        for xi in [0.0, 0.4, 2.0, 5.0] {
            assert_eq!(doppler_phase(0.0, 0.774, xi, F_M), 0.0);
        }
        let v = doppler_phase(1.0 / (4.0 * F_M), 0.774, 0.0, F_M);
        assert!((v - 0.774).abs() < 1e-12);
        let v = doppler_phase(1.0 / (2.0 * F_M), 0.5, FRAC_PI_2, F_M);
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_period_accumulates_2na() {
        let s = seq(1.0 / (4.0 * F_M), 10);
        let xi = maximizing_xi(&s, F_M);
        let closed = lockin_phase_closed_form(&s, xi, F_M, 0.774);
        let numeric = lockin_phase_numeric(&s, xi, F_M, 0.774).unwrap();
        assert!((closed - 15.48).abs() < 1e-9, "closed {closed}");
        assert!((numeric - 15.48).abs() < 1e-9, "numeric {numeric}");
        assert!((telescoped(&s, xi, F_M, 0.774) - 15.48).abs() < 1e-9);
    }

    #[test]
    fn single_pulse_half_period_matches_oracle() {
        let s = seq(1.0 / (2.0 * F_M), 1);
        let closed = lockin_phase_closed_form(&s, 0.0, F_M, 0.774);
        let numeric = lockin_phase_numeric(&s, 0.0, F_M, 0.774).unwrap();
        assert!((closed - numeric).abs() < 1e-9);
    }

    #[test]
    fn zero_amplitude_gives_zero_phase() {
        let s = seq(3e-4, 7);
        assert_eq!(lockin_phase_closed_form(&s, 1.0, F_M, 0.0), 0.0);
        assert_eq!(lockin_phase_numeric(&s, 1.0, F_M, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_contrast(&s, F_M, 0.0), 1.0);
        assert_eq!(printed_contrast(&s, F_M, 0.0), 1.0);
    }

    #[test]
    fn closed_form_handles_pole_exactly() {
        // cos(2π f τ) = 0 at τ = (2k+1)/(4f)
        for k in 0..4 {
            for n in [1, 2, 5, 10, 17] {
                let s = seq((2 * k + 1) as f64 / (4.0 * F_M), n);
                for xi in [0.0, 1.0, 4.0] {
                    let closed = lockin_phase_closed_form(&s, xi, F_M, 1.3);
                    let direct = telescoped(&s, xi, F_M, 1.3);
                    assert!(closed.is_finite());
                    assert!(
                        (closed - direct).abs() < 1e-9,
                        "k={k} n={n}: {closed} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn phase_trace_is_running_integral() {
        let s = seq(2.1e-4, 6);
        let tr = phase_trace(&s, 0.7, F_M, 0.9, 16).unwrap();
        assert_eq!(tr.phase[0], 0.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!((tr.times.last().unwrap() - s.duration()).abs() < 1e-15);
        let numeric = lockin_phase_numeric(&s, 0.7, F_M, 0.9).unwrap();
        assert!((tr.final_phase() - numeric).abs() < 1e-10);
        // Trapezoid over the samples approximates each step of the running integral.
        for i in 1..tr.times.len() {
            let dt = tr.times[i] - tr.times[i - 1];
            let mid = 0.5 * (tr.times[i] + tr.times[i - 1]);
            let sign = modulation_value(mid, &s) as f64;
            let step = tr.phase[i] - tr.phase[i - 1];
            let approx = sign * doppler_detuning(mid, 0.9, 0.7, F_M) * dt;
            assert!((step - approx).abs() < 1e-3 * (1.0 + approx.abs()));
        }
    }

    #[test]
    fn xi_shift_by_pi_flips_phase() {
        let s = seq(1.0 / (4.0 * F_M), 10);
        for xi in [0.0, 0.3, 1.9, 4.4] {
            let a = lockin_phase_closed_form(&s, xi, F_M, 0.774);
            let b = lockin_phase_closed_form(&s, xi + PI, F_M, 0.774);
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn bessel_contrast_changes_sign() {
        let s = seq(1.0 / (4.0 * F_M), 10);
        // Φ = 20 A; the first zero of J₀ sits at Φ ≈ 2.4048.
        let a0 = 2.404_825_557_695_773 / 20.0;
        assert!(bessel_contrast(&s, F_M, a0).abs() < 1e-12);
        assert!(bessel_contrast(&s, F_M, 0.9 * a0) > 0.0);
        assert!(bessel_contrast(&s, F_M, 1.2 * a0) < 0.0);
        assert!(printed_contrast(&s, F_M, 1.2 * a0) > 0.0);
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(15.48) - (15.48 - 4.0 * PI)).abs() < 1e-12);
        assert!((wrap_phase(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_sequences_rejected() {
        assert!(LockInSequence::new(0.0, 3, XiMode::UniformRandom).is_err());
        assert!(LockInSequence::new(1e-3, 0, XiMode::UniformRandom).is_err());
        assert!(LockInSequence::new(1e-3, 1, XiMode::Fixed(f64::NAN)).is_err());
    }
}
