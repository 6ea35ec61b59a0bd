//! Maximum-likelihood estimation: Ramsey fringes, synchronous phase maps,
//! asynchronous contrast curves, and the force sensitivity derived from them.
//!
//! Confidence intervals are 95 % profile-likelihood intervals: the set of
//! parameter values whose profile log-likelihood lies within
//! [`PROFILE_DELTA_LOGL`] of the maximum.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::{
    bessel_contrast, lockin_phase_amplitude, lockin_phase_closed_form, wrap_phase, LockInSequence,
    XiMode,
};
use crate::measure::{FringeRecord, NoiseModel, ScanKind, ScanResult, Truth};
use crate::optim::{bisect, golden_section, nelder_mead, NelderMeadOptions};
use crate::oscillator::{amplitude_from_phase, force_from_amplitude, TrapConfig};

/// Half the 95 % χ²₁ quantile.
pub const PROFILE_DELTA_LOGL: f64 = 1.920_729_410_347_062;

/// 97.5 % standard-normal quantile; converts CI half-widths to σ.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Coarse grid points per 2π of phase-like parameters.
pub const GRID_POINTS: usize = 64;

/// Upper bound used for contrast so that `p` stays strictly inside (0, 1).
const CONTRAST_CEILING: f64 = 1.0 - 1e-12;

/// A point estimate with its 95 % confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterEstimate {
    fn new(name: &str, value: f64, lower: f64, upper: f64) -> Self {
        ParameterEstimate {
            name: name.to_string(),
            value,
            lower: lower.min(value),
            upper: upper.max(value),
        }
    }

    /// Gaussian-equivalent standard error, CI half-width / 1.96.
    pub fn sigma(&self) -> f64 {
        0.5 * (self.upper - self.lower) / Z_95
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    fn scaled(&self, name: &str, factor: f64) -> Self {
        let (a, b) = (self.lower * factor, self.upper * factor);
        ParameterEstimate::new(name, self.value * factor, a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Central-difference gradient norm of the log-likelihood at the optimum.
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

/// Outcome of any of the likelihood fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<ParameterEstimate>,
    pub log_likelihood: f64,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.value)
    }
}

// ---------------------------------------------------------------------------
// Fringe fits

/// Binomial log-likelihood kernel for one record, with the trigonometric
/// tables precomputed.
struct FringeData {
    cos: Vec<f64>,
    sin: Vec<f64>,
    d: Vec<f64>,
    n_minus_d: Vec<f64>,
}

impl FringeData {
    fn new(record: &FringeRecord) -> Self {
        let n = record.shots_per_phase as f64;
        FringeData {
            cos: record.phases.iter().map(|p| p.cos()).collect(),
            sin: record.phases.iter().map(|p| p.sin()).collect(),
            d: record.d_counts.iter().map(|&d| d as f64).collect(),
            n_minus_d: record.d_counts.iter().map(|&d| n - d as f64).collect(),
        }
    }

    /// `cos(φ_i − phase)` for every phase point.
    fn projections(&self, phase: f64) -> Vec<f64> {
        let (s, c) = phase.sin_cos();
        self.cos
            .iter()
            .zip(&self.sin)
            .map(|(ci, si)| ci * c + si * s)
            .collect()
    }

    fn log_likelihood_proj(&self, contrast: f64, proj: &[f64]) -> f64 {
        let mut ll = 0.0;
        for ((x, d), m) in proj.iter().zip(&self.d).zip(&self.n_minus_d) {
            let p = 0.5 * (1.0 + contrast * x);
            let q = 0.5 * (1.0 - contrast * x);
            if *d > 0.0 {
                ll += d * p.ln();
            }
            if *m > 0.0 {
                ll += m * q.ln();
            }
        }
        ll
    }

    fn log_likelihood(&self, contrast: f64, phase: f64) -> f64 {
        self.log_likelihood_proj(contrast, &self.projections(phase))
    }

    /// Maximizes the (concave) log-likelihood in contrast over
    /// `[lo, hi]` for fixed projections.
    fn best_contrast(&self, proj: &[f64], lo: f64, hi: f64) -> f64 {
        let slope = |c: f64| -> f64 {
            proj.iter()
                .zip(&self.d)
                .zip(&self.n_minus_d)
                .map(|((x, d), m)| d * x / (1.0 + c * x) - m * x / (1.0 - c * x))
                .sum()
        };
        if slope(lo) <= 0.0 {
            return lo;
        }
        if slope(hi) >= 0.0 {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        let mut c = 0.5 * (a + b);
        for _ in 0..100 {
            let g = slope(c);
            if g == 0.0 || (b - a) < 1e-15 {
                break;
            }
            if g > 0.0 {
                a = c;
            } else {
                b = c;
            }
            // Newton step when it stays inside the bracket.
            let h: f64 = -proj
                .iter()
                .zip(&self.d)
                .zip(&self.n_minus_d)
                .map(|((x, d), m)| {
                    d * x * x / (1.0 + c * x).powi(2) + m * x * x / (1.0 - c * x).powi(2)
                })
                .sum::<f64>();
            let newton = c - g / h;
            if h < 0.0 && newton >= a && newton <= b {
                if (newton - c).abs() < 1e-15 {
                    return newton;
                }
                c = newton;
            } else {
                c = 0.5 * (a + b);
            }
        }
        c
    }

    /// Profile log-likelihood of the phase, maximized over `C ∈ [0, 1)`.
    fn profile_phase(&self, phase: f64) -> (f64, f64) {
        let proj = self.projections(phase);
        let c = self.best_contrast(&proj, 0.0, CONTRAST_CEILING);
        (self.log_likelihood_proj(c, &proj), c)
    }

    /// Profile log-likelihood of the contrast, maximized over phase near
    /// `around`.
    fn profile_contrast(&self, contrast: f64, around: f64) -> f64 {
        let (_, neg) = golden_section(
            |ph| -self.log_likelihood(contrast, ph),
            around - 1.0,
            around + 1.0,
            1e-9,
        );
        -neg
    }
}

/// Binomial log-likelihood of a fringe under `p = ½ + (C/2) cos(φ − phase)`.
pub fn fringe_log_likelihood(record: &FringeRecord, contrast: f64, phase: f64) -> f64 {
    FringeData::new(record).log_likelihood(contrast, phase)
}

fn check_not_degenerate(record: &FringeRecord) -> Result<()> {
    record.validate()?;
    let first = record.d_counts[0];
    if record.d_counts.iter().all(|&d| d == first) {
        return Err(Error::DegenerateFringe {
            fraction: first as f64 / record.shots_per_phase as f64,
        });
    }
    Ok(())
}

/// Walks away from `start` in direction `dir` until `f` drops below
/// `threshold`, then bisects the crossing. `None` if `limit` is reached first.
fn profile_crossing<F: FnMut(f64) -> f64>(
    mut f: F,
    start: f64,
    dir: f64,
    first_step: f64,
    limit: f64,
    threshold: f64,
) -> Option<f64> {
    let mut inner = start;
    let mut step = first_step;
    loop {
        let mut outer = inner + dir * step;
        let beyond = if dir > 0.0 {
            outer >= limit
        } else {
            outer <= limit
        };
        if beyond {
            outer = limit;
        }
        if f(outer) < threshold {
            return bisect(
                |x| f(x) - threshold,
                inner,
                outer,
                1e-10 * (1.0 + outer.abs()),
            );
        }
        if beyond {
            return None;
        }
        inner = outer;
        step *= 2.0;
    }
}

/// Fits `p = ½ + (C/2) cos(φ − φ_clk)` with `C ∈ [0, 1]` to one fringe.
///
/// Returns parameters `contrast` and `phase` (wrapped to `(−π, π]`, its
/// interval expressed around the wrapped value). If the phase profile never
/// drops by [`PROFILE_DELTA_LOGL`] the interval spans the full circle and a
/// warning is attached.
pub fn fit_fringe(record: &FringeRecord) -> Result<FitResult> {
    check_not_degenerate(record)?;
    let data = FringeData::new(record);

    let step = 2.0 * PI / GRID_POINTS as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..GRID_POINTS {
        let ph = k as f64 * step;
        let (ll, _) = data.profile_phase(ph);
        if ll > best.0 {
            best = (ll, ph);
        }
    }
    let (phase, neg_ll) = golden_section(
        |ph| -data.profile_phase(ph).0,
        best.1 - step,
        best.1 + step,
        1e-12,
    );
    let (max_ll, contrast) = data.profile_phase(phase);
    let max_ll = max_ll.max(-neg_ll);
    let threshold = max_ll - PROFILE_DELTA_LOGL;
    let mut warnings = Vec::new();

    let ph_lo = profile_crossing(
        |p| data.profile_phase(p).0,
        phase,
        -1.0,
        0.01,
        phase - PI,
        threshold,
    );
    let ph_hi = profile_crossing(
        |p| data.profile_phase(p).0,
        phase,
        1.0,
        0.01,
        phase + PI,
        threshold,
    );
    let (ph_lo, ph_hi) = match (ph_lo, ph_hi) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            warnings.push("phase unconstrained at 95% level".to_string());
            (phase - PI, phase + PI)
        }
    };

    let c_lo = if data.profile_contrast(0.0, phase) >= threshold {
        0.0
    } else {
        bisect(
            |c| data.profile_contrast(c, phase) - threshold,
            0.0,
            contrast,
            1e-10,
        )
        .unwrap_or(0.0)
    };
    let c_hi = if data.profile_contrast(1.0, phase) >= threshold {
        1.0
    } else {
        bisect(
            |c| data.profile_contrast(c, phase) - threshold,
            contrast,
            1.0,
            1e-10,
        )
        .unwrap_or(1.0)
    };
    if contrast < 1e-9 {
        warnings.push("contrast consistent with zero; phase poorly identified".to_string());
    }

    let wrapped = wrap_phase(phase);
    let shift = wrapped - phase;
    let h = 1e-6;
    let grad_c = if contrast > h && contrast < 1.0 - h {
        (data.log_likelihood(contrast + h, phase) - data.log_likelihood(contrast - h, phase))
            / (2.0 * h)
    } else {
        0.0
    };
    let grad_p = (data.log_likelihood(contrast, phase + h)
        - data.log_likelihood(contrast, phase - h))
        / (2.0 * h);

    Ok(FitResult {
        parameters: vec![
            ParameterEstimate::new("contrast", contrast, c_lo, c_hi),
            ParameterEstimate::new("phase", wrapped, ph_lo + shift, ph_hi + shift),
        ],
        log_likelihood: max_ll,
        diagnostics: Diagnostics {
            iterations: GRID_POINTS,
            converged: true,
            gradient_norm: grad_c.hypot(grad_p),
            warnings,
        },
    })
}

/// Fits a signed contrast `C ∈ [−1, 1]` with the fringe phase held at
/// `phase`. Used where the phase is known up to a sign flip of the contrast,
/// as for ξ-averaged fringes referenced to a force-free twin.
pub fn fit_fringe_fixed_phase(record: &FringeRecord, phase: f64) -> Result<FitResult> {
    check_not_degenerate(record)?;
    let data = FringeData::new(record);
    let proj = data.projections(phase);
    let lo = -CONTRAST_CEILING;
    let hi = CONTRAST_CEILING;
    let c = data.best_contrast(&proj, lo, hi);
    let max_ll = data.log_likelihood_proj(c, &proj);
    let threshold = max_ll - PROFILE_DELTA_LOGL;
    let ll = |x: f64| data.log_likelihood_proj(x, &proj);
    let lower = if ll(lo) >= threshold {
        -1.0
    } else {
        bisect(|x| ll(x) - threshold, lo, c, 1e-12).unwrap_or(-1.0)
    };
    let upper = if ll(hi) >= threshold {
        1.0
    } else {
        bisect(|x| ll(x) - threshold, c, hi, 1e-12).unwrap_or(1.0)
    };
    Ok(FitResult {
        parameters: vec![ParameterEstimate::new("contrast", c, lower, upper)],
        log_likelihood: max_ll,
        diagnostics: Diagnostics {
            iterations: 1,
            converged: true,
            gradient_norm: 0.0,
            warnings: Vec::new(),
        },
    })
}

// ---------------------------------------------------------------------------
// Synchronous phase map

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapOptions {
    /// Upper end of the coarse amplitude grid, rad.
    pub amplitude_max: f64,
    /// Fit all fringes jointly with one binomial likelihood instead of the
    /// two-stage (fringe fit, then map fit) procedure.
    pub joint: bool,
}

impl Default for PhaseMapOptions {
    fn default() -> Self {
        PhaseMapOptions {
            amplitude_max: 3.0,
            joint: false,
        }
    }
}

/// Per-cell stage-one result of a synchronous scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPhase {
    pub tau: f64,
    pub xi: f64,
    pub contrast: f64,
    /// Fitted fringe phase, wrapped.
    pub phase: f64,
    /// Gaussian-equivalent phase uncertainty; infinite when unconstrained.
    pub sigma: f64,
}

/// Fits every fringe of a synchronous scan.
pub fn fit_cells(scan: &ScanResult) -> Result<Vec<CellPhase>> {
    scan.cells
        .par_iter()
        .map(|cell| {
            let xi = cell
                .xi
                .ok_or_else(|| Error::invalid("scan", "cell without ξ"))?;
            match fit_fringe(&cell.record) {
                Ok(fit) => {
                    let ph = fit.get("phase").expect("phase parameter");
                    let constrained = fit
                        .diagnostics
                        .warnings
                        .iter()
                        .all(|w| !w.starts_with("phase"));
                    Ok(CellPhase {
                        tau: cell.tau,
                        xi,
                        contrast: fit.value("contrast").unwrap_or(0.0),
                        phase: ph.value,
                        sigma: if constrained {
                            ph.sigma().max(1e-6)
                        } else {
                            f64::INFINITY
                        },
                    })
                }
                Err(Error::DegenerateFringe { .. }) => Ok(CellPhase {
                    tau: cell.tau,
                    xi,
                    contrast: 0.0,
                    phase: 0.0,
                    sigma: f64::INFINITY,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

struct MapCell {
    seq: LockInSequence,
    xi: f64,
    phase: f64,
    weight: f64,
}

fn map_chi2(cells: &[MapCell], frequency: f64, amplitude: f64, xi_offset: f64) -> f64 {
    cells
        .iter()
        .map(|c| {
            let model = lockin_phase_closed_form(&c.seq, c.xi + xi_offset, frequency, amplitude);
            let r = wrap_phase(c.phase - model);
            c.weight * r * r
        })
        .sum()
}

/// Coarse (A, ξ-offset) grid followed by Nelder–Mead from the best grid
/// points. Minimizes `objective`.
fn grid_then_simplex<F: Fn(f64, f64) -> f64 + Sync>(
    objective: F,
    amplitude_max: f64,
) -> (f64, f64, f64, usize, bool) {
    let na = GRID_POINTS;
    let nx = GRID_POINTS;
    let mut grid: Vec<(f64, f64, f64)> = (0..na)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = amplitude_max * i as f64 / (na - 1) as f64;
            let obj = &objective;
            (0..nx).map(move |j| {
                let x = 2.0 * PI * j as f64 / nx as f64;
                (obj(a, x), a, x)
            })
        })
        .collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let step = [amplitude_max / (na - 1) as f64, 2.0 * PI / nx as f64];
    let mut best = (f64::INFINITY, 0.0, 0.0, 0, false);
    for &(_, a, x) in grid.iter().take(4) {
        let m = nelder_mead(
            |v| {
                if v[0] < 0.0 {
                    f64::INFINITY
                } else {
                    objective(v[0], v[1])
                }
            },
            &[a, x],
            &step,
            NelderMeadOptions::default(),
        );
        if m.value < best.0 {
            best = (m.value, m.x[0], m.x[1], m.iterations, m.converged);
        }
    }
    (best.0, best.1, best.2.rem_euclid(2.0 * PI), best.3, best.4)
}

/// Joint binomial log-likelihood of a synchronous scan for common
/// `(A, ξ-offset, C)`.
fn joint_log_likelihood(
    data: &[(LockInSequence, f64, FringeData)],
    frequency: f64,
    amplitude: f64,
    xi_offset: f64,
    contrast: f64,
) -> f64 {
    data.iter()
        .map(|(seq, xi, fd)| {
            let phi = lockin_phase_closed_form(seq, xi + xi_offset, frequency, amplitude);
            fd.log_likelihood(contrast, phi)
        })
        .sum()
}

/// Fits the lock-in phase model to a synchronous τ × ξ scan with free
/// amplitude `A` and trigger offset, at known drive frequency.
///
/// Reports `amplitude` (rad), `xi_offset` (rad), `motion_amplitude` (m) and
/// `force` (N).
pub fn fit_phase_map(
    scan: &ScanResult,
    frequency: f64,
    trap: &TrapConfig,
    opts: &PhaseMapOptions,
) -> Result<FitResult> {
    scan.validate()?;
    if scan.kind != ScanKind::Synchronous {
        return Err(Error::invalid(
            "scan",
            "phase-map fit needs a synchronous scan",
        ));
    }
    let xi_grid = scan.xi_grid.as_ref().expect("validated");
    if scan.tau_grid.len() < 2 || xi_grid.len() < 2 {
        return Err(Error::NotIdentifiable(
            "phase map needs at least 2 τ values and 2 ξ values".to_string(),
        ));
    }
    let max_gain = scan
        .tau_grid
        .iter()
        .map(|&tau| {
            let seq = LockInSequence::new(tau, scan.pulse_count, XiMode::UniformRandom)?;
            Ok(lockin_phase_amplitude(&seq, frequency, 1.0))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if max_gain < 1e-9 {
        return Err(Error::NotIdentifiable(
            "every τ sits on a zero of the lock-in response".to_string(),
        ));
    }

    if opts.joint {
        return fit_phase_map_joint(scan, frequency, trap, opts);
    }

    let cells_fit = fit_cells(scan)?;
    let cells: Vec<MapCell> = cells_fit
        .iter()
        .filter(|c| c.sigma.is_finite())
        .map(|c| {
            Ok(MapCell {
                seq: LockInSequence::new(c.tau, scan.pulse_count, XiMode::Fixed(c.xi))?,
                xi: c.xi,
                phase: c.phase,
                weight: 1.0 / (c.sigma * c.sigma),
            })
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let dropped = cells_fit.len() - cells.len();
    if dropped > 0 {
        warnings.push(format!(
            "{dropped} cells without phase information were skipped"
        ));
    }
    if cells.len() < 2 {
        return Err(Error::NotIdentifiable(
            "fewer than 2 informative cells".to_string(),
        ));
    }

    let chi2 = |a: f64, x: f64| map_chi2(&cells, frequency, a, x);
    let (min_chi2, amp, xoff, iterations, converged) = grid_then_simplex(chi2, opts.amplitude_max);
    let xoff = wrap_offset(xoff);
    let loglik = |a: f64, x: f64| -0.5 * chi2(a, x);
    let max_ll = -0.5 * min_chi2;
    let threshold = max_ll - PROFILE_DELTA_LOGL;

    let profile_amp = |a: f64| -> f64 {
        let (_, neg) = golden_section(|x| -loglik(a, x), xoff - 0.5, xoff + 0.5, 1e-10);
        -neg
    };
    let first = (amp * 0.01).max(1e-4);
    let a_lo = if amp <= 0.0 || profile_amp(0.0) >= threshold {
        0.0
    } else {
        profile_crossing(profile_amp, amp, -1.0, first, 0.0, threshold).unwrap_or(0.0)
    };
    let a_hi = profile_crossing(
        profile_amp,
        amp,
        1.0,
        first,
        opts.amplitude_max * 4.0,
        threshold,
    )
    .unwrap_or_else(|| {
        warnings.push("amplitude upper bound not reached".to_string());
        opts.amplitude_max * 4.0
    });

    let profile_xi = |x: f64| -> f64 {
        let (_, neg) = golden_section(|a| -loglik(a, x), (amp - 0.5).max(0.0), amp + 0.5, 1e-10);
        -neg
    };
    let x_lo =
        profile_crossing(profile_xi, xoff, -1.0, 1e-3, xoff - PI, threshold).unwrap_or(xoff - PI);
    let x_hi =
        profile_crossing(profile_xi, xoff, 1.0, 1e-3, xoff + PI, threshold).unwrap_or(xoff + PI);

    let h = 1e-7;
    let grad_a =
        (loglik(amp + h, xoff) - loglik((amp - h).max(0.0), xoff)) / (amp + h - (amp - h).max(0.0));
    let grad_x = (loglik(amp, xoff + h) - loglik(amp, xoff - h)) / (2.0 * h);

    finish_amplitude_fit(
        ParameterEstimate::new("amplitude", amp, a_lo, a_hi),
        vec![ParameterEstimate::new("xi_offset", xoff, x_lo, x_hi)],
        frequency,
        trap,
        max_ll,
        Diagnostics {
            iterations,
            converged,
            gradient_norm: grad_a.hypot(grad_x),
            warnings,
        },
    )
}

/// Offset wrapped into `(-π, π]`.
fn wrap_offset(x: f64) -> f64 {
    let w = x.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn finish_amplitude_fit(
    amplitude: ParameterEstimate,
    mut others: Vec<ParameterEstimate>,
    frequency: f64,
    trap: &TrapConfig,
    log_likelihood: f64,
    diagnostics: Diagnostics,
) -> Result<FitResult> {
    let to_x = amplitude_from_phase(1.0, trap)?;
    let motion = amplitude.scaled("motion_amplitude", to_x);
    let to_f = force_from_amplitude(1.0, frequency, trap)?;
    let force = motion.scaled("force", to_f);
    let mut parameters = vec![amplitude];
    parameters.append(&mut others);
    parameters.push(motion);
    parameters.push(force);
    Ok(FitResult {
        parameters,
        log_likelihood,
        diagnostics,
    })
}

fn fit_phase_map_joint(
    scan: &ScanResult,
    frequency: f64,
    trap: &TrapConfig,
    opts: &PhaseMapOptions,
) -> Result<FitResult> {
    let data: Vec<(LockInSequence, f64, FringeData)> = scan
        .cells
        .iter()
        .map(|c| {
            let xi =
                c.xi.ok_or_else(|| Error::invalid("scan", "cell without ξ"))?;
            Ok((c.record.sequence, xi, FringeData::new(&c.record)))
        })
        .collect::<Result<_>>()?;

    // The coarse grid runs at the mean single-fringe contrast.
    let cells = fit_cells(scan)?;
    let pooled_contrast =
        (cells.iter().map(|c| c.contrast).sum::<f64>() / cells.len() as f64).clamp(0.05, 0.999);
    let (_, a0, x0, _, _) = grid_then_simplex(
        |a, x| -joint_log_likelihood(&data, frequency, a, x, pooled_contrast),
        opts.amplitude_max,
    );
    let objective = |v: &[f64]| {
        if v[0] < 0.0 || !(0.0..=CONTRAST_CEILING).contains(&v[2]) {
            f64::INFINITY
        } else {
            -joint_log_likelihood(&data, frequency, v[0], v[1], v[2])
        }
    };
    let m = nelder_mead(
        objective,
        &[a0, x0, pooled_contrast],
        &[0.01, 0.05, 0.02],
        NelderMeadOptions::default(),
    );
    let (amp, xoff, contrast) = (m.x[0], wrap_offset(m.x[1]), m.x[2]);
    let max_ll = -m.value;
    let threshold = max_ll - PROFILE_DELTA_LOGL;

    let profile_amp = |a: f64| -> f64 {
        let inner = nelder_mead(
            |v| {
                if !(0.0..=CONTRAST_CEILING).contains(&v[1]) {
                    f64::INFINITY
                } else {
                    -joint_log_likelihood(&data, frequency, a, v[0], v[1])
                }
            },
            &[xoff, contrast],
            &[0.01, 0.005],
            NelderMeadOptions {
                max_iterations: 400,
                f_tol: 1e-9,
                x_tol: 1e-8,
            },
        );
        -inner.value
    };
    let first = (amp * 0.005).max(1e-4);
    let a_lo = profile_crossing(profile_amp, amp, -1.0, first, 0.0, threshold).unwrap_or(0.0);
    let a_hi = profile_crossing(
        profile_amp,
        amp,
        1.0,
        first,
        opts.amplitude_max * 4.0,
        threshold,
    )
    .unwrap_or(opts.amplitude_max * 4.0);

    finish_amplitude_fit(
        ParameterEstimate::new("amplitude", amp, a_lo, a_hi),
        vec![
            ParameterEstimate::new("xi_offset", xoff, xoff, xoff),
            ParameterEstimate::new("contrast", contrast, contrast, contrast),
        ],
        frequency,
        trap,
        max_ll,
        Diagnostics {
            iterations: m.iterations,
            converged: m.converged,
            gradient_norm: 0.0,
            warnings: vec!["joint fit: intervals reported for amplitude only".to_string()],
        },
    )
}

// ---------------------------------------------------------------------------
// Asynchronous contrast curve

/// Contrast ratio extracted at one τ of an asynchronous scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastPoint {
    pub tau: f64,
    /// Signed force-arm contrast divided by the reference contrast.
    pub ratio: f64,
    pub sigma: f64,
    /// Unsigned force-arm contrast from the free-phase fit (diagnostic).
    pub unsigned_contrast: f64,
    pub reference_contrast: f64,
}

/// Signed contrast ratios of an asynchronous scan.
///
/// The force-arm fringe phase can only be 0 or π relative to the force-free
/// fringe, so its contrast is fitted with the phase held at the reference
/// phase and left free in sign. Unpaired scans reference phase 0 and
/// contrast 1.
pub fn contrast_ratios(scan: &ScanResult) -> Result<Vec<ContrastPoint>> {
    scan.validate()?;
    if scan.kind != ScanKind::Asynchronous {
        return Err(Error::invalid(
            "scan",
            "contrast curve needs an asynchronous scan",
        ));
    }
    scan.cells
        .par_iter()
        .map(|cell| {
            let (ref_phase, ref_c, ref_sigma) = match &cell.reference {
                Some(r) => {
                    let fit = fit_fringe(r)?;
                    let c = fit.get("contrast").expect("contrast");
                    (fit.value("phase").unwrap_or(0.0), c.value, c.sigma())
                }
                None => (0.0, 1.0, 0.0),
            };
            if ref_c <= 0.0 {
                return Err(Error::NotIdentifiable(format!(
                    "reference fringe at τ = {} has no contrast",
                    cell.tau
                )));
            }
            let signed = fit_fringe_fixed_phase(&cell.record, ref_phase)?;
            let c = signed.get("contrast").expect("contrast");
            let unsigned = match fit_fringe(&cell.record) {
                Ok(f) => f.value("contrast").unwrap_or(0.0),
                Err(Error::DegenerateFringe { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            let ratio = c.value / ref_c;
            let sigma = (c.sigma().powi(2) + (ratio * ref_sigma).powi(2)).sqrt() / ref_c;
            Ok(ContrastPoint {
                tau: cell.tau,
                ratio,
                sigma: sigma.max(1e-6),
                unsigned_contrast: unsigned,
                reference_contrast: ref_c,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastFitOptions {
    /// Drive-frequency search range, Hz. Defaults to the quarter-period
    /// frequencies `1/(4τ)` spanned by the scan, widened by 20 %.
    pub frequency_range: Option<(f64, f64)>,
    /// Coarse frequency grid points across the range.
    pub frequency_grid: usize,
    /// Upper end of the amplitude search, rad.
    pub amplitude_max: f64,
}

impl Default for ContrastFitOptions {
    fn default() -> Self {
        ContrastFitOptions {
            frequency_range: None,
            frequency_grid: 800,
            amplitude_max: 3.0,
        }
    }
}

fn contrast_chi2(points: &[(LockInSequence, f64, f64)], frequency: f64, amplitude: f64) -> f64 {
    points
        .iter()
        .map(|(seq, r, w)| {
            let d = r - bessel_contrast(seq, frequency, amplitude);
            w * d * d
        })
        .sum()
}

/// Fits `J₀(Φ(τ; A, f_m))` to the contrast ratios of an asynchronous scan.
///
/// Reports `amplitude`, `frequency`, `motion_amplitude` and `force`. The
/// likelihood is strongly multimodal in frequency; optima within
/// Δlogℒ < 2 of the best are listed in the warnings.
pub fn fit_contrast_curve(
    scan: &ScanResult,
    trap: &TrapConfig,
    opts: &ContrastFitOptions,
) -> Result<FitResult> {
    let ratios = contrast_ratios(scan)?;
    fit_contrast_points(&ratios, scan.pulse_count, trap, opts)
}

/// [`fit_contrast_curve`] on precomputed contrast ratios.
pub fn fit_contrast_points(
    ratios: &[ContrastPoint],
    pulse_count: u32,
    trap: &TrapConfig,
    opts: &ContrastFitOptions,
) -> Result<FitResult> {
    if ratios.len() < 3 {
        return Err(Error::NotIdentifiable(
            "need at least 3 τ points".to_string(),
        ));
    }
    let points: Vec<(LockInSequence, f64, f64)> = ratios
        .iter()
        .map(|p| {
            Ok((
                LockInSequence::new(p.tau, pulse_count, XiMode::UniformRandom)?,
                p.ratio,
                1.0 / (p.sigma * p.sigma),
            ))
        })
        .collect::<Result<_>>()?;
    let (f_min, f_max) = opts.frequency_range.unwrap_or_else(|| {
        let tmin = ratios.iter().map(|p| p.tau).fold(f64::INFINITY, f64::min);
        let tmax = ratios.iter().map(|p| p.tau).fold(0.0, f64::max);
        (0.8 / (4.0 * tmax), 1.2 / (4.0 * tmin))
    });
    if !(f_min > 0.0 && f_max > f_min) {
        return Err(Error::invalid(
            "frequency_range",
            "must satisfy 0 < min < max",
        ));
    }
    let nf = opts.frequency_grid.max(8);
    let na = GRID_POINTS;
    let amp_max = opts.amplitude_max;
    let chi2 = |f: f64, a: f64| contrast_chi2(&points, f, a);

    // Coarse grid; keep the best amplitude per frequency.
    let freq_profile: Vec<(f64, f64, f64)> = (0..nf)
        .into_par_iter()
        .map(|i| {
            let f = f_min + (f_max - f_min) * i as f64 / (nf - 1) as f64;
            (0..na)
                .map(|j| {
                    let a = amp_max * j as f64 / (na - 1) as f64;
                    (chi2(f, a), f, a)
                })
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .expect("non-empty grid")
        })
        .collect();

    // Local minima of the coarse frequency profile seed the refinement.
    let mut seeds: Vec<(f64, f64, f64)> = (0..nf)
        .filter(|&i| {
            let v = freq_profile[i].0;
            (i == 0 || v <= freq_profile[i - 1].0) && (i + 1 == nf || v <= freq_profile[i + 1].0)
        })
        .map(|i| freq_profile[i])
        .collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate(8);

    let df = (f_max - f_min) / (nf - 1) as f64;
    let da = amp_max / (na - 1) as f64;
    let objective = |v: &[f64]| {
        if v[1] < 0.0 || v[0] < f_min || v[0] > f_max {
            f64::INFINITY
        } else {
            chi2(v[0], v[1])
        }
    };
    let mut optima: Vec<(f64, f64, f64, usize, bool)> = seeds
        .par_iter()
        .map(|&(_, f, a)| {
            let m = nelder_mead(objective, &[f, a], &[df, da], NelderMeadOptions::default());
            (m.value, m.x[0], m.x[1], m.iterations, m.converged)
        })
        .collect();
    optima.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (min_chi2, freq, amp, iterations, converged) = optima[0];
    let max_ll = -0.5 * min_chi2;
    let threshold = max_ll - PROFILE_DELTA_LOGL;

    let mut warnings = Vec::new();
    for &(v, f, a, _, _) in optima.iter().skip(1) {
        let dll = 0.5 * (v - min_chi2);
        if dll < 2.0 && (f - freq).abs() > 2.0 * df {
            warnings.push(format!(
                "near-degenerate optimum: f_m = {f:.3} Hz, A = {a:.4} rad (ΔlogL = {dll:.2})"
            ));
        }
    }

    let loglik = |f: f64, a: f64| -0.5 * chi2(f, a);
    let profile_freq = |f: f64| -> f64 {
        let w = 0.3 * amp + 0.05;
        let (_, neg) = golden_section(|a| -loglik(f, a), (amp - w).max(0.0), amp + w, 1e-9);
        -neg
    };
    let f_lo = profile_crossing(profile_freq, freq, -1.0, 0.02, f_min, threshold);
    let f_hi = profile_crossing(profile_freq, freq, 1.0, 0.02, f_max, threshold);
    if f_lo.is_none() || f_hi.is_none() {
        warnings.push("drive frequency not identified within the search range".to_string());
    }
    let f_lo = f_lo.unwrap_or(f_min);
    let f_hi = f_hi.unwrap_or(f_max);

    let profile_amp = |a: f64| -> f64 {
        let w = 2.0 * df.max(0.5);
        let (_, neg) = golden_section(
            |f| -loglik(f, a),
            (freq - w).max(f_min),
            (freq + w).min(f_max),
            1e-9,
        );
        -neg
    };
    let first = (amp * 0.01).max(1e-4);
    let a_lo = if profile_amp(0.0) >= threshold {
        0.0
    } else {
        profile_crossing(profile_amp, amp, -1.0, first, 0.0, threshold).unwrap_or(0.0)
    };
    let a_hi = profile_crossing(profile_amp, amp, 1.0, first, amp_max * 2.0, threshold)
        .unwrap_or(amp_max * 2.0);
    if a_lo == 0.0 {
        warnings.push("amplitude consistent with zero: no force detected".to_string());
    }

    let h = 1e-6;
    let grad_f = (loglik(freq + h, amp) - loglik(freq - h, amp)) / (2.0 * h);
    let grad_a =
        (loglik(freq, amp + h) - loglik(freq, (amp - h).max(0.0))) / (amp + h - (amp - h).max(0.0));

    finish_amplitude_fit(
        ParameterEstimate::new("amplitude", amp, a_lo, a_hi),
        vec![ParameterEstimate::new("frequency", freq, f_lo, f_hi)],
        freq,
        trap,
        max_ll,
        Diagnostics {
            iterations,
            converged,
            gradient_norm: grad_f.hypot(grad_a),
            warnings,
        },
    )
}

// ---------------------------------------------------------------------------
// Sensitivity and Cramér–Rao bounds

/// Force uncertainty normalized to one second of measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// N
    pub force: f64,
    /// N
    pub force_sigma: f64,
    /// s
    pub total_time: f64,
    /// N/√Hz
    pub sensitivity: f64,
}

impl SensitivityReport {
    pub fn new(force: f64, force_sigma: f64, total_time: f64) -> Result<Self> {
        if !(force_sigma > 0.0 && force_sigma.is_finite()) {
            return Err(Error::MissingUncertainty("force"));
        }
        if !(total_time > 0.0) {
            return Err(Error::invalid("total_time", "must be positive"));
        }
        Ok(SensitivityReport {
            force,
            force_sigma,
            total_time,
            sensitivity: force_sigma * total_time.sqrt(),
        })
    }
}

/// Sensitivity `σ_F √T` from a fit carrying a `force`, `motion_amplitude` or
/// `amplitude` interval.
pub fn sensitivity_report(
    fit: &FitResult,
    trap: &TrapConfig,
    frequency: f64,
    total_time: f64,
) -> Result<SensitivityReport> {
    if let Some(f) = fit.get("force") {
        return SensitivityReport::new(f.value, f.sigma(), total_time);
    }
    let to_force = force_from_amplitude(1.0, frequency, trap)?;
    if let Some(x) = fit.get("motion_amplitude") {
        return SensitivityReport::new(x.value * to_force, x.sigma() * to_force, total_time);
    }
    if let Some(a) = fit.get("amplitude") {
        let k = amplitude_from_phase(1.0, trap)? * to_force;
        return SensitivityReport::new(a.value * k, a.sigma() * k, total_time);
    }
    Err(Error::MissingUncertainty("force"))
}

/// Per-shot Fisher information weight for a phase derivative:
/// `(∂p/∂φ_clk)² / (p(1−p))` with `p = ½ + (C/2)cos(φ − φ_clk)`.
fn phase_information(contrast: f64, delta: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    let num = contrast * contrast * s * s;
    let den = 1.0 - contrast * contrast * c * c;
    if den <= 1e-300 {
        if contrast >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        num / den
    }
}

/// Cramér–Rao bound on the fringe phase for `shots` per point at `phases`.
pub fn fringe_phase_crlb(contrast: f64, phase: f64, phases: &[f64], shots: u32) -> f64 {
    let info: f64 = phases
        .iter()
        .map(|p| shots as f64 * phase_information(contrast, p - phase))
        .sum();
    1.0 / info.sqrt()
}

/// Cramér–Rao bound on the amplitude `A` of a synchronous scan with the
/// trigger offset as a nuisance parameter and contrast known.
pub fn phase_map_crlb(
    tau_grid: &[f64],
    xi_grid: &[f64],
    pulse_count: u32,
    phases: &[f64],
    shots: u32,
    truth: &Truth,
    noise: &NoiseModel,
) -> Result<f64> {
    if truth.amplitude <= 0.0 {
        return Err(Error::invalid(
            "amplitude",
            "CRLB needs a non-zero amplitude",
        ));
    }
    let mut info = [[0.0; 2]; 2];
    for &tau in tau_grid {
        for &xi in xi_grid {
            let seq = LockInSequence::new(tau, pulse_count, XiMode::Fixed(xi))?;
            let x = xi + truth.xi_offset;
            let phi = lockin_phase_closed_form(&seq, x, truth.frequency, truth.amplitude);
            let d_amp = phi / truth.amplitude;
            let h = 1e-6;
            let d_xi = (lockin_phase_closed_form(&seq, x + h, truth.frequency, truth.amplitude)
                - lockin_phase_closed_form(&seq, x - h, truth.frequency, truth.amplitude))
                / (2.0 * h);
            let contrast = noise.effective_contrast(&seq);
            let w: f64 = phases
                .iter()
                .map(|p| shots as f64 * phase_information(contrast, p - phi))
                .sum();
            info[0][0] += w * d_amp * d_amp;
            info[0][1] += w * d_amp * d_xi;
            info[1][1] += w * d_xi * d_xi;
        }
    }
    let det = info[0][0] * info[1][1] - info[0][1] * info[0][1];
    if !(det > 0.0) {
        return Err(Error::NotIdentifiable(
            "singular Fisher information".to_string(),
        ));
    }
    Ok((info[1][1] / det).sqrt())
}
