//! Adaptive Simpson quadrature with Richardson correction.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    // Rounding level of the whole integral. It does not shrink with the
    // interval, so noisy integrands stop refining instead of recursing forever.
    let magnitude = (b - a).abs()
        * (fa.abs() + fm.abs() + fb.abs() + f(0.5 * (a + m)).abs() + f(0.5 * (m + b)).abs())
        / 5.0;
    let floor = 16.0 * f64::EPSILON * magnitude;
    recurse(&f, a, b, fa, fm, fb, whole, tol, floor, MAX_DEPTH).ok_or(Error::Quadrature {
        start: a,
        end: b,
        tolerance: tol,
    })
}

/// [`adaptive_simpson`] on equal panels no wider than `max_panel`, sharing
/// `tol` between them. Oscillatory integrands need panels well under a
/// period, or the first five samples can alias to a constant.
pub fn panelled_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panel: f64,
) -> Result<f64> {
    let width = (b - a).abs();
    let panels = if max_panel > 0.0 && width > max_panel {
        (width / max_panel).ceil()
    } else {
        1.0
    };
    if panels > 1e7 {
        return Err(Error::invalid("max_panel", "too small for the interval"));
    }
    let count = panels as usize;
    let h = (b - a) / panels;
    (0..count).try_fold(0.0, |acc, i| {
        let lo = a + h * i as f64;
        let hi = if i + 1 == count {
            b
        } else {
            a + h * (i + 1) as f64
        };
        Ok(acc + adaptive_simpson(&f, lo, hi, tol / panels)?)
    })
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    floor: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= (15.0 * tol).max(floor) {
        return Some(left + right + delta / 15.0);
    }
    // Interval collapsed to adjacent floats: tolerance is out of reach.
    if depth == 0 || m <= a || m >= b {
        return None;
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, floor, depth - 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, floor, depth - 1)?;
    Some(l + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn integrates_polynomials_exactly() {
        let v = adaptive_simpson(|x| 3.0 * x * x + 2.0 * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
    }

    #[test]
    fn integrates_cosine_to_tolerance() {
        let v = adaptive_simpson(f64::cos, 0.0, 7.3, 1e-13).unwrap();
        assert!((v - 7.3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        assert_eq!(adaptive_simpson(f64::exp, 1.0, 1.0, 1e-9).unwrap(), 0.0);
        let v = adaptive_simpson(|x| x, 1.0, 0.0, 1e-12).unwrap();
        assert!((v + 0.5).abs() < 1e-14);
    }

    #[test]
    fn tolerance_below_rounding_still_converges() {
        let v = adaptive_simpson(|x| 2e4 * (6e3 * x).cos(), 0.0, 3e-3, 1e-20).unwrap();
        let exact = 2e4 / 6e3 * (18.0f64).sin();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn panels_defeat_aliasing() {
        // Five equally spaced samples over four periods all see cos = 1.
        let f = |x: f64| (4.0 * PI * x).cos();
        assert!((adaptive_simpson(f, 0.0, 2.0, 1e-12).unwrap() - 2.0).abs() < 1e-12);
        assert!(panelled_simpson(f, 0.0, 2.0, 1e-12, 0.25).unwrap().abs() < 1e-12);
    }

    #[test]
    fn step_converges_to_rounding_level() {
        let r = adaptive_simpson(|x| if x < 0.3 { 0.0 } else { 1.0 }, 0.0, 1.0, 0.0).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
    }

    #[test]
    fn divergent_integral_is_an_error() {
        let r = adaptive_simpson(|x| if x == 0.0 { 0.0 } else { 1.0 / x }, 0.0, 1.0, 1e-10);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
