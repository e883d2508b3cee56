//! Quadrature helpers shared across the crate: adaptive Simpson refinement
//! (real and complex valued) and fixed two-point Gauss panels.

#[cfg(test)]
use num_complex::Complex64;

/// One Simpson estimate on [a, b] given the three endpoint/midpoint values.
#[inline]
fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn asr(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        // Richardson extrapolation of the two half-interval estimates.
        return left + right + delta / 15.0;
    }
    asr(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + asr(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson rule on [a, b] with absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    asr(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Adaptive Simpson over [a, b] split at the interior points of `pts`.
///
/// Breakpoints outside (a, b) are ignored; `pts` must be sorted. The
/// tolerance is spent evenly across the resulting sub-intervals.
pub(crate) fn adaptive_simpson_split(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    pts: &[f64],
    tol: f64,
) -> f64 {
    let mut edges = vec![a];
    for &p in pts {
        if p > a && p < b {
            edges.push(p);
        }
    }
    edges.push(b);
    let per = tol / (edges.len() - 1) as f64;
    edges
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], per))
        .sum()
}

#[cfg(test)]
fn asr_c64(
    f: &dyn Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Complex64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let h6 = (m - a) / 6.0;
    let left = (fa + 4.0 * flm + fm) * h6;
    let right = (fm + 4.0 * frm + fb) * h6;
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    asr_c64(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + asr_c64(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Complex-valued adaptive Simpson rule on [a, b].
#[cfg(test)]
pub(crate) fn adaptive_simpson_c64(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    tol: f64,
) -> Complex64 {
    if a == b {
        return Complex64::new(0.0, 0.0);
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = (fa + 4.0 * fm + fb) * ((b - a) / 6.0);
    asr_c64(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Two-point Gauss-Legendre panel on [a, b]; exact through cubics.
#[inline]
pub(crate) fn gauss2(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    h * (f(c - h * X) + f(c + h * X))
}
