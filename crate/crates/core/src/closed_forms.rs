//! Closed forms for the radial probe wave and its superlevel-set measures.
//!
//! Everything in this crate is normalised against one explicit free wave,
//! the *probe*
//!
//! ```text
//!     u_lin(t, r) = (f(r - t) - f(r + t)) / r,     f(s) = max(1 - |s|, 0),
//! ```
//!
//! which solves the radial wave equation on R^3 with initial data
//! `(0, 2/r on 0 < r <= 1)`. Its time antiderivative
//!
//! ```text
//!     v_lin(t, r) = (phi(r - t) + phi(r + t)) / r,     phi' = -f,
//! ```
//!
//! is the dual free wave used in all pairings; `d/dt v_lin = u_lin`.
//!
//! The probe takes values in [0, 2] for t > 0 and its spacetime
//! distribution function over the forward half-line,
//!
//! ```text
//!     m(lambda) = |{ (t, x) : t > 0, u_lin(t, |x|) > lambda }|,
//! ```
//!
//! has the closed form
//!
//! ```text
//!     m(lambda) = (4 pi / 3) (1 / (2 lambda^3) - 2 / (lambda + 2)^3)
//! ```
//!
//! on 0 < lambda < 2 and vanishes for lambda >= 2. The plateau
//! `{u_lin = 2}` has positive measure pi/24, so m jumps at lambda = 2.
//! [`m_slice`] gives the per-time-slice measures, [`m_closed`] the closed
//! form, and [`m_oracle`] an independent brute-force quadrature used to
//! certify both. The slice integrals split over the three time regimes
//! (t < 1/2, 1/2 < t < 1, t > 1) are exposed as [`m_int_region1`] ..
//! [`m_int_region3`] together with direct time quadratures of the slices.
//!
//! Piecewise boundaries: all formulas below evaluate the piece on the
//! *left* of a breakpoint (the probe is continuous for t > 0, so this is
//! a tie-break convention, not a value choice). At r = 0 the probe is
//! extended by its limit: 2 for 0 < t < 1 and 0 for t >= 1.

use num_traits::float::{Float, FloatConst};
use rayon::prelude::*;

use crate::{Error, Result};

/// Convert an `f64` constant into the working scalar type.
#[inline]
fn c<T: Float>(x: f64) -> T {
    T::from(x).expect("constant representable in scalar type")
}

/// Triangular bump `f(s) = max(1 - |s|, 0)`, the profile of the probe.
#[inline]
pub fn f_profile<T: Float>(s: T) -> T {
    (T::one() - s.abs()).max(T::zero())
}

/// Odd antiderivative profile with `phi'(s) = -f_profile(s)`:
/// `phi(s) = s (|s| - 2) / 2` for `|s| <= 1` and `-sign(s)/2` beyond.
#[inline]
pub fn phi_profile<T: Float>(s: T) -> T {
    let half = c::<T>(0.5);
    if s.abs() <= T::one() {
        s * (s.abs() - c(2.0)) * half
    } else {
        -s.signum() * half
    }
}

/// Probe wave `u_lin(t, r)`; odd in `t`, supported in `|r - |t|| < 1`.
///
/// # Arguments
/// * `t` - time, any sign
/// * `r` - radius, `r >= 0`
pub fn eval_u_lin<T: Float>(t: T, r: T) -> T {
    debug_assert!(r >= T::zero());
    if t < T::zero() {
        return -eval_u_lin(-t, r);
    }
    if t == T::zero() {
        return T::zero();
    }
    if r == T::zero() {
        // Limit r -> 0 of (f(r-t) - f(r+t))/r = -2 f'(t).
        return if t < T::one() { c(2.0) } else { T::zero() };
    }
    let two = c::<T>(2.0);
    let half = c::<T>(0.5);
    if t <= half {
        if r <= t {
            two
        } else if r <= T::one() - t {
            two * t / r
        } else if r <= T::one() + t {
            (T::one() - r + t) / r
        } else {
            T::zero()
        }
    } else if t <= T::one() {
        if r <= T::one() - t {
            two
        } else if r <= t {
            (T::one() + r - t) / r
        } else if r <= T::one() + t {
            (T::one() - r + t) / r
        } else {
            T::zero()
        }
    } else if r > t - T::one() && r <= t + T::one() {
        if r <= t {
            (T::one() + r - t) / r
        } else {
            (T::one() - r + t) / r
        }
    } else {
        T::zero()
    }
}

/// Dual free wave `v_lin(t, r)`; even in `t`, with `d/dt v_lin = u_lin`.
///
/// Outside the light cone shell it is `-1/r` (static tail of the dual
/// data), and `v_lin(t, 0) = -2 f_profile(t)`.
pub fn eval_v_lin<T: Float>(t: T, r: T) -> T {
    debug_assert!(r >= T::zero());
    if r == T::zero() {
        return -c::<T>(2.0) * f_profile(t);
    }
    (phi_profile(r - t) + phi_profile(r + t)) / r
}

/// Scaling of the probe family: amplitude `alpha`, data size `epsilon`,
/// centre `(t0, x0)`.
///
/// The scaled probe is `alpha * u_lin(sigma (t - t0), sigma |x - x0|)` with
/// `sigma = (alpha / epsilon)^2`, so its initial data at `t = t0` has
/// energy norm squared `16 pi epsilon^2` independently of `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScaleParams<T> {
    pub alpha: T,
    pub epsilon: T,
    pub t0: T,
    pub x0: [T; 3],
}

impl<T: Float> ScaleParams<T> {
    /// Build validated parameters; `alpha` and `epsilon` must be positive
    /// and finite.
    pub fn new(alpha: T, epsilon: T, t0: T, x0: [T; 3]) -> Result<Self> {
        let ok = alpha > T::zero()
            && epsilon > T::zero()
            && alpha.is_finite()
            && epsilon.is_finite()
            && t0.is_finite()
            && x0.iter().all(|x| x.is_finite());
        if !ok {
            return Err(Error::Config(
                "scale parameters need finite alpha > 0, epsilon > 0, finite centre".into(),
            ));
        }
        Ok(Self { alpha, epsilon, t0, x0 })
    }

    /// Concentration factor `sigma = (alpha / epsilon)^2`.
    #[inline]
    pub fn sigma(&self) -> T {
        let q = self.alpha / self.epsilon;
        q * q
    }

    /// Centre at the spacetime origin with the given amplitude and size.
    pub fn centered(alpha: T, epsilon: T) -> Result<Self> {
        Self::new(alpha, epsilon, T::zero(), [T::zero(); 3])
    }
}

/// Scaled probe in coordinates already relative to the centre:
/// `alpha * u_lin(sigma t, sigma r)`.
#[inline]
pub fn eval_u_lin_scaled<T: Float>(p: &ScaleParams<T>, t: T, r: T) -> T {
    let s = p.sigma();
    p.alpha * eval_u_lin(s * t, s * r)
}

/// Scaled probe at an absolute spacetime point `(t, x)`.
pub fn eval_u_lin_scaled_at<T: Float>(p: &ScaleParams<T>, t: T, x: [T; 3]) -> T {
    let dx = [x[0] - p.x0[0], x[1] - p.x0[1], x[2] - p.x0[2]];
    let r = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
    eval_u_lin_scaled(p, t - p.t0, r)
}

/// Scaled dual wave in centred coordinates:
/// `(epsilon^2 / alpha) * v_lin(sigma t, sigma r)`.
///
/// With this normalisation `d/dt` of the scaled dual equals the scaled
/// probe, and its data at `t = 0` has energy norm squared
/// `16 pi epsilon^6 / (3 alpha^4)`.
#[inline]
pub fn eval_v_lin_scaled<T: Float>(p: &ScaleParams<T>, t: T, r: T) -> T {
    let s = p.sigma();
    (p.epsilon * p.epsilon / p.alpha) * eval_v_lin(s * t, s * r)
}

/// Initial data of the probe at `t = 0`: `(0, 2/r)` on `0 < r <= 1`,
/// zero beyond.
///
/// # Panics
/// If `r <= 0`; the position slot is a genuine function value, the
/// velocity is only square integrable and has no trace at `r = 0`.
pub fn initial_data_u<T: Float>(r: T) -> (T, T) {
    assert!(r > T::zero(), "probe data is defined pointwise only for r > 0");
    if r <= T::one() {
        (T::zero(), c::<T>(2.0) / r)
    } else {
        (T::zero(), T::zero())
    }
}

/// Initial data of the dual wave at `t = 0`: `(r - 2, 0)` on `0 < r <= 1`
/// and `(-1/r, 0)` beyond.
pub fn initial_data_v<T: Float>(r: T) -> (T, T) {
    assert!(r > T::zero(), "dual data is defined pointwise only for r > 0");
    if r <= T::one() {
        (r - c(2.0), T::zero())
    } else {
        (-T::one() / r, T::zero())
    }
}

/// Energy norm squared of radial data sampled on the uniform grid
/// `r_j = j * dr`:
///
/// ```text
///     || (u0, u1) ||^2 = int (|d/dr u0|^2 + u1^2) 4 pi r^2 dr
/// ```
///
/// by trapezoid quadrature, with the gradient taken as centred differences
/// (one-sided at the ends). The `r = 0` node never contributes (weight
/// `r^2 = 0`), so velocity data behaving like `1/r` is integrable here but
/// converges only at first order; pick the grid accordingly.
pub fn energy_norm_sq<T: Float + FloatConst>(dr: T, u0: &[T], u1: &[T]) -> Result<T> {
    let n = u0.len();
    if n < 3 || u1.len() != n {
        return Err(Error::InvalidState(
            "energy quadrature needs matching sample vectors of length >= 3".into(),
        ));
    }
    if !(dr > T::zero()) || u0.iter().chain(u1.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidState(
            "energy quadrature needs dr > 0 and finite samples".into(),
        ));
    }
    let two = c::<T>(2.0);
    let grad = |j: usize| -> T {
        if j == 0 {
            (u0[1] - u0[0]) / dr
        } else if j == n - 1 {
            (u0[n - 1] - u0[n - 2]) / dr
        } else {
            (u0[j + 1] - u0[j - 1]) / (two * dr)
        }
    };
    let mut sum = T::zero();
    for j in 0..n {
        let r = T::from(j).unwrap() * dr;
        let g = grad(j);
        let val = (g * g + u1[j] * u1[j]) * r * r;
        let w = if j == 0 || j == n - 1 { c(0.5) } else { T::one() };
        sum = sum + w * val;
    }
    Ok(c::<T>(4.0) * T::PI() * sum * dr)
}

/// Measure of the slice superlevel set `{ x : u_lin(t, |x|) > lambda }`
/// at a fixed time `t > 0`.
pub fn m_slice<T: Float + FloatConst>(t: T, lambda: T) -> T {
    debug_assert!(t >= T::zero() && lambda > T::zero());
    if t == T::zero() {
        return T::zero();
    }
    let ball = c::<T>(4.0) / c::<T>(3.0) * T::PI();
    let one = T::one();
    let two = c::<T>(2.0);
    if lambda >= two {
        return T::zero();
    }
    let cube = |x: T| x * x * x;
    if t <= c(0.5) {
        // Levels below the value 2t/(1-t) at the outer edge of the flat
        // core are exceeded on a ball cut off by the trailing ramp.
        if lambda < two * t / (one - t) {
            ball * cube((one + t) / (one + lambda))
        } else {
            ball * cube(two * t / lambda)
        }
    } else if t <= one {
        if lambda < one / t {
            ball * cube((one + t) / (one + lambda))
        } else if lambda > one {
            ball * cube((one - t) / (lambda - one))
        } else {
            // Only reachable at t = 1, lambda = 1, where the slice is empty.
            T::zero()
        }
    } else if lambda < one / t {
        ball * (cube((t + one) / (lambda + one)) - cube((t - one) / (one - lambda)))
    } else {
        T::zero()
    }
}

/// Closed form of the forward-in-time spacetime superlevel measure
/// `m(lambda) = |{ t > 0, u_lin > lambda }|` for `lambda > 0`.
pub fn m_closed<T: Float + FloatConst>(lambda: T) -> T {
    debug_assert!(lambda > T::zero());
    let two = c::<T>(2.0);
    if lambda >= two {
        return T::zero();
    }
    let ball = c::<T>(4.0) / c::<T>(3.0) * T::PI();
    let cube = |x: T| x * x * x;
    ball * (c::<T>(0.5) / cube(lambda) - two / cube(lambda + two))
}

/// Closed form of `int_0^{1/2} m_slice(t, lambda) dt` for `lambda > 0`.
pub fn m_int_region1<T: Float + FloatConst>(lambda: T) -> T {
    debug_assert!(lambda > T::zero());
    let two = c::<T>(2.0);
    if lambda >= two {
        return T::zero();
    }
    let ball = c::<T>(4.0) / c::<T>(3.0) * T::PI();
    let cube = |x: T| x * x * x;
    ball * (c::<T>(81.0 / 64.0) / cube(lambda + T::one()) - two / cube(lambda + two))
}

/// Closed form of `int_{1/2}^{1} m_slice(t, lambda) dt` for `lambda > 0`.
pub fn m_int_region2<T: Float + FloatConst>(lambda: T) -> T {
    debug_assert!(lambda > T::zero());
    let one = T::one();
    let two = c::<T>(2.0);
    if lambda >= two {
        return T::zero();
    }
    let ball = c::<T>(4.0) / c::<T>(3.0) * T::PI();
    let cube = |x: T| x * x * x;
    if lambda <= one {
        ball * c::<T>(175.0 / 64.0) / cube(lambda + one)
    } else {
        ball * (c::<T>(0.5) / cube(lambda) - c::<T>(81.0 / 64.0) / cube(lambda + one))
    }
}

/// Closed form of `int_1^infty m_slice(t, lambda) dt`; vanishes for
/// `lambda >= 1` because slice values for t > 1 stay below `1/t`.
pub fn m_int_region3<T: Float + FloatConst>(lambda: T) -> T {
    debug_assert!(lambda > T::zero());
    let one = T::one();
    if lambda >= one {
        return T::zero();
    }
    let ball = c::<T>(4.0) / c::<T>(3.0) * T::PI();
    let cube = |x: T| x * x * x;
    ball * (c::<T>(0.5) / cube(lambda) - c::<T>(4.0) / cube(lambda + one))
}

/// Time regimes of the probe used by the regional slice integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRegion {
    /// 0 < t < 1/2
    Early,
    /// 1/2 < t < 1
    Middle,
    /// t > 1
    Late,
}

/// Direct adaptive time quadrature of `m_slice` over one time regime,
/// split at the interior branch point of the slice formula.
pub fn m_region_time_quad(region: TimeRegion, lambda: f64, tol: f64) -> f64 {
    assert!(lambda > 0.0 && tol > 0.0);
    if lambda >= 2.0 {
        return 0.0;
    }
    let f = |t: f64| m_slice(t, lambda);
    match region {
        TimeRegion::Early => {
            // Branch switch where lambda = 2t/(1-t).
            let ts = lambda / (2.0 + lambda);
            crate::quad::adaptive_simpson_split(f, 0.0, 0.5, &[ts], tol)
        }
        TimeRegion::Middle => {
            crate::quad::adaptive_simpson_split(f, 0.5, 1.0, &[1.0 / lambda], tol)
        }
        TimeRegion::Late => {
            if lambda >= 1.0 {
                0.0
            } else {
                crate::quad::adaptive_simpson(f, 1.0, 1.0 / lambda, tol)
            }
        }
    }
}

/// Resolution request for the brute-force superlevel quadrature.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MOracleSpec {
    /// Cell width in both t and r. The oracle also runs at `2h` to
    /// estimate its own error.
    pub h: f64,
    /// Relative accuracy the caller wants certified.
    pub rel_tol: f64,
}

impl Default for MOracleSpec {
    fn default() -> Self {
        // 1/1024 keeps the 32-level certification under a few seconds
        // while the two-resolution error estimate sits well below 1e-3.
        Self { h: 1.0 / 1024.0, rel_tol: 1e-3 }
    }
}

/// Outcome of [`m_oracle`]: the fine-grid value plus a two-resolution
/// error estimate. `resolved` records whether the requested tolerance was
/// actually certified; an unresolved result is data, not an error.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MOracleResult {
    pub value: f64,
    /// Same quadrature at twice the cell width.
    pub coarse_value: f64,
    /// `|value - coarse_value| / max(|value|, eps)`.
    pub rel_err_est: f64,
    pub resolved: bool,
}

fn superlevel_hist(lambdas: &[f64], h: f64) -> Vec<f64> {
    let t_max = 1.0 / lambdas.first().copied().unwrap_or(1.0) + 1.0;
    let n_t = (t_max / h).ceil() as usize;
    let nl = lambdas.len();
    // Fixed chunking keeps the reduction order independent of the worker
    // count, so outputs are reproducible byte for byte.
    let chunk = n_t.div_ceil(256).max(1);
    let partials: Vec<Vec<f64>> = (0..n_t.div_ceil(chunk))
        .into_par_iter()
        .map(|ci| {
            let mut hist = vec![0.0f64; nl + 1];
            let four_pi_3 = 4.0 * std::f64::consts::PI / 3.0;
            for k in (ci * chunk)..((ci + 1) * chunk).min(n_t) {
                let t = (k as f64 + 0.5) * h;
                let j_lo = (((t - 1.0) / h).floor() as isize - 1).max(0) as usize;
                let j_hi = (((t + 1.0) / h).ceil() as isize + 1).max(0) as usize;
                for j in j_lo..j_hi {
                    let r = (j as f64 + 0.5) * h;
                    let u = eval_u_lin(t, r);
                    if u > lambdas[0] {
                        let idx = lambdas.partition_point(|&l| l < u);
                        let r_in = j as f64 * h;
                        let r_out = r_in + h;
                        hist[idx] +=
                            four_pi_3 * (r_out * r_out * r_out - r_in * r_in * r_in);
                    }
                }
            }
            hist
        })
        .collect();
    let mut hist = vec![0.0f64; nl + 1];
    for p in &partials {
        for (a, b) in hist.iter_mut().zip(p) {
            *a += b;
        }
    }
    // Cells in hist[idx] exceed exactly the levels lambda_0 .. lambda_{idx-1}.
    let mut out = vec![0.0f64; nl];
    let mut acc = 0.0;
    for i in (0..nl).rev() {
        acc += hist[i + 1];
        out[i] = acc * h;
    }
    out
}

/// Brute-force midpoint quadrature of the spacetime superlevel measures
/// at several levels at once, sharing the probe evaluations.
///
/// `lambdas` must be strictly increasing and positive. Each result is the
/// fine-grid value together with the coarse-grid (cell width `2h`) value
/// and the induced error estimate.
pub fn m_oracle_batch(lambdas: &[f64], spec: &MOracleSpec) -> Result<Vec<MOracleResult>> {
    if lambdas.is_empty()
        || lambdas[0] <= 0.0
        || lambdas.iter().any(|l| !l.is_finite())
        || lambdas.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Config(
            "oracle levels must be strictly increasing and positive".into(),
        ));
    }
    if !(spec.h > 0.0 && spec.h < 0.5 && spec.rel_tol > 0.0) {
        return Err(Error::Config("oracle needs 0 < h < 1/2 and rel_tol > 0".into()));
    }
    let fine = superlevel_hist(lambdas, spec.h);
    let coarse = superlevel_hist(lambdas, 2.0 * spec.h);
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(&v, &cv)| {
            let rel = (v - cv).abs() / v.abs().max(f64::MIN_POSITIVE);
            MOracleResult {
                value: v,
                coarse_value: cv,
                rel_err_est: rel,
                resolved: rel <= spec.rel_tol,
            }
        })
        .collect())
}

/// Single-level wrapper around [`m_oracle_batch`].
pub fn m_oracle(lambda: f64, spec: &MOracleSpec) -> Result<MOracleResult> {
    Ok(m_oracle_batch(&[lambda], spec)?[0])
}

/// Brute-force measure of the plateau `{ (t, x) : t > 0, u_lin = 2 }`,
/// the size of the jump of `m` at `lambda = 2`. Exact value: pi/24.
pub fn plateau_measure_oracle(h: f64) -> f64 {
    assert!(h > 0.0 && h < 0.5);
    let n_t = (1.0 / h).ceil() as usize;
    let four_pi_3 = 4.0 * std::f64::consts::PI / 3.0;
    (0..n_t)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            let mut acc = 0.0;
            let j_hi = ((1.0 + t) / h).ceil() as usize + 1;
            for j in 0..j_hi {
                let r = (j as f64 + 0.5) * h;
                if (eval_u_lin(t, r) - 2.0).abs() < 1e-12 {
                    let r_in = j as f64 * h;
                    let r_out = r_in + h;
                    acc += four_pi_3 * (r_out * r_out * r_out - r_in * r_in * r_in);
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        * h
}
