//! The convolution kernel of the measurement map, its Fourier transform,
//! and the deconvolution step that recovers the source profile.
//!
//! Measurements indexed by a shift `tau0` are, after normalization, the
//! convolution of an explicit kernel `w` against the profile
//! `H(tau) = e^{-4 tau} F_u(e^tau) + e^{-5 tau} F(e^tau)`. Everything
//! here works on uniform grids in `tau`; [`deconvolve`] splits off a
//! linear baseline (which it inverts exactly through the kernel moments)
//! and divides the tapered remainder by the kernel spectrum, which is
//! bounded away from zero.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_traits::float::{Float, FloatConst};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::closed_forms;
use crate::wave_engine::NonlinearitySpec;
use crate::{Error, Result};

/// Kernel `w(tau) = (e^{-3 tau} - 4 e^{-6 tau} / (e^{-tau} + 1)^3)` for
/// `tau > 0`, zero otherwise. Jumps from 0 to 1/2 at `tau = 0`.
pub fn eval_w<T: Float>(tau: T) -> T {
    if tau <= T::zero() {
        return T::zero();
    }
    let e = (-tau).exp();
    let e3 = e * e * e;
    let e6 = e3 * e3;
    let four = T::from(4.0).unwrap();
    let d = e + T::one();
    e3 - four * e6 / (d * d * d)
}

/// The same kernel evaluated through the superlevel measure of the free
/// probe: `w(tau) = (12 / pi) e^{-6 tau} m(2 e^{-tau})`. Independent
/// arithmetic route used to cross-check [`eval_w`].
pub fn eval_w_via_measure<T: Float + FloatConst>(tau: T) -> T {
    let twelve = T::from(12.0).unwrap();
    let two = T::from(2.0).unwrap();
    let e = (-tau).exp();
    let e2 = e * e;
    twelve / T::PI() * (e2 * e2 * e2) * closed_forms::m_closed(two * e)
}

/// `int_0^infty w = 40 ln 2 - 55/2`.
pub fn kernel_mass() -> f64 {
    40.0 * std::f64::consts::LN_2 - 27.5
}

/// Fourier transform `w_hat(xi) = int_0^infty w(tau) e^{-i xi tau} dtau`
/// by composite Simpson on `[0, 14]` with the jump value at 0 replaced by
/// its right limit. The tail beyond 14 is below 1e-18.
pub fn w_hat(xi: f64) -> Complex64 {
    let tail = 14.0;
    // Resolve the oscillation: keep at least ~60 nodes per period.
    let n_half = ((tail / 5e-4).ceil() as usize).max(10 * (xi.abs().ceil() as usize + 1));
    let n = 2 * n_half;
    let h = tail / n as f64;
    let rot = Complex64::from_polar(1.0, -xi * h);
    let mut phase = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..=n {
        let t = j as f64 * h;
        let f = if j == 0 { 0.5 } else { eval_w(t) };
        let weight = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += weight * f * phase;
        phase *= rot;
    }
    acc * (h / 3.0)
}

/// Transform of the pure-exponential part `w0 = e^{-3 tau} / 2`:
/// `1 / (6 + 2 i xi)`.
pub fn w_hat_baseline(xi: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(6.0, 2.0 * xi)
}

/// Bound `|w_hat(xi) - w_hat_baseline(xi)| <= min(1/12, 1/(3 |xi|))` on
/// the non-exponential remainder.
pub fn w_remainder_bound(xi: f64) -> f64 {
    if xi == 0.0 {
        1.0 / 12.0
    } else {
        (1.0 / 12.0).min(1.0 / (3.0 * xi.abs()))
    }
}

/// Strictly positive lower bound for `|w_hat|`:
/// `1 / (2 sqrt(9 + xi^2)) - min(1/12, 1/(3 |xi|))`.
pub fn w_hat_lower_bound(xi: f64) -> f64 {
    0.5 / (9.0 + xi * xi).sqrt() - w_remainder_bound(xi)
}

// ---------------------------------------------------------------------------
// Uniform grids
// ---------------------------------------------------------------------------

/// Real samples on a uniform `tau` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub tau_min: f64,
    pub tau_step: f64,
    pub values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(tau_min: f64, tau_step: f64, values: Vec<f64>) -> Result<Self> {
        if !(tau_step > 0.0) || !tau_step.is_finite() || !tau_min.is_finite() {
            return Err(Error::Config(format!(
                "bad sample grid: tau_min = {tau_min}, tau_step = {tau_step}"
            )));
        }
        Ok(Self { tau_min, tau_step, values })
    }

    pub fn from_fn(tau_min: f64, tau_step: f64, len: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut s = Self::new(tau_min, tau_step, vec![0.0; len])?;
        for i in 0..len {
            s.values[i] = f(s.tau(i));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.tau_min + i as f64 * self.tau_step
    }

    pub fn tau_max(&self) -> f64 {
        self.tau(self.len().saturating_sub(1))
    }

    /// Linear interpolation, clamped to the end values.
    pub fn eval(&self, tau: f64) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let x = (tau - self.tau_min) / self.tau_step;
        if x <= 0.0 {
            return self.values[0];
        }
        if x >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = x.floor() as usize;
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn same_grid_step(&self, other: &Self) -> Result<()> {
        if (self.tau_step - other.tau_step).abs() > 1e-12 * self.tau_step {
            return Err(Error::GridMismatch(format!(
                "tau steps differ: {} vs {}",
                self.tau_step, other.tau_step
            )));
        }
        Ok(())
    }
}

/// Kernel samples on `[0, 12]`; the node at the jump carries the half
/// value 1/4, which makes plain sums trapezoid-accurate.
pub fn kernel_samples(tau_step: f64) -> Result<SampledFunction> {
    if !(tau_step > 0.0) || tau_step > 1.0 {
        return Err(Error::Config(format!("kernel step {tau_step} out of range")));
    }
    let len = (12.0 / tau_step).ceil() as usize + 1;
    let mut w = SampledFunction::new(0.0, tau_step, vec![0.0; len])?;
    w.values[0] = 0.25;
    for k in 1..len {
        w.values[k] = eval_w(k as f64 * tau_step);
    }
    Ok(w)
}

/// Discrete moments `m0 = h sum w, m1 = h sum tau w` of sampled kernel.
fn kernel_moments(w: &SampledFunction) -> (f64, f64) {
    let h = w.tau_step;
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for (k, &v) in w.values.iter().enumerate() {
        m0 += v;
        m1 += k as f64 * h * v;
    }
    (h * m0, h * m1)
}

/// Discrete convolution `h * sum_k w[k] g[m - k]`, restricted to output
/// points where every read lands inside `g` (no implicit zero padding).
pub fn convolve(g: &SampledFunction, w: &SampledFunction) -> Result<SampledFunction> {
    g.same_grid_step(w)?;
    let n = g.len();
    let k = w.len();
    if n < k {
        return Err(Error::WindowTooSmall { len: n, required: k });
    }
    let h = g.tau_step;
    let mut out = SampledFunction::new(g.tau_min + (k - 1) as f64 * h, h, vec![0.0; n - k + 1])?;
    for m in 0..out.len() {
        let mut acc = 0.0;
        for (j, &wj) in w.values.iter().enumerate() {
            acc += wj * g.values[(k - 1) + m - j];
        }
        out.values[m] = h * acc;
    }
    Ok(out)
}

/// Controls for [`deconvolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvOptions {
    /// Tikhonov parameter, relative to the peak kernel power.
    pub mu: f64,
    /// FFT length as a multiple of the data-plus-kernel window.
    pub pad_factor: usize,
    /// Fraction of the window cosine-tapered at each end.
    pub taper_frac: f64,
    /// Number of samples averaged at each end for the baseline fit.
    pub edge_fit: usize,
    /// Gaussian spectral roll-off frequency (rad per tau unit). The
    /// kernel spectrum decays like `1/(2 xi)`, so windowing junk at high
    /// frequencies would otherwise be amplified by thousands.
    pub cutoff: f64,
}

impl Default for DeconvOptions {
    fn default() -> Self {
        Self { mu: 1e-8, pad_factor: 4, taper_frac: 0.15, edge_fit: 8, cutoff: 20.0 }
    }
}

/// Output of [`deconvolve`]: the recovered profile and the index range
/// whose values are unaffected by window edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deconvolved {
    pub h: SampledFunction,
    pub trusted_lo: usize,
    pub trusted_hi: usize,
}

impl Deconvolved {
    pub fn trusted_range(&self) -> std::ops::Range<usize> {
        self.trusted_lo..self.trusted_hi
    }
}

fn tukey_weight(i: usize, n: usize, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let ramp = |d: usize| -> f64 {
        if d >= l {
            1.0
        } else {
            0.5 * (1.0 - (PI * (l - d) as f64 / l as f64).cos())
        }
    };
    ramp(i).min(ramp(n - 1 - i))
}

/// Recover `H` from window samples of `G = w * H`.
///
/// The affine trend fitted to the window edges is inverted exactly with
/// the kernel moments; the remainder is tapered, zero padded, and divided
/// by the kernel spectrum with a small Tikhonov floor. Only the range
/// reported in the result is free of edge effects.
pub fn deconvolve(
    g: &SampledFunction,
    w: &SampledFunction,
    opts: &DeconvOptions,
) -> Result<Deconvolved> {
    g.same_grid_step(w)?;
    if opts.pad_factor < 2 {
        return Err(Error::Config(format!("pad_factor {} < 2", opts.pad_factor)));
    }
    if !(opts.mu >= 0.0) || !(opts.taper_frac >= 0.0 && opts.taper_frac < 0.5) || !(opts.cutoff > 0.0)
    {
        return Err(Error::Config(format!(
            "bad regularization: mu = {}, taper_frac = {}, cutoff = {}",
            opts.mu, opts.taper_frac, opts.cutoff
        )));
    }
    let n = g.len();
    let required = 4 * opts.edge_fit.max(4);
    if n < required {
        return Err(Error::WindowTooSmall { len: n, required });
    }
    let h = g.tau_step;

    // Affine baseline through the means of the two window edges.
    let e = opts.edge_fit.max(1).min(n / 4);
    let mean = |range: std::ops::Range<usize>| -> (f64, f64) {
        let len = range.len() as f64;
        let mut st = 0.0;
        let mut sv = 0.0;
        for i in range {
            st += g.tau(i);
            sv += g.values[i];
        }
        (st / len, sv / len)
    };
    let (t_lo, v_lo) = mean(0..e);
    let (t_hi, v_hi) = mean(n - e..n);
    let slope = (v_hi - v_lo) / (t_hi - t_lo);
    let level = v_lo - slope * t_lo;

    // A baseline `level + slope tau` in G is exactly the image of
    // `lin_a + lin_b tau` under the discrete convolution.
    let (m0, m1) = kernel_moments(w);
    let lin_b = slope / m0;
    let lin_a = (level + lin_b * m1) / m0;

    // Tapered remainder.
    let taper_len = (opts.taper_frac * n as f64).round() as usize;
    let mut residual = vec![0.0; n];
    for i in 0..n {
        let r = g.values[i] - (level + slope * g.tau(i));
        residual[i] = r * tukey_weight(i, n, taper_len);
    }

    // Spectral division on a zero-padded grid.
    let big_n = ((n + w.len()) * opts.pad_factor).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(big_n);
    let ifft = planner.plan_fft_inverse(big_n);

    let mut ker: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); big_n];
    for (k, &v) in w.values.iter().enumerate() {
        ker[k] = Complex64::new(h * v, 0.0);
    }
    fft.process(&mut ker);
    let xi_at = |i: usize| 2.0 * PI * i.min(big_n - i) as f64 / (big_n as f64 * h);
    let peak = ker.iter().map(|z| z.norm_sqr()).fold(0.0_f64, f64::max);
    // Only bins the roll-off lets through matter for stability.
    let floor = ker
        .iter()
        .enumerate()
        .filter(|(i, _)| xi_at(*i) <= 2.5 * opts.cutoff)
        .map(|(_, z)| z.norm())
        .fold(f64::INFINITY, f64::min);
    if !(floor > 1e-3) {
        return Err(Error::Domain(format!(
            "kernel spectrum dips to {floor:e} in the pass band; deconvolution would be unstable"
        )));
    }

    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); big_n];
    for i in 0..n {
        buf[i] = Complex64::new(residual[i], 0.0);
    }
    fft.process(&mut buf);
    let mu_eff = opts.mu * peak;
    for (i, (b, k)) in buf.iter_mut().zip(ker.iter()).enumerate() {
        let xi = xi_at(i);
        let roll = (-(xi / opts.cutoff) * (xi / opts.cutoff)).exp();
        *b = *b * roll * k.conj() / (k.norm_sqr() + mu_eff);
    }
    ifft.process(&mut buf);

    let mut out = SampledFunction::new(g.tau_min, h, vec![0.0; n])?;
    let scale = 1.0 / big_n as f64;
    for i in 0..n {
        out.values[i] = lin_a + lin_b * out.tau(i) + buf[i].re * scale;
    }
    let margin = taper_len.max(n / 5);
    if 2 * margin >= n {
        return Err(Error::WindowTooSmall { len: n, required: 2 * margin + 1 });
    }
    Ok(Deconvolved { h: out, trusted_lo: margin, trusted_hi: n - margin })
}

// ---------------------------------------------------------------------------
// Between the profile H and the nonlinearity F
// ---------------------------------------------------------------------------

/// Samples `H(tau) = e^{-4 tau} F_u(t, x, e^tau) + e^{-5 tau} F(t, x, e^tau)`
/// for a nonlinearity evaluated at a fixed spacetime point.
pub fn h_from_f(
    f: &NonlinearitySpec,
    t: f64,
    r: f64,
    tau_min: f64,
    tau_step: f64,
    len: usize,
) -> Result<SampledFunction> {
    SampledFunction::from_fn(tau_min, tau_step, len, |tau| {
        let u = tau.exp();
        (-4.0 * tau).exp() * f.eval_du(t, r, u) + (-5.0 * tau).exp() * f.eval(t, r, u)
    })
}

/// Pointwise recovery of `F` on `u = e^tau` nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveredNonlinearity {
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    /// Whether the constant-tail assumption below the window contributes
    /// less than 1e-3 of the value at this node.
    pub covered: Vec<bool>,
}

impl RecoveredNonlinearity {
    /// Interpolates `F(u)` for `u > 0`, odd elsewhere is up to the caller.
    /// Outside the node range the quintic ratio of the nearest edge is
    /// continued.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Domain(format!("recovered F is defined for u > 0, got {u}")));
        }
        let n = self.u.len();
        if n == 0 {
            return Err(Error::InvalidState("empty recovery".into()));
        }
        let ratio = |i: usize| self.f[i] / self.u[i].powi(5);
        let r = if u <= self.u[0] {
            ratio(0)
        } else if u >= self.u[n - 1] {
            ratio(n - 1)
        } else {
            let x = (u.ln() - self.u[0].ln()) / (self.u[1].ln() - self.u[0].ln());
            let i = (x.floor() as usize).min(n - 2);
            let frac = x - i as f64;
            ratio(i) * (1.0 - frac) + ratio(i + 1) * frac
        };
        Ok(r * u.powi(5))
    }

    pub fn is_covered(&self, u: f64) -> bool {
        self.u
            .iter()
            .zip(self.covered.iter())
            .filter(|(uu, _)| **uu <= u)
            .next_back()
            .map(|(_, c)| *c)
            .unwrap_or(false)
    }
}

/// Integrates the profile back to the nonlinearity:
/// `F(u) = u^{-1} int_{-infty}^{ln u} e^{6 s} H(s) ds`, with `H` frozen at
/// its leftmost sample below the window and integrated exactly on each
/// linear-interpolation interval.
pub fn f_from_h(h: &SampledFunction) -> Result<RecoveredNonlinearity> {
    let n = h.len();
    if n < 2 {
        return Err(Error::WindowTooSmall { len: n, required: 2 });
    }
    let step = h.tau_step;
    let e6h = (6.0 * step).exp();
    // int_0^step e^{6s} ds and int_0^step e^{6s} s/step ds, scaled so the
    // interval integral is e^{6 tau_k} (c0 * a + (c1 - c0) * b).
    let a = (e6h - 1.0) / 6.0;
    let b = (e6h * (6.0 * step - 1.0) + 1.0) / (36.0 * step);

    let mut u = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut covered = vec![false; n];
    let tail = (6.0 * h.tau_min).exp() * h.values[0] / 6.0;
    let mut s = tail;
    for k in 0..n {
        let tau = h.tau(k);
        u[k] = tau.exp();
        f[k] = s / u[k];
        covered[k] = tail.abs() <= 1e-3 * s.abs();
        if k + 1 < n {
            let c0 = h.values[k];
            let c1 = h.values[k + 1];
            s += (6.0 * tau).exp() * (c0 * a + (c1 - c0) * b);
        }
    }
    Ok(RecoveredNonlinearity { u, f, covered })
}
