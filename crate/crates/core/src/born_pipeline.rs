//! Measurement driver for the recovery pipeline.
//!
//! A probe `alpha * u_lin(sigma (t - t0), sigma |x - x0|)` with
//! `sigma = (alpha/epsilon)^2` is sent through the nonlinear flow and the
//! outgoing perturbation is paired against the dual probe. Normalized by
//! `32 pi epsilon^8 / (3 alpha^2)`, that measurement is a sample of
//! `(H * w)(log 2 alpha)`: sweeping `alpha` and deconvolving against the
//! kernel recovers the nonlinearity profile `H`, then `F` itself.
//!
//! Two measurement routes are implemented. The Born oracle evaluates the
//! leading-order pairing by direct spacetime quadrature of
//! `<F(u_probe), u_probe>` over the probe support (no PDE solve, exact in
//! the small-amplitude limit). The full-PDE route runs the radial solver
//! on the difference field between the nonlinear and free evolutions in
//! probe-rescaled coordinates and reads the pairing off at a late time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::closed_forms::{eval_u_lin, f_profile, m_closed, ScaleParams};
use crate::quad;
use crate::wave_engine::{Leapfrog, NonlinearitySpec, RadialGrid};
use crate::weight_deconv::{
    convolve, deconvolve, f_from_h, kernel_mass, kernel_samples, DeconvOptions,
    RecoveredNonlinearity, SampledFunction,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Born functional by characteristic-coordinate quadrature
// ---------------------------------------------------------------------------

/// Outgoing-coordinate cutoff for the interaction quadrature. The
/// integrand decays like `eta^{-4}`, so the truncated tail is below
/// `1e-6` relative for quintic-type nonlinearities.
const ETA_MAX: f64 = 200.0;

/// Rigorous bound on the quadrature tail beyond `eta = eta_cut`, in the
/// same units as the half-line interaction integral at amplitude alpha:
/// `|F(alpha u) u| <= C_F alpha^5 u^6` and `u^6 rho^2 <= 16 f(zeta)^6 /
/// (eta - 1)^4` give `C_F alpha^5 (64 pi / 21) (eta_cut - 1)^{-3}`.
fn interaction_tail_bound(c_f: f64, alpha: f64, eta_cut: f64) -> f64 {
    c_f * alpha.powi(5) * (64.0 * PI / 21.0) / (eta_cut - 1.0).powi(3)
}

/// Fraction of a sphere of radius `rho` centred at distance `d` from the
/// origin that lies inside the ball of radius `cap`. Exact for
/// indicators: the cut is a spherical cap, uniform in the cosine.
fn cap_fraction(d: f64, rho: f64, cap: f64) -> f64 {
    if d <= 1e-14 * (1.0 + cap) {
        return if rho <= cap { 1.0 } else { 0.0 };
    }
    let c = (cap * cap - d * d - rho * rho) / (2.0 * d * rho);
    0.5 * (c.clamp(-1.0, 1.0) + 1.0)
}

/// Which part of a masked nonlinearity the quadrature integrates.
#[derive(Clone, Copy, PartialEq)]
enum MaskPart {
    /// The nonlinearity as given (mask weight where masked).
    Whole,
    /// Only the contribution cut away by the mask: weight `1 - frac`.
    /// Valid for masked families; used to compute localization
    /// deviations without cancellation.
    Complement,
}

/// Pointwise value of `F(t, x-average, alpha u)` seen by the probe sphere
/// of rescaled radius `rho`.
struct ProbeIntegrand<'a> {
    f: &'a NonlinearitySpec,
    alpha: f64,
    sigma: f64,
    t0: f64,
    /// Physical distance of the probe centre from the origin.
    d: f64,
    part: MaskPart,
}

impl<'a> ProbeIntegrand<'a> {
    fn new(f: &'a NonlinearitySpec, p: &ScaleParams<f64>, part: MaskPart) -> Result<Self> {
        let d = (p.x0[0] * p.x0[0] + p.x0[1] * p.x0[1] + p.x0[2] * p.x0[2]).sqrt();
        let off_centre = d > 1e-14;
        match f {
            NonlinearitySpec::MaskedQuintic { .. } => {}
            _ if part == MaskPart::Complement => {
                return Err(Error::Unsupported(
                    "mask-complement quadrature needs a masked nonlinearity".into(),
                ));
            }
            _ if off_centre && !f.is_translation_invariant() => {
                return Err(Error::Unsupported(
                    "off-centre probes support only translation-invariant or masked F".into(),
                ));
            }
            _ => {}
        }
        Ok(Self { f, alpha: p.alpha, sigma: p.sigma(), t0: p.t0, d, part })
    }

    /// `F` averaged over the probe sphere, times `u`, times the area
    /// element `4 pi rho^2`, at characteristic coordinates
    /// `(zeta, eta) = (rho - s, rho + s)`.
    fn eval(&self, zeta: f64, eta: f64) -> f64 {
        let rho = 0.5 * (zeta + eta);
        let s = 0.5 * (eta - zeta);
        let u = (f_profile(zeta) - f_profile(eta)) / rho;
        let t = self.t0 + s / self.sigma;
        let r_phys = rho / self.sigma;
        let fv = match (self.f, self.part) {
            (&NonlinearitySpec::MaskedQuintic { sign, r_inner, r_outer }, part) => {
                let frac = cap_fraction(self.d, r_phys, r_outer)
                    - cap_fraction(self.d, r_phys, r_inner);
                let weight = match part {
                    MaskPart::Whole => frac,
                    MaskPart::Complement => 1.0 - frac,
                };
                let au = self.alpha * u;
                let au2 = au * au;
                sign * weight * au2 * au2 * au
            }
            (f, _) => f.eval(t, r_phys, self.alpha * u),
        };
        4.0 * PI * rho * rho * fv * u
    }

    /// Radii (rescaled) where the sphere average of the mask indicator
    /// loses smoothness; empty for unmasked families.
    fn mask_break_radii(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let NonlinearitySpec::MaskedQuintic { r_inner, r_outer, .. } = self.f {
            for &cap in &[*r_inner, *r_outer] {
                if cap > 0.0 || self.d > 0.0 {
                    out.push(self.sigma * (cap - self.d).abs());
                    out.push(self.sigma * (cap + self.d));
                }
            }
        }
        out.retain(|&r| r > 0.0);
        out
    }
}

/// Composite two-point Gauss integration of `g` over `[a, b]` with the
/// given interior breakpoints; panels grow geometrically (width
/// `max(1, x) / 32`) so the `eta^{-4}` tail costs O(log) panels.
fn integrate_panels(g: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.push(b);
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut total = 0.0;
    let mut x = a;
    for cut in cuts {
        while x < cut {
            let width = (x.max(1.0) / 32.0).min(cut - x);
            total += quad::gauss2(&g, x, x + width);
            x += width;
        }
        x = cut;
    }
    total
}

/// Half-line interaction integral of the rescaled probe,
/// `int_{s>0} <F(t, x, alpha u_lin(s, rho)), u_lin(s, rho)> ds` with the
/// `L^2_x` pairing written in characteristic coordinates. Returns the
/// value together with a rigorous truncation-tail bound.
fn interaction_integral(
    f: &NonlinearitySpec,
    p: &ScaleParams<f64>,
    part: MaskPart,
) -> Result<(f64, f64)> {
    let probe = ProbeIntegrand::new(f, p, part)?;
    let mask_radii = probe.mask_break_radii();
    // A mask radius rho* at fixed zeta is the line eta = 2 rho* - zeta;
    // the probe profile itself loses smoothness on the fixed line eta = 1.
    let inner = |zeta: f64| -> f64 {
        let lo = zeta.abs();
        let mut breaks = vec![1.0];
        breaks.extend(mask_radii.iter().map(|&r| 2.0 * r - zeta));
        0.5 * integrate_panels(|eta| probe.eval(zeta, eta), lo, ETA_MAX, &breaks)
    };
    let mut value = 0.0;
    let panels = 64;
    for seg in 0..2 * panels {
        let a = -1.0 + seg as f64 / panels as f64;
        value += quad::gauss2(&inner, a, a + 1.0 / panels as f64);
    }
    let tail = interaction_tail_bound(f.lipschitz_constant(), p.alpha, ETA_MAX);
    Ok((value, tail))
}

/// Spacetime pairing `int <F(t, x, u_probe), u_probe> dt` of the scaled
/// probe with its own nonlinear response, by direct quadrature over the
/// probe support. This is the leading term of the scattering
/// measurement; for translation-invariant `F` it equals
/// `(32 pi epsilon^8 / 3 alpha^2) (H * w)(log 2 alpha)`.
pub fn born_functional(f: &NonlinearitySpec, p: &ScaleParams<f64>) -> Result<f64> {
    let (half_line, _) = interaction_integral(f, p, MaskPart::Whole)?;
    // The integrand is even in t - t0: u_probe is odd and F odd in u.
    let sigma = p.sigma();
    Ok(2.0 * p.alpha / (sigma * sigma * sigma * sigma) * half_line)
}

/// `(H * w)(log 2 alpha)` through the layer-cake identity: the spacetime
/// quadrature collapses to `int (F(mu) + mu F'(mu)) m(mu / alpha) dmu`
/// against the closed-form superlevel measure. Translation-invariant
/// nonlinearities only; an independent route used to cross-check
/// [`born_functional`].
pub fn layer_cake_phi(f: &NonlinearitySpec, alpha: f64) -> Result<f64> {
    if !f.is_translation_invariant() {
        return Err(Error::Unsupported(
            "the layer-cake route needs translation-invariant F".into(),
        ));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("layer-cake alpha {alpha} must be positive")));
    }
    let integrand = |mu: f64| -> f64 {
        if mu <= 0.0 {
            return 0.0;
        }
        let g = f.eval(0.0, 0.0, mu) + mu * f.eval_du(0.0, 0.0, mu);
        if g == 0.0 {
            return 0.0;
        }
        g * m_closed(mu / alpha)
    };
    let tol = 1e-9 * alpha.powi(6) * (f.lipschitz_constant() + 1.0);
    let val = quad::adaptive_simpson_split(&integrand, 0.0, 2.0 * alpha, &[alpha], tol);
    Ok(3.0 / (16.0 * PI * alpha.powi(6)) * val)
}

// ---------------------------------------------------------------------------
// Full-PDE measurement
// ---------------------------------------------------------------------------

/// Discretization controls for the full-PDE measurement route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullPdeOpts {
    /// Radial step of the rescaled solve (the time step equals it).
    pub dr: f64,
    /// Rescaled time at which the scattering pairing is read off; the
    /// interaction tail beyond it is covered by the error bar.
    pub s_end: f64,
    /// Repeat at half resolution and include a Richardson difference in
    /// the error bar.
    pub error_estimate: bool,
    /// Rerun with the source frozen on the free probe and report the
    /// measured Born gap.
    pub born_gap: bool,
}

impl Default for FullPdeOpts {
    fn default() -> Self {
        Self { dr: 1.0 / 512.0, s_end: 16.0, error_estimate: true, born_gap: true }
    }
}

impl FullPdeOpts {
    fn validate(&self) -> Result<()> {
        if !(self.dr > 0.0 && self.dr <= 0.25) || !self.dr.is_finite() {
            return Err(Error::Config(format!("solver step {} out of range", self.dr)));
        }
        if !(self.s_end >= 2.0) || !self.s_end.is_finite() {
            return Err(Error::Config(format!(
                "pairing time {} too early for the dual band",
                self.s_end
            )));
        }
        Ok(())
    }
}

/// Scattering pairing of the difference field against the dual probe,
/// in probe-rescaled coordinates.
///
/// The difference `D = r (u_nonlinear - u_free)` starts from zero data
/// and is driven by `sigma^{-2} alpha^{-1} F(t, x, alpha (u_free + D/r))`
/// with the free probe evaluated in closed form; with `frozen` the
/// self-interaction feedback is dropped, which is the Born approximation
/// computed in the same discretization. At `s_end` the pairing
/// `4 pi int (D_r q' + D_t p) dr` against the explicitly propagated dual
/// is returned; it is time-independent once the source has decayed.
fn scattering_pairing(
    f: &NonlinearitySpec,
    p: &ScaleParams<f64>,
    dr_request: f64,
    s_end: f64,
    frozen: bool,
) -> Result<f64> {
    let off_centre = p.x0.iter().any(|&c| c.abs() > 1e-14);
    if off_centre && !f.is_translation_invariant() {
        return Err(Error::Unsupported(
            "full-PDE measurements need a centred probe unless F is translation-invariant".into(),
        ));
    }
    let steps = (s_end / dr_request).round().max(8.0) as usize;
    let dr = s_end / steps as f64;
    let n_cells = ((s_end + 2.0) / dr).round() as usize;
    let grid = RadialGrid::new(n_cells as f64 * dr, n_cells)?;
    let n = grid.n_nodes();

    let alpha = p.alpha;
    let sigma = p.sigma();
    let t0 = p.t0;
    let coupling = 1.0 / (sigma * sigma * alpha);
    let source = move |_k: usize, s: f64, rho: f64, u_d: f64| -> f64 {
        let u_free = eval_u_lin(s, rho);
        let u = if frozen { u_free } else { u_free + u_d };
        coupling * f.eval(t0 + s / sigma, rho / sigma, alpha * u)
    };

    // The probe vanishes at s = 0, so the level at dt is exactly zero too.
    let mut lf = Leapfrog::from_levels(grid, 0.0, vec![0.0; n], vec![0.0; n], &source);
    while lf.step < steps {
        lf.step_once()?;
    }
    let d_at: Vec<f64> = lf.v_cur.clone();
    let d_before: Vec<f64> = lf.v_prev.clone();
    lf.step_once()?;
    let d_after = &lf.v_cur;

    // Dual data at s_end in the reduced variable: the free flow with
    // profile phi has v' = -(f(r-s) + f(r+s)) and v_t = f(r-s) - f(r+s).
    let s = s_end;
    let dt = grid.dt();
    let j_lo = (((s - 1.0) / dr).floor() as usize).saturating_sub(2).max(1);
    let j_hi = (((s + 1.0) / dr).ceil() as usize + 2).min(n - 2);
    let mut pairing = 0.0;
    for j in j_lo..=j_hi {
        let r = grid.r(j);
        let qp = -(f_profile(r - s) + f_profile(r + s));
        let pp = f_profile(r - s) - f_profile(r + s);
        let d_r = (d_at[j + 1] - d_at[j - 1]) / (2.0 * dr);
        let d_t = (d_after[j] - d_before[j]) / (2.0 * dt);
        pairing += d_r * qp + d_t * pp;
    }
    Ok(4.0 * PI * dr * pairing)
}

// ---------------------------------------------------------------------------
// Normalized measurements
// ---------------------------------------------------------------------------

/// How a `(H * w)` sample is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMode {
    /// Leading-order pairing by quadrature; exact in the Born limit and
    /// independent of epsilon for translation-invariant F.
    BornOracle,
    /// Nonlinear solve of the difference field plus dual pairing.
    FullPde,
}

/// One normalized measurement `(H * w)(tau0)` with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwSample {
    pub tau0: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: MeasureMode,
    /// The sample value.
    pub phi: f64,
    /// Quadrature tail / discretization / Born-gap allowance, combined.
    pub error_bar: f64,
    /// Measured distance to the same-scheme Born run, when available.
    pub born_gap: Option<f64>,
    /// False when the measured Born gap says epsilon is too large for
    /// the linearized reading of this sample.
    pub born_regime_ok: bool,
}

/// Normalization `32 pi epsilon^8 / (3 alpha^2)` dividing the raw pairing.
fn pairing_normalization(p: &ScaleParams<f64>) -> f64 {
    32.0 * PI * p.epsilon.powi(8) / (3.0 * p.alpha * p.alpha)
}

/// Measure `(H * w)(log 2 alpha)` for the probe family `p`.
pub fn measure_hw_sample(
    f: &NonlinearitySpec,
    p: &ScaleParams<f64>,
    mode: MeasureMode,
    opts: &FullPdeOpts,
) -> Result<HwSample> {
    let tau0 = (2.0 * p.alpha).ln();
    match mode {
        MeasureMode::BornOracle => {
            let (half_line, tail) = interaction_integral(f, p, MaskPart::Whole)?;
            let norm = 16.0 * PI * p.alpha.powi(5) / 3.0;
            let phi = half_line / norm;
            let error_bar = tail / norm + 3e-6 * phi.abs() + 1e-12;
            Ok(HwSample {
                tau0,
                alpha: p.alpha,
                epsilon: p.epsilon,
                mode,
                phi,
                error_bar,
                born_gap: None,
                born_regime_ok: true,
            })
        }
        MeasureMode::FullPde => {
            opts.validate()?;
            // The rescaled pairing covers the forward half line; evenness
            // doubles it, and the probe scaling carries it to physical
            // units before the common normalization divides back out.
            let to_physical = 2.0 * p.epsilon.powi(4) / (p.alpha * p.alpha);
            let norm = pairing_normalization(p) / to_physical;
            let full = scattering_pairing(f, p, opts.dr, opts.s_end, false)?;
            let phi = full / norm;
            let mut error_bar =
                interaction_tail_bound(f.lipschitz_constant(), p.alpha, 2.0 * opts.s_end - 1.0)
                    / (16.0 * PI * p.alpha.powi(5) / 3.0);
            if opts.error_estimate {
                let coarse = scattering_pairing(f, p, 2.0 * opts.dr, opts.s_end, false)?;
                error_bar += (phi - coarse / norm).abs() / 3.0;
            }
            let mut born_gap = None;
            let mut born_regime_ok = true;
            if opts.born_gap {
                let frozen = scattering_pairing(f, p, opts.dr, opts.s_end, true)?;
                let gap = (phi - frozen / norm).abs();
                born_gap = Some(gap);
                born_regime_ok = gap <= 0.05 * (frozen / norm).abs().max(1e-12);
                error_bar += gap;
            } else {
                error_bar += 4.0 * f.lipschitz_constant() * p.epsilon.powi(4) * phi.abs();
            }
            Ok(HwSample {
                tau0,
                alpha: p.alpha,
                epsilon: p.epsilon,
                mode,
                phi,
                error_bar,
                born_gap,
                born_regime_ok,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Amplitude sweep and recovery
// ---------------------------------------------------------------------------

/// An amplitude sweep: measurements of `(H * w)` on a uniform `tau0`
/// grid with `alpha = e^{tau0} / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub tau0_min: f64,
    pub tau0_step: f64,
    pub n_tau0: usize,
    /// Probe size; see `epsilon_tracks_alpha` for the interpretation.
    pub epsilon: f64,
    /// With this set, each sample uses `epsilon * alpha(tau0)`, keeping
    /// the physical probe footprint `(epsilon/alpha)^2` constant across
    /// the sweep; otherwise `epsilon` is absolute.
    pub epsilon_tracks_alpha: bool,
    /// Probe centre.
    pub t0: f64,
    pub x0: [f64; 3],
    pub mode: MeasureMode,
    /// Hard cap on the number of PDE solves a full-PDE sweep may request.
    pub full_pde_budget: usize,
    pub solver: FullPdeOpts,
    pub deconv: DeconvOptions,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            tau0_min: -3.0,
            tau0_step: 0.05,
            n_tau0: 121,
            epsilon: 0.05,
            epsilon_tracks_alpha: false,
            t0: 0.0,
            x0: [0.0; 3],
            mode: MeasureMode::BornOracle,
            full_pde_budget: 64,
            solver: FullPdeOpts::default(),
            deconv: DeconvOptions::default(),
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0_step > 0.0) || !self.tau0_step.is_finite() || !self.tau0_min.is_finite() {
            return Err(Error::Config(format!(
                "bad tau0 grid: min = {}, step = {}",
                self.tau0_min, self.tau0_step
            )));
        }
        if self.n_tau0 < 2 {
            return Err(Error::Config(format!("tau0 grid needs >= 2 points, got {}", self.n_tau0)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.mode == MeasureMode::FullPde && self.n_tau0 > self.full_pde_budget {
            return Err(Error::Config(format!(
                "full-PDE sweep of {} points exceeds the budget of {} solves",
                self.n_tau0, self.full_pde_budget
            )));
        }
        Ok(())
    }

    pub fn tau0(&self, i: usize) -> f64 {
        self.tau0_min + i as f64 * self.tau0_step
    }

    /// Probe parameters for grid point `i`.
    pub fn params(&self, i: usize) -> Result<ScaleParams<f64>> {
        let alpha = 0.5 * self.tau0(i).exp();
        let epsilon = if self.epsilon_tracks_alpha { self.epsilon * alpha } else { self.epsilon };
        ScaleParams::new(alpha, epsilon, self.t0, self.x0)
    }
}

/// Quality figures attached to a recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Sup distance between the re-convolved profile estimate and the
    /// measured samples over the trusted window (edge values continued
    /// as constants outside the window).
    pub residual_sup: f64,
    /// Tau range of the deconvolution unaffected by window edges.
    pub trusted_lo: f64,
    pub trusted_hi: f64,
    pub tikhonov_mu: f64,
    pub spectral_cutoff: f64,
    /// Largest per-sample error bar that entered the deconvolution.
    pub max_error_bar: f64,
    /// All samples passed the Born-regime self-test.
    pub born_regime_ok: bool,
}

/// Everything a sweep produces: the samples, the deconvolved profile,
/// and the recovered nonlinearity tabulated on a uniform `u` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub plan: SweepPlan,
    pub samples: Vec<HwSample>,
    /// The `phi` column of `samples` as a grid function of `tau0`.
    pub hw_samples: SampledFunction,
    /// Deconvolved profile `H` restricted to the trusted window.
    pub h_estimate: SampledFunction,
    /// Recovered `F` on a uniform `u` grid spanning `e^{trusted range}`
    /// (the container's `tau` fields hold `u` here).
    pub f_estimate: SampledFunction,
    pub diagnostics: Diagnostics,
}

impl RecoveryReport {
    /// Interpolating view of the recovered nonlinearity.
    pub fn recovered(&self) -> Result<RecoveredNonlinearity> {
        f_from_h(&self.h_estimate)
    }
}

/// Run the amplitude sweep, deconvolve the kernel, and integrate the
/// profile back to the nonlinearity.
pub fn run_sweep(f: &NonlinearitySpec, plan: &SweepPlan) -> Result<RecoveryReport> {
    plan.validate()?;
    let samples = (0..plan.n_tau0)
        .into_par_iter()
        .map(|i| measure_hw_sample(f, &plan.params(i)?, plan.mode, &plan.solver))
        .collect::<Result<Vec<_>>>()?;
    let hw = SampledFunction::new(
        plan.tau0_min,
        plan.tau0_step,
        samples.iter().map(|s| s.phi).collect(),
    )?;
    let w = kernel_samples(plan.tau0_step)?;
    let dec = deconvolve(&hw, &w, &plan.deconv)?;

    // Integrating F from the trusted slice only: the frozen-tail error of
    // the profile integral then enters at the trusted edge, not at the
    // wiggly window edge.
    let h_estimate = SampledFunction::new(
        dec.h.tau(dec.trusted_lo),
        dec.h.tau_step,
        dec.h.values[dec.trusted_range()].to_vec(),
    )?;
    let recovered = f_from_h(&h_estimate)?;

    let k = w.len();
    let ext = SampledFunction::from_fn(
        hw.tau_min - (k - 1) as f64 * hw.tau_step,
        hw.tau_step,
        hw.len() + k - 1,
        |tau| dec.h.eval(tau),
    )?;
    let back = convolve(&ext, &w)?;
    let mut residual_sup = 0.0_f64;
    for i in dec.trusted_range() {
        residual_sup = residual_sup.max((back.values[i] - hw.values[i]).abs());
    }

    let u_lo = h_estimate.tau_min.exp();
    let u_hi = h_estimate.tau_max().exp();
    let n_u = 101;
    let du = (u_hi - u_lo) / (n_u - 1) as f64;
    let mut f_values = Vec::with_capacity(n_u);
    for i in 0..n_u {
        f_values.push(recovered.eval(u_lo + i as f64 * du)?);
    }
    let f_estimate = SampledFunction::new(u_lo, du, f_values)?;

    let diagnostics = Diagnostics {
        residual_sup,
        trusted_lo: h_estimate.tau_min,
        trusted_hi: h_estimate.tau_max(),
        tikhonov_mu: plan.deconv.mu,
        spectral_cutoff: plan.deconv.cutoff,
        max_error_bar: samples.iter().map(|s| s.error_bar).fold(0.0, f64::max),
        born_regime_ok: samples.iter().all(|s| s.born_regime_ok),
    };
    Ok(RecoveryReport {
        plan: plan.clone(),
        samples,
        hw_samples: hw,
        h_estimate,
        f_estimate,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Localization experiment
// ---------------------------------------------------------------------------

/// Convergence record of the normalized Born functional at one probe
/// centre as the probe shrinks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub t0: f64,
    pub x0: [f64; 3],
    /// Centre sits on the mask boundary (within tolerance): not a
    /// Lebesgue point of the indicator, excluded from pass/fail.
    pub boundary: bool,
    /// Whether the centre is inside the mask (meaningless when
    /// `boundary`).
    pub inside: bool,
    /// Limit `sign * 6 int w * 1_mask(x0)`; `None` for boundary centres.
    pub limit: Option<f64>,
    pub epsilons: Vec<f64>,
    pub phi: Vec<f64>,
    /// `|phi - limit|`, computed without cancellation from the masked-off
    /// part of the interaction; empty for boundary centres.
    pub deviation: Vec<f64>,
    /// Deviations decrease along the (decreasing) epsilon schedule.
    pub monotone: bool,
    /// Log-log slope of deviation against epsilon, when defined. The
    /// underlying limit theorem carries no rate; this is empirical.
    pub fitted_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTable {
    pub alpha: f64,
    pub rows: Vec<LocalizationRow>,
}

/// Least-squares slope of `ln y` against `ln x` over points with `y > 0`.
fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Shrink the probe at each centre and watch the normalized Born
/// functional converge to the local value of the masked nonlinearity:
/// `sign * 6 int w` strictly inside the mask, `0` strictly outside.
pub fn localization_experiment(
    f: &NonlinearitySpec,
    centers: &[(f64, [f64; 3])],
    eps_schedule: &[f64],
    alpha: f64,
) -> Result<LocalizationTable> {
    let &NonlinearitySpec::MaskedQuintic { sign, r_inner, r_outer } = f else {
        return Err(Error::Unsupported(
            "the localization experiment probes a masked quintic".into(),
        ));
    };
    if eps_schedule.is_empty()
        || eps_schedule.windows(2).any(|w| !(w[1] < w[0]))
        || eps_schedule.iter().any(|&e| !(e > 0.0) || !e.is_finite())
    {
        return Err(Error::Config(
            "the epsilon schedule must be positive and strictly decreasing".into(),
        ));
    }
    let oracle_norm = 16.0 * PI * alpha.powi(5) / 3.0;
    let rows = centers
        .par_iter()
        .map(|&(t0, x0)| {
            let d = (x0[0] * x0[0] + x0[1] * x0[1] + x0[2] * x0[2]).sqrt();
            let btol = 1e-9 * (1.0 + r_outer);
            let boundary =
                (r_inner > 0.0 && (d - r_inner).abs() <= btol) || (d - r_outer).abs() <= btol;
            let inside = d > r_inner - btol && d < r_outer;
            let mut phi = Vec::with_capacity(eps_schedule.len());
            let mut deviation = Vec::with_capacity(eps_schedule.len());
            let limit_val = if inside { sign * 6.0 * kernel_mass() } else { 0.0 };
            for &eps in eps_schedule {
                let p = ScaleParams::new(alpha, eps, t0, x0)?;
                if boundary || !inside {
                    let (hlp, _) = interaction_integral(f, &p, MaskPart::Whole)?;
                    let v = hlp / oracle_norm;
                    phi.push(v);
                    if !boundary {
                        deviation.push(v.abs());
                    }
                } else {
                    let (cut, _) = interaction_integral(f, &p, MaskPart::Complement)?;
                    let dev = cut / oracle_norm;
                    phi.push(limit_val - dev);
                    deviation.push(dev.abs());
                }
            }
            let monotone = deviation.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
            let fitted_rate = log_log_slope(eps_schedule, &deviation);
            Ok(LocalizationRow {
                t0,
                x0,
                boundary,
                inside,
                limit: if boundary { None } else { Some(limit_val) },
                epsilons: eps_schedule.to_vec(),
                phi,
                deviation,
                monotone,
                fitted_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalizationTable { alpha, rows })
}

// ---------------------------------------------------------------------------
// Born error scaling
// ---------------------------------------------------------------------------

/// One epsilon of the scaling study, in raw pairing units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub epsilon: f64,
    pub pairing_full: f64,
    pub pairing_born: f64,
    pub diff: f64,
    /// Richardson estimate of the discretization floor under `diff`.
    pub floor_estimate: f64,
    pub floor_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub alpha: f64,
    pub points: Vec<ScalingPoint>,
    /// Slopes between consecutive usable epsilon pairs.
    pub pair_slopes: Vec<Option<f64>>,
    /// Least-squares log-log slope over the non-floored points.
    pub fitted_slope: Option<f64>,
    /// Root-mean-square residual of that fit in log space.
    pub fit_residual: Option<f64>,
}

/// Measure `|pairing_full - pairing_born|` across a decreasing epsilon
/// list and fit the decay exponent. Both pairings run in the same
/// discretization, so the leading grid error cancels in the difference;
/// what remains is reported as the floor estimate.
pub fn born_scaling_study(
    f: &NonlinearitySpec,
    alpha: f64,
    eps_list: &[f64],
    opts: &FullPdeOpts,
) -> Result<ScalingReport> {
    if eps_list.len() < 3 {
        return Err(Error::Config(format!(
            "the scaling fit needs at least 3 epsilon points, got {}",
            eps_list.len()
        )));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Config("epsilon list must be positive and strictly decreasing".into()));
    }
    opts.validate()?;
    let points = eps_list
        .par_iter()
        .map(|&eps| {
            let p = ScaleParams::new(alpha, eps, 0.0, [0.0; 3])?;
            let to_pairing = 2.0 * eps.powi(4) / (alpha * alpha);
            let run = |dr: f64| -> Result<(f64, f64)> {
                let full = scattering_pairing(f, &p, dr, opts.s_end, false)?;
                let born = scattering_pairing(f, &p, dr, opts.s_end, true)?;
                Ok((to_pairing * full, to_pairing * born))
            };
            let (pairing_full, pairing_born) = run(opts.dr)?;
            let diff = (pairing_full - pairing_born).abs();
            let (cf, cb) = run(2.0 * opts.dr)?;
            let coarse_diff = (cf - cb).abs();
            let floor_estimate =
                (diff - coarse_diff).abs() / 3.0 + f64::EPSILON * pairing_born.abs();
            let floor_limited = diff <= 4.0 * floor_estimate;
            Ok(ScalingPoint {
                epsilon: eps,
                pairing_full,
                pairing_born,
                diff,
                floor_estimate,
                floor_limited,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pair_slopes = Vec::with_capacity(points.len() - 1);
    for w in points.windows(2) {
        let usable =
            !w[0].floor_limited && !w[1].floor_limited && w[0].diff > 0.0 && w[1].diff > 0.0;
        pair_slopes.push(if usable {
            Some((w[0].diff / w[1].diff).ln() / (w[0].epsilon / w[1].epsilon).ln())
        } else {
            None
        });
    }
    let good: Vec<&ScalingPoint> =
        points.iter().filter(|pt| !pt.floor_limited && pt.diff > 0.0).collect();
    let fitted_slope = log_log_slope(
        &good.iter().map(|pt| pt.epsilon).collect::<Vec<_>>(),
        &good.iter().map(|pt| pt.diff).collect::<Vec<_>>(),
    );
    let fit_residual = fitted_slope.map(|slope| {
        let n = good.len() as f64;
        let mx = good.iter().map(|pt| pt.epsilon.ln()).sum::<f64>() / n;
        let my = good.iter().map(|pt| pt.diff.ln()).sum::<f64>() / n;
        let ss: f64 = good
            .iter()
            .map(|pt| {
                let e = pt.diff.ln() - (my + slope * (pt.epsilon.ln() - mx));
                e * e
            })
            .sum();
        (ss / n).sqrt()
    });
    Ok(ScalingReport { alpha, points, pair_slopes, fitted_slope, fit_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quintic(sign: f64) -> NonlinearitySpec {
        NonlinearitySpec::Quintic { sign }
    }

    fn unit_params() -> ScaleParams<f64> {
        ScaleParams::centered(1.0, 1.0).unwrap()
    }

    #[test]
    fn born_functional_matches_both_closed_routes_for_quintic() {
        let direct = born_functional(&quintic(1.0), &unit_params()).unwrap();
        let closed = 64.0 * PI * kernel_mass();
        let layer_cake = 12.0
            * quad::adaptive_simpson(
                &|l: f64| if l > 0.0 { l.powi(5) * m_closed(l) } else { 0.0 },
                0.0,
                2.0,
                1e-10,
            );
        assert!((direct / closed - 1.0).abs() < 1e-5, "direct {direct} vs closed {closed}");
        assert!(
            (layer_cake / closed - 1.0).abs() < 1e-6,
            "layer cake {layer_cake} vs closed {closed}"
        );
    }

    #[test]
    fn born_functional_is_zero_for_zero_nonlinearity() {
        assert_eq!(born_functional(&quintic(0.0), &unit_params()).unwrap(), 0.0);
    }

    #[test]
    fn born_functional_follows_the_scaling_law() {
        for &(alpha, eps) in &[(0.7, 0.3), (2.0, 0.1)] {
            let p = ScaleParams::centered(alpha, eps).unwrap();
            let got = born_functional(&quintic(1.0), &p).unwrap();
            let want = 32.0 * PI * eps.powi(8) / (3.0 * alpha * alpha) * 6.0 * kernel_mass();
            assert!(
                (got / want - 1.0).abs() < 1e-5,
                "alpha {alpha} eps {eps}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn oracle_samples_are_alpha_independent_for_quintic() {
        let opts = FullPdeOpts::default();
        let expect = 6.0 * kernel_mass();
        for &alpha in &[0.5, 1.0, 2.0] {
            let p = ScaleParams::centered(alpha, 0.05).unwrap();
            let s = measure_hw_sample(&quintic(1.0), &p, MeasureMode::BornOracle, &opts).unwrap();
            assert!(
                (s.phi / expect - 1.0).abs() < 1e-4,
                "alpha {alpha}: {} vs {expect}",
                s.phi
            );
            assert!(s.error_bar < 1e-4 * expect);
            let raw = born_functional(&quintic(1.0), &p).unwrap();
            let renormalized = raw / pairing_normalization(&p);
            assert!((renormalized / s.phi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_cake_agrees_with_direct_quadrature() {
        for &alpha in &[0.5, 1.0, 2.0] {
            for f in [quintic(1.0), NonlinearitySpec::RationalQuintic] {
                let p = ScaleParams::centered(alpha, 0.05).unwrap();
                let direct = measure_hw_sample(&f, &p, MeasureMode::BornOracle,
                    &FullPdeOpts::default())
                .unwrap()
                .phi;
                let cake = layer_cake_phi(&f, alpha).unwrap();
                assert!(
                    (direct - cake).abs() <= 1e-4 * cake.abs().max(1e-3),
                    "alpha {alpha}, {f:?}: {direct} vs {cake}"
                );
            }
        }
        assert!(matches!(
            layer_cake_phi(
                &NonlinearitySpec::MaskedQuintic { sign: 1.0, r_inner: 0.0, r_outer: 1.0 },
                1.0
            ),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn full_pde_sample_approaches_the_oracle() {
        let opts = FullPdeOpts { dr: 1.0 / 128.0, ..FullPdeOpts::default() };
        let p = ScaleParams::centered(1.0, 0.1).unwrap();
        let oracle =
            measure_hw_sample(&quintic(1.0), &p, MeasureMode::BornOracle, &opts).unwrap();
        let pde = measure_hw_sample(&quintic(1.0), &p, MeasureMode::FullPde, &opts).unwrap();
        let rel = (pde.phi / oracle.phi - 1.0).abs();
        assert!(rel < 2e-3, "full-PDE {} vs oracle {}, rel {rel}", pde.phi, oracle.phi);
        assert!(pde.born_regime_ok);
        assert!(pde.born_gap.unwrap() < 5e-3 * oracle.phi);
        assert!(rel <= pde.error_bar / oracle.phi.abs() + 1e-12, "bar {}", pde.error_bar);
    }

    #[test]
    fn sweep_recovers_the_quintic_within_percents() {
        let report = run_sweep(&quintic(1.0), &SweepPlan::default()).unwrap();
        assert!(report.diagnostics.born_regime_ok);
        assert!(report.diagnostics.trusted_lo <= 0.2_f64.ln());
        assert!(report.diagnostics.trusted_hi >= 2.0_f64.ln());
        let rec = report.recovered().unwrap();
        let mut worst = 0.0_f64;
        for i in 0..=36 {
            let u = 0.2 + i as f64 * 0.05;
            let ratio = rec.eval(u).unwrap() / u.powi(5);
            worst = worst.max((ratio - 1.0).abs());
        }
        assert!(worst < 0.03, "worst recovery error {worst}");
        assert!(report.diagnostics.residual_sup < 0.01 * 6.0 * kernel_mass());
    }

    #[test]
    fn sweep_is_exactly_linear_in_the_nonlinearity() {
        let plan = SweepPlan::default();
        let base = run_sweep(&quintic(1.0), &plan).unwrap();
        let doubled = run_sweep(&quintic(2.0), &plan).unwrap();
        let negated = run_sweep(&quintic(-1.0), &plan).unwrap();
        for i in 0..base.hw_samples.len() {
            assert_eq!(doubled.hw_samples.values[i], 2.0 * base.hw_samples.values[i]);
            assert_eq!(negated.hw_samples.values[i], -base.hw_samples.values[i]);
        }
        for i in 0..base.h_estimate.len() {
            assert_eq!(doubled.h_estimate.values[i], 2.0 * base.h_estimate.values[i]);
            assert_eq!(negated.h_estimate.values[i], -base.h_estimate.values[i]);
        }
        for i in 0..base.f_estimate.len() {
            assert_eq!(doubled.f_estimate.values[i], 2.0 * base.f_estimate.values[i]);
            assert_eq!(negated.f_estimate.values[i], -base.f_estimate.values[i]);
        }
    }

    #[test]
    fn sweep_budget_guards_full_pde_grids() {
        let plan = SweepPlan {
            mode: MeasureMode::FullPde,
            n_tau0: 121,
            full_pde_budget: 8,
            ..SweepPlan::default()
        };
        assert!(matches!(run_sweep(&quintic(1.0), &plan), Err(Error::Config(_))));
    }

    #[test]
    fn localization_distinguishes_interior_exterior_and_boundary() {
        let mask = NonlinearitySpec::MaskedQuintic { sign: 1.0, r_inner: 0.0, r_outer: 1.0 };
        let centers =
            [(0.0, [0.0, 0.0, 0.0]), (0.0, [3.0, 0.0, 0.0]), (0.0, [0.0, 1.0, 0.0])];
        let table =
            localization_experiment(&mask, &centers, &[0.4, 0.2, 0.1], 1.0).unwrap();
        let limit = 6.0 * kernel_mass();

        let interior = &table.rows[0];
        assert!(interior.inside && !interior.boundary);
        assert_eq!(interior.limit, Some(limit));
        assert!(interior.monotone);
        assert!((interior.phi[2] - limit).abs() < 1e-4 * limit);
        assert!(interior.deviation[0] > interior.deviation[2]);

        let exterior = &table.rows[1];
        assert!(!exterior.inside && !exterior.boundary);
        assert_eq!(exterior.limit, Some(0.0));
        assert!(exterior.monotone);
        assert!(exterior.phi[2].abs() < 1e-8 * limit);

        let boundary = &table.rows[2];
        assert!(boundary.boundary);
        assert_eq!(boundary.limit, None);
        assert!(boundary.deviation.is_empty());
    }

    #[test]
    fn localization_rejects_unmasked_families_and_bad_schedules() {
        let mask = NonlinearitySpec::MaskedQuintic { sign: 1.0, r_inner: 0.0, r_outer: 1.0 };
        assert!(matches!(
            localization_experiment(&quintic(1.0), &[(0.0, [0.0; 3])], &[0.2, 0.1], 1.0),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            localization_experiment(&mask, &[(0.0, [0.0; 3])], &[0.1, 0.2], 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scaling_study_validates_the_epsilon_list() {
        let opts = FullPdeOpts::default();
        assert!(matches!(
            born_scaling_study(&quintic(1.0), 1.0, &[0.2, 0.1], &opts),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            born_scaling_study(&quintic(1.0), 1.0, &[0.1, 0.2, 0.4], &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scaling_study_reports_zero_nonlinearity_as_floor_limited() {
        let opts = FullPdeOpts { dr: 1.0 / 64.0, ..FullPdeOpts::default() };
        let report =
            born_scaling_study(&quintic(0.0), 1.0, &[0.2, 0.1, 0.05], &opts).unwrap();
        assert!(report.points.iter().all(|pt| pt.floor_limited));
        assert!(report.fitted_slope.is_none());
        assert!(report.pair_slopes.iter().all(|s| s.is_none()));
    }
}
