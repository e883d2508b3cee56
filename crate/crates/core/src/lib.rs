//! Small-data scattering for radial semilinear wave equations on R^3 and
//! recovery of the nonlinearity from the leading (Born) part of the
//! scattering map.
//!
//! The crate is organised around one explicit probe family. Scaled versions
//! of a fixed compactly supported radial wave are fed through the nonlinear
//! flow, the scattering data is paired against a dual free wave, and the
//! resulting one-parameter family of numbers is a convolution of the
//! unknown nonlinearity (in exponential coordinates) with an explicit
//! kernel. Deconvolution then returns the nonlinearity itself.
//!
//! * [`closed_forms`]: the probe, its superlevel-set measures and the
//!   closed-form values everything else is checked against.
//! * [`weight_deconv`]: the convolution kernel, its Fourier transform and
//!   lower bounds, and the stabilised deconvolution step.
//! * [`wave_engine`]: the radial finite-difference solver, Picard
//!   iteration, and scattering / wave operators.
//! * [`born_pipeline`]: Born functionals, probe sweeps, recovery reports,
//!   localization and scaling experiments.
//!
//! Modules that evaluate closed formulas are generic over the scalar via
//! [`num_traits::Float`]; the solver and FFT paths are `f64` only.

pub mod born_pipeline;
pub mod closed_forms;
pub(crate) mod quad;
pub mod wave_engine;
pub mod weight_deconv;

/// Scalar type used by the solver, the pipeline and the FFT paths.
pub type Real = f64;

pub use born_pipeline::{MeasureMode, RecoveryReport, SweepPlan};
pub use closed_forms::ScaleParams;
pub use wave_engine::{NonlinearitySpec, RadialGrid, RadialState};
pub use weight_deconv::SampledFunction;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A field reached the outer grid boundary (or a translation would
    /// push data across it), so the computation is no longer faithful.
    #[error("support escaped the computational domain: support radius {support} vs r_max {r_max} at t = {time}")]
    DomainEscape { time: f64, support: f64, r_max: f64 },

    /// Picard iteration stopped contracting; the data is too large for
    /// the small-data regime this crate is built around.
    #[error("iteration diverging (last distances {0:?}); data outside the contraction regime")]
    DataTooLarge(Vec<f64>),

    /// Two sampled functions live on incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The sweep window is too short to deconvolve against the kernel.
    #[error("window too small for deconvolution: {len} samples but at least {required} are needed")]
    WindowTooSmall { len: usize, required: usize },

    /// A state contained non-finite samples or violated a structural
    /// requirement (lengths, support, positivity).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An argument left the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A combination of options this crate deliberately does not model.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
