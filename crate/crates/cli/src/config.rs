//! Run configuration: one TOML file with a section per concern, defaults
//! matching the library, command-line overrides, and a content hash tying
//! every emitted file back to the exact numbers that produced it.

use crate::fail::{io_at, CliResult, Failure};
use nlwave::born_pipeline::FullPdeOpts;
use nlwave::weight_deconv::DeconvOptions;
use nlwave::{MeasureMode, NonlinearitySpec, SweepPlan};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub nonlinearity: NonlinearitySection,
    pub sweep: SweepSection,
    pub solver: FullPdeOpts,
    pub deconv: DeconvOptions,
    pub measures: MeasuresSection,
    pub weight: WeightSection,
    pub recover: RecoverSection,
    pub localize: LocalizeSection,
    pub scaling: ScalingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Directory all CSV and JSON artifacts are written into.
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Seed for the randomized spot checks (kernel identity draws,
    /// admissibility sampling). Fixing it fixes every emitted byte.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), workers: 0, seed: 7 }
    }
}

/// Which nonlinearity the run probes and, for recovery, compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NonlinearitySection {
    /// `sign * u^5`; set `sign = 0` for the zero nonlinearity.
    Quintic { sign: f64 },
    /// `sign * u^5` on the shell `r_inner <= |x| <= r_outer`, zero outside.
    MaskedQuintic { sign: f64, r_inner: f64, r_outer: f64 },
    /// `u^5 / (1 + u^2)`.
    RationalQuintic,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self::Quintic { sign: 1.0 }
    }
}

impl NonlinearitySection {
    pub fn to_spec(&self) -> CliResult<NonlinearitySpec> {
        match *self {
            Self::Quintic { sign } => Ok(NonlinearitySpec::Quintic { sign }),
            Self::MaskedQuintic { sign, r_inner, r_outer } => {
                if !(r_inner >= 0.0) || !(r_outer > r_inner) || !r_outer.is_finite() {
                    return Err(Failure::Config(format!(
                        "masked shell needs 0 <= r_inner < r_outer, got {r_inner} .. {r_outer}"
                    )));
                }
                Ok(NonlinearitySpec::MaskedQuintic { sign, r_inner, r_outer })
            }
            Self::RationalQuintic => Ok(NonlinearitySpec::RationalQuintic),
        }
    }

    fn sign(&self) -> f64 {
        match *self {
            Self::Quintic { sign } | Self::MaskedQuintic { sign, .. } => sign,
            Self::RationalQuintic => 1.0,
        }
    }
}

/// Probe sweep shape; solver and deconvolution controls live in their own
/// sections and are folded in by [`SweepSection::to_plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub tau0_min: f64,
    pub tau0_step: f64,
    pub n_tau0: usize,
    pub epsilon: f64,
    /// Scale epsilon with alpha along the sweep instead of holding it
    /// absolute; keeps the physical probe footprint constant.
    pub epsilon_tracks_alpha: bool,
    pub t0: f64,
    pub x0: [f64; 3],
    pub mode: MeasureMode,
    /// Hard cap on PDE solves a full-PDE sweep may request.
    pub full_pde_budget: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let p = SweepPlan::default();
        Self {
            tau0_min: p.tau0_min,
            tau0_step: p.tau0_step,
            n_tau0: p.n_tau0,
            epsilon: p.epsilon,
            epsilon_tracks_alpha: p.epsilon_tracks_alpha,
            t0: p.t0,
            x0: p.x0,
            mode: p.mode,
            full_pde_budget: p.full_pde_budget,
        }
    }
}

impl SweepSection {
    pub fn to_plan(&self, solver: FullPdeOpts, deconv: DeconvOptions) -> SweepPlan {
        SweepPlan {
            tau0_min: self.tau0_min,
            tau0_step: self.tau0_step,
            n_tau0: self.n_tau0,
            epsilon: self.epsilon,
            epsilon_tracks_alpha: self.epsilon_tracks_alpha,
            t0: self.t0,
            x0: self.x0,
            mode: self.mode,
            full_pde_budget: self.full_pde_budget,
            solver,
            deconv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresSection {
    /// Midpoint level grid over `(lambda_min, lambda_max)`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_lambda: usize,
    /// Cell width of the brute-force counting oracle.
    pub oracle_h: f64,
    /// Relative tolerance for closed form vs oracle, and for the oracle's
    /// own two-resolution certificate.
    pub rel_tol: f64,
    /// Absolute tolerance handed to the per-region time quadratures.
    pub region_quad_tol: f64,
    /// Relative tolerance for the three-region sum against the closed form.
    pub region_rel_tol: f64,
}

impl Default for MeasuresSection {
    fn default() -> Self {
        Self {
            lambda_min: 0.05,
            lambda_max: 1.95,
            n_lambda: 32,
            oracle_h: 1.0 / 1024.0,
            rel_tol: 1e-3,
            region_quad_tol: 1e-12,
            region_rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    /// Certificate grid `xi = -xi_max ..= xi_max` in steps of `xi_step`.
    pub xi_max: f64,
    pub xi_step: f64,
    /// Random draws for the closed form vs measure-route identity.
    pub n_identity: usize,
    /// Largest acceptable distance between the two routes, in ulps.
    pub identity_ulps: u64,
    /// Absolute tolerance on the kernel mass reproduced by the transform
    /// at frequency zero.
    pub mass_tol: f64,
    /// Normalized sup error allowed in the sampled convolve/deconvolve
    /// round trip.
    pub roundtrip_tol: f64,
    /// Self-test hook: strip nearly all mass from the sampled kernel and
    /// drop the regularizer, so the stability guard must refuse it and
    /// the command must exit nonzero.
    pub corrupt_kernel: bool,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            xi_max: 100.0,
            xi_step: 0.01,
            n_identity: 200,
            identity_ulps: 10,
            mass_tol: 1e-8,
            roundtrip_tol: 1e-2,
            corrupt_kernel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    /// Uniform comparison grid in u.
    pub u_min: f64,
    pub u_max: f64,
    pub n_u: usize,
    /// Acceptance band on `|F_rec - F_true| / max(|F_true|, abs_floor)`.
    pub max_rel_err: f64,
    /// Floors the denominator so the band stays meaningful where the true
    /// nonlinearity vanishes.
    pub abs_floor: f64,
}

impl Default for RecoverSection {
    fn default() -> Self {
        Self { u_min: 0.2, u_max: 2.0, n_u: 61, max_rel_err: 0.05, abs_floor: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    /// Probe centres as rows `[t0, x, y, z]`.
    pub centers: Vec<[f64; 4]>,
    /// Strictly decreasing probe sizes.
    pub epsilons: Vec<f64>,
    pub alpha: f64,
    /// Band on the final deviation relative to the interior limit.
    pub interior_rel_tol: f64,
    /// Absolute band on the final value at centres outside the mask.
    pub exterior_abs_tol: f64,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        Self {
            centers: vec![[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 3.0]],
            epsilons: vec![0.4, 0.2, 0.1],
            alpha: 1.0,
            interior_rel_tol: 1e-3,
            exterior_abs_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub alpha: f64,
    /// Strictly decreasing probe sizes; the fit needs at least three.
    pub epsilons: Vec<f64>,
    /// Hard cap on PDE solves; each epsilon costs four (two resolutions,
    /// full and frozen each). Exceeding it truncates the list and the
    /// command reports a partial study with a nonzero exit.
    pub budget: usize,
    /// Smallest acceptable fitted decay exponent.
    pub min_slope: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self { alpha: 1.0, epsilons: vec![0.2, 0.1, 0.05], budget: 64, min_slope: 10.0 }
    }
}

impl RunConfig {
    /// Built-in defaults when no file is given, otherwise the parsed file.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_at(p))?;
                toml::from_str(&text)
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Command-line flags win over file values.
    pub fn apply_overrides(&mut self, out: Option<&Path>, workers: Option<usize>, seed: Option<u64>) {
        if let Some(dir) = out {
            self.run.out_dir = dir.to_path_buf();
        }
        if let Some(w) = workers {
            self.run.workers = w;
        }
        if let Some(s) = seed {
            self.run.seed = s;
        }
    }

    /// Structural invariants shared by every subcommand. Grid and budget
    /// shapes specific to one command are checked where they are used.
    pub fn validate(&self) -> CliResult<()> {
        let pos = |name: &str, v: f64| -> CliResult<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Failure::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if !self.nonlinearity.sign().is_finite() {
            return Err(Failure::Config("nonlinearity sign must be finite".into()));
        }
        pos("measures.lambda_min", self.measures.lambda_min)?;
        if !(self.measures.lambda_max > self.measures.lambda_min) {
            return Err(Failure::Config(format!(
                "measures.lambda_max {} must exceed lambda_min {}",
                self.measures.lambda_max, self.measures.lambda_min
            )));
        }
        if self.measures.n_lambda == 0 {
            return Err(Failure::Config("measures.n_lambda must be at least 1".into()));
        }
        pos("measures.oracle_h", self.measures.oracle_h)?;
        pos("measures.rel_tol", self.measures.rel_tol)?;
        pos("measures.region_quad_tol", self.measures.region_quad_tol)?;
        pos("measures.region_rel_tol", self.measures.region_rel_tol)?;
        pos("weight.xi_max", self.weight.xi_max)?;
        pos("weight.xi_step", self.weight.xi_step)?;
        if self.weight.n_identity == 0 {
            return Err(Failure::Config("weight.n_identity must be at least 1".into()));
        }
        pos("weight.mass_tol", self.weight.mass_tol)?;
        pos("weight.roundtrip_tol", self.weight.roundtrip_tol)?;
        pos("recover.u_min", self.recover.u_min)?;
        if !(self.recover.u_max > self.recover.u_min) {
            return Err(Failure::Config(format!(
                "recover.u_max {} must exceed u_min {}",
                self.recover.u_max, self.recover.u_min
            )));
        }
        if self.recover.n_u < 2 {
            return Err(Failure::Config("recover.n_u must be at least 2".into()));
        }
        pos("recover.max_rel_err", self.recover.max_rel_err)?;
        pos("recover.abs_floor", self.recover.abs_floor)?;
        pos("localize.alpha", self.localize.alpha)?;
        pos("localize.interior_rel_tol", self.localize.interior_rel_tol)?;
        pos("localize.exterior_abs_tol", self.localize.exterior_abs_tol)?;
        pos("scaling.alpha", self.scaling.alpha)?;
        pos("scaling.min_slope", self.scaling.min_slope)?;
        Ok(())
    }

    /// Hash of the effective numerical configuration. Where results land
    /// (`out_dir`) and how many threads compute them (`workers`) cannot
    /// change a single number, so both are pinned before hashing; reruns
    /// into different directories compare byte-identical.
    pub fn sha256_hex(&self) -> CliResult<String> {
        let mut canon = self.clone();
        canon.run.out_dir = PathBuf::new();
        canon.run.workers = 0;
        let text = toml::to_string(&canon)
            .map_err(|e| Failure::Config(format!("canonical config: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn family_forms_parse() {
        let cfg: RunConfig = toml::from_str(
            "[nonlinearity]\nfamily = \"masked_quintic\"\nsign = -1.0\nr_inner = 0.0\nr_outer = 1.0\n",
        )
        .unwrap();
        assert_eq!(
            cfg.nonlinearity.to_spec().unwrap(),
            NonlinearitySpec::MaskedQuintic { sign: -1.0, r_inner: 0.0, r_outer: 1.0 }
        );
        let cfg: RunConfig = toml::from_str("[nonlinearity]\nfamily = \"rational_quintic\"\n").unwrap();
        assert_eq!(cfg.nonlinearity.to_spec().unwrap(), NonlinearitySpec::RationalQuintic);
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<RunConfig>("[sweeep]\nn_tau0 = 4\n").is_err());
        assert!(toml::from_str::<RunConfig>("[sweep]\nn_tau = 4\n").is_err());
    }

    #[test]
    fn overrides_win_and_stay_out_of_the_hash() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        b.apply_overrides(Some(Path::new("elsewhere")), Some(3), None);
        assert_eq!(b.run.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(b.run.workers, 3);
        assert_eq!(a.sha256_hex().unwrap(), b.sha256_hex().unwrap());
        a.apply_overrides(None, None, Some(8));
        assert_ne!(a.sha256_hex().unwrap(), b.sha256_hex().unwrap());
    }

    #[test]
    fn masked_shell_must_be_ordered() {
        let s = NonlinearitySection::MaskedQuintic { sign: 1.0, r_inner: 2.0, r_outer: 1.0 };
        assert!(s.to_spec().is_err());
    }
}
