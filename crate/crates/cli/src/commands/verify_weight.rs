//! Kernel certificates: the transform clears its explicit lower bound on
//! a frequency grid, the closed form matches the measure route to a few
//! ulp, the mass comes back at frequency zero, and the sampled kernel is
//! stable enough to deconvolve against.

use crate::commands::check;
use crate::config::RunConfig;
use crate::fail::CliResult;
use crate::output::{num, write_csv, Header};
use nlwave::weight_deconv::{
    convolve, deconvolve, eval_w, eval_w_via_measure, h_from_f, kernel_mass, kernel_samples,
    w_hat, w_hat_lower_bound,
};
use nlwave::NonlinearitySpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Distance in representable doubles, treating the reals as the usual
/// total order (sign-magnitude folded into two's complement).
fn ulp_distance(a: f64, b: f64) -> u64 {
    let ordered = |x: f64| -> i64 {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN.wrapping_sub(bits).wrapping_neg() ^ i64::MIN
        } else {
            bits
        }
    };
    ordered(a).abs_diff(ordered(b))
}

pub fn run(cfg: &RunConfig) -> CliResult<bool> {
    let wc = &cfg.weight;
    let hash = cfg.sha256_hex()?;

    // Lower-bound certificate on a symmetric frequency grid.
    let n_side = (wc.xi_max / wc.xi_step).round() as i64;
    let grid: Vec<(f64, f64, f64, f64, f64)> = (-n_side..=n_side)
        .into_par_iter()
        .map(|i| {
            let xi = i as f64 * wc.xi_step;
            let z = w_hat(xi);
            let bound = w_hat_lower_bound(xi);
            (xi, z.re, z.im, z.norm(), bound)
        })
        .collect();
    let mut min_margin = f64::INFINITY;
    let mut margin_at = 0.0;
    let mut min_bound = f64::INFINITY;
    let mut rows = Vec::with_capacity(grid.len());
    for &(xi, re, im, abs, bound) in &grid {
        let margin = abs - bound;
        if margin < min_margin {
            min_margin = margin;
            margin_at = xi;
        }
        min_bound = min_bound.min(bound);
        rows.push(vec![num(xi), num(re), num(im), num(abs), num(bound), num(margin)]);
    }

    let header = Header {
        command: "verify-weight",
        config_sha256: &hash,
        tolerances: &[
            ("identity_ulps", wc.identity_ulps as f64),
            ("mass_tol", wc.mass_tol),
            ("roundtrip_tol", wc.roundtrip_tol),
        ],
    };
    write_csv(
        &cfg.run.out_dir.join("weight_certificate.csv"),
        &header,
        &["xi", "w_hat_re", "w_hat_im", "w_hat_abs", "lower_bound", "margin"],
        &rows,
    )?;

    let mut pass = check(
        "transform-floor",
        min_margin > 0.0 && min_bound > 0.0,
        &format!(
            "min margin {} at xi = {}, min bound {} over {} points",
            num(min_margin),
            num(margin_at),
            num(min_bound),
            grid.len()
        ),
    );

    // Closed form vs measure route on seeded random arguments.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut max_ulp = 0u64;
    let mut ulp_at = 0.0;
    for _ in 0..wc.n_identity {
        let tau: f64 = rng.gen_range(-1.0..12.0);
        let d = ulp_distance(eval_w(tau), eval_w_via_measure(tau));
        if d > max_ulp {
            max_ulp = d;
            ulp_at = tau;
        }
    }
    pass &= check(
        "measure-identity",
        max_ulp <= wc.identity_ulps,
        &format!(
            "max {} ulp at tau = {} over {} draws (tol {} ulp)",
            max_ulp,
            num(ulp_at),
            wc.n_identity,
            wc.identity_ulps
        ),
    );

    // The transform at zero is the kernel mass.
    let z0 = w_hat(0.0);
    let mass_err = (z0.re - kernel_mass()).hypot(z0.im);
    pass &= check(
        "mass",
        mass_err <= wc.mass_tol,
        &format!("|w_hat(0) - mass| = {} (tol {})", num(mass_err), num(wc.mass_tol)),
    );

    // Sampled stability: convolve a known varying profile with the
    // sampled kernel and require deconvolution to return it. The corrupt
    // hook removes nearly all kernel mass and the regularizer, which the
    // stability guard inside the deconvolution must refuse.
    let step = 0.05;
    let mut w = kernel_samples(step)?;
    let mut opts = cfg.deconv.clone();
    if wc.corrupt_kernel {
        for k in 0..w.values.len() {
            if w.tau(k) < 3.0 {
                w.values[k] = 0.0;
            }
        }
        opts.mu = 0.0;
    }
    let out_len = 121;
    let g_len = w.values.len() + out_len - 1;
    let tau_min = -3.0 - (w.values.len() - 1) as f64 * step;
    let h_true = h_from_f(&NonlinearitySpec::RationalQuintic, 0.0, 0.0, tau_min, step, g_len)?;
    let hw = convolve(&h_true, &w)?;
    let offset = w.values.len() - 1;
    pass &= match deconvolve(&hw, &w, &opts) {
        Ok(d) => {
            let mut sup = 0.0_f64;
            let mut scale = 0.0_f64;
            for i in d.trusted_range() {
                sup = sup.max((d.h.values[i] - h_true.values[offset + i]).abs());
                scale = scale.max(h_true.values[offset + i].abs());
            }
            let rel = sup / scale;
            check(
                "sampled-roundtrip",
                rel <= wc.roundtrip_tol,
                &format!("normalized sup err {} (tol {})", num(rel), num(wc.roundtrip_tol)),
            )
        }
        Err(e) => check("sampled-roundtrip", false, &format!("deconvolution refused: {e}")),
    };
    Ok(pass)
}
