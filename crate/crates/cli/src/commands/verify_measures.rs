//! Certifies the closed superlevel measure two independent ways: against
//! the brute-force counting oracle on a level grid, and against the sum
//! of the three per-epoch time quadratures.

use crate::commands::{check, rel_diff};
use crate::config::RunConfig;
use crate::fail::CliResult;
use crate::output::{num, write_csv, Header};
use nlwave::closed_forms::{m_closed, m_oracle_batch, m_region_time_quad, MOracleSpec, TimeRegion};

pub fn run(cfg: &RunConfig) -> CliResult<bool> {
    let m = &cfg.measures;
    let hash = cfg.sha256_hex()?;

    // Midpoints keep the grid strictly inside (lambda_min, lambda_max).
    let width = (m.lambda_max - m.lambda_min) / m.n_lambda as f64;
    let lambdas: Vec<f64> =
        (0..m.n_lambda).map(|i| m.lambda_min + (i as f64 + 0.5) * width).collect();
    let spec = MOracleSpec { h: m.oracle_h, rel_tol: m.rel_tol };
    let oracle = m_oracle_batch(&lambdas, &spec)?;

    let mut rows = Vec::with_capacity(lambdas.len());
    let mut worst = (0.0_f64, lambdas[0]);
    let mut worst_region = (0.0_f64, lambdas[0]);
    let mut unresolved = None;
    for (&lam, o) in lambdas.iter().zip(&oracle) {
        let closed = m_closed(lam);
        let region_sum = m_region_time_quad(TimeRegion::Early, lam, m.region_quad_tol)
            + m_region_time_quad(TimeRegion::Middle, lam, m.region_quad_tol)
            + m_region_time_quad(TimeRegion::Late, lam, m.region_quad_tol);
        let rel = rel_diff(closed, o.value);
        if rel > worst.0 {
            worst = (rel, lam);
        }
        let rel_region = rel_diff(closed, region_sum);
        if rel_region > worst_region.0 {
            worst_region = (rel_region, lam);
        }
        if !o.resolved && unresolved.is_none() {
            unresolved = Some((lam, o.rel_err_est));
        }
        rows.push(vec![
            num(lam),
            num(closed),
            num(o.value),
            num(o.rel_err_est),
            num(region_sum),
            num(rel),
        ]);
    }

    let header = Header {
        command: "verify-measures",
        config_sha256: &hash,
        tolerances: &[
            ("rel_tol", m.rel_tol),
            ("region_quad_tol", m.region_quad_tol),
            ("region_rel_tol", m.region_rel_tol),
            ("oracle_h", m.oracle_h),
        ],
    };
    write_csv(
        &cfg.run.out_dir.join("measures.csv"),
        &header,
        &["lambda", "closed", "oracle", "oracle_err_est", "region_sum", "rel_err"],
        &rows,
    )?;

    let mut pass = check(
        "closed-vs-oracle",
        worst.0 <= m.rel_tol,
        &format!(
            "worst rel err {} at lambda = {} (tol {})",
            num(worst.0),
            num(worst.1),
            num(m.rel_tol)
        ),
    );
    pass &= check(
        "oracle-resolution",
        unresolved.is_none(),
        &match unresolved {
            None => format!("all {} levels certified to {}", lambdas.len(), num(m.rel_tol)),
            Some((lam, est)) => format!(
                "unresolved at lambda = {}: oracle self-estimate {} exceeds {}",
                num(lam),
                num(est),
                num(m.rel_tol)
            ),
        },
    );
    pass &= check(
        "region-identity",
        worst_region.0 <= m.region_rel_tol,
        &format!(
            "worst rel err {} at lambda = {} (tol {})",
            num(worst_region.0),
            num(worst_region.1),
            num(m.region_rel_tol)
        ),
    );
    Ok(pass)
}
