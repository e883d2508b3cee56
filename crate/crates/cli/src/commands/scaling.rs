//! Measures how fast the full nonlinear pairing approaches its frozen
//! (Born) counterpart as the probe shrinks, and fits the decay exponent
//! on a log-log grid.

use crate::commands::check;
use crate::config::RunConfig;
use crate::fail::{CliResult, Failure};
use crate::output::{num, write_csv, write_json, Header};
use nlwave::born_pipeline::born_scaling_study;

/// PDE solves per epsilon point: two resolutions, full and frozen each.
const SOLVES_PER_POINT: usize = 4;

pub fn run(cfg: &RunConfig) -> CliResult<bool> {
    let sc = &cfg.scaling;
    let hash = cfg.sha256_hex()?;
    let f = cfg.nonlinearity.to_spec()?;

    if sc.budget < 3 * SOLVES_PER_POINT {
        return Err(Failure::Config(format!(
            "scaling.budget {} cannot fund the minimal three-point fit ({} solves)",
            sc.budget,
            3 * SOLVES_PER_POINT
        )));
    }
    let affordable = (sc.budget / SOLVES_PER_POINT).min(sc.epsilons.len());
    let partial = affordable < sc.epsilons.len();
    if partial {
        println!(
            "budget {} covers {} of {} epsilon points; running the affordable prefix",
            sc.budget,
            affordable,
            sc.epsilons.len()
        );
    }

    let report = born_scaling_study(&f, sc.alpha, &sc.epsilons[..affordable], &cfg.solver)?;

    let header = Header {
        command: "scaling-study",
        config_sha256: &hash,
        tolerances: &[("min_slope", sc.min_slope)],
    };
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.epsilon),
                num(p.pairing_full),
                num(p.pairing_born),
                num(p.diff),
                num(p.floor_estimate),
                p.floor_limited.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.run.out_dir.join("scaling.csv"),
        &header,
        &["epsilon", "pairing_full", "pairing_born", "diff", "floor_estimate", "floor_limited"],
        &rows,
    )?;
    write_json(&cfg.run.out_dir.join("scaling.json"), &header, &report)?;

    let floored = report.points.iter().filter(|p| p.floor_limited).count();
    let mut pass = match report.fitted_slope {
        Some(s) => check(
            "scaling-slope",
            s >= sc.min_slope,
            &format!(
                "fitted slope {} over {} usable points (min {})",
                num(s),
                report.points.len() - floored,
                num(sc.min_slope)
            ),
        ),
        None => check(
            "scaling-slope",
            true,
            &format!(
                "slope undefined: {floored} of {} points sit at the discretization floor",
                report.points.len()
            ),
        ),
    };
    pass &= check(
        "scaling-budget",
        !partial,
        &if partial {
            format!("study truncated to {affordable} of {} points", sc.epsilons.len())
        } else {
            format!(
                "{} points within {} of {} allowed solves",
                report.points.len(),
                SOLVES_PER_POINT * report.points.len(),
                sc.budget
            )
        },
    );
    Ok(pass)
}
