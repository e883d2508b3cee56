//! Drives the installed binary end to end: exit codes, emitted files,
//! header provenance, and byte-level reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_nlwave");

struct Run {
    status: Option<i32>,
    stdout: String,
    stderr: String,
    out_dir: PathBuf,
    _tmp: TempDir,
}

fn nlwave(subcommand: &str, config: Option<&str>, extra: &[&str]) -> Run {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let mut cmd = Command::new(BIN);
    cmd.arg(subcommand).arg("--out").arg(&out_dir);
    if let Some(text) = config {
        let cfg_path = tmp.path().join("run.toml");
        fs::write(&cfg_path, text).unwrap();
        cmd.arg("--config").arg(&cfg_path);
    }
    cmd.args(extra);
    let out = cmd.output().unwrap();
    Run {
        status: out.status.code(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
        out_dir,
        _tmp: tmp,
    }
}

/// Rows below the comment block and the column header.
fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next().expect("column header");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn header_hash(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with("# config sha256 ")).expect("hash line");
    line.trim_start_matches("# config sha256 ").to_string()
}

#[test]
fn verify_measures_default_certifies_every_level() {
    let run = nlwave("verify-measures", None, &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    assert!(run.stdout.contains("closed-vs-oracle PASS"));
    assert!(run.stdout.contains("region-identity PASS"));
    let rows = data_rows(&run.out_dir.join("measures.csv"));
    assert_eq!(rows.len(), 32);
    assert_eq!(header_hash(&run.out_dir.join("measures.csv")).len(), 64);
}

#[test]
fn verify_measures_unattainable_tolerance_exits_1_with_worst_offender() {
    let cfg = "[measures]\nrel_tol = 1e-12\noracle_h = 0.015625\n";
    let run = nlwave("verify-measures", Some(cfg), &[]);
    assert_eq!(run.status, Some(1), "stdout:\n{}", run.stdout);
    assert!(run.stdout.contains("closed-vs-oracle FAIL worst rel err"));
    assert!(run.stdout.contains("at lambda ="));
}

#[test]
fn verify_measures_beyond_the_support_is_identically_zero() {
    let cfg = "[measures]\nlambda_min = 2.1\nlambda_max = 3.0\nn_lambda = 8\n";
    let run = nlwave("verify-measures", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}", run.stdout);
    let rows = data_rows(&run.out_dir.join("measures.csv"));
    assert_eq!(rows.len(), 8);
    for row in rows {
        assert_eq!(row[1], "0", "closed value");
        assert_eq!(row[2], "0", "oracle value");
    }
}

#[test]
fn verify_weight_certificate_passes_on_a_small_grid() {
    let cfg = "[weight]\nxi_max = 5.0\nxi_step = 0.1\n";
    let run = nlwave("verify-weight", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    assert!(run.stdout.contains("transform-floor PASS min margin"));
    assert!(run.stdout.contains("measure-identity PASS"));
    assert!(run.stdout.contains("mass PASS"));
    assert!(run.stdout.contains("sampled-roundtrip PASS"));
    let rows = data_rows(&run.out_dir.join("weight_certificate.csv"));
    assert_eq!(rows.len(), 101);
    // Margins are the last column and must all be positive.
    assert!(rows.iter().all(|r| r[5].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn verify_weight_corrupted_kernel_hook_exits_nonzero() {
    let cfg = "[weight]\nxi_max = 1.0\nxi_step = 0.5\ncorrupt_kernel = true\n";
    let run = nlwave("verify-weight", Some(cfg), &[]);
    assert_eq!(run.status, Some(1), "stdout:\n{}", run.stdout);
    assert!(run.stdout.contains("sampled-roundtrip FAIL deconvolution refused"));
}

#[test]
fn recover_quintic_stays_inside_the_band() {
    let run = nlwave("recover", None, &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    assert!(run.stdout.contains("recovery-band PASS"));
    for file in ["hw_samples.csv", "h_estimate.csv", "f_curve.csv", "recovery.json"] {
        assert!(run.out_dir.join(file).is_file(), "{file} missing");
    }
    let rows = data_rows(&run.out_dir.join("f_curve.csv"));
    assert_eq!(rows.len(), 61);
    for row in &rows {
        let rel: f64 = row[3].parse().unwrap();
        assert!(rel < 0.05, "u = {}: rel err {rel}", row[0]);
    }
}

#[test]
fn recover_zero_nonlinearity_comes_back_identically_zero() {
    let cfg = "[nonlinearity]\nfamily = \"quintic\"\nsign = 0.0\n";
    let run = nlwave("recover", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}", run.stdout);
    let rows = data_rows(&run.out_dir.join("f_curve.csv"));
    for row in rows {
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0, "recovered at u = {}", row[0]);
    }
}

#[test]
fn recover_masked_family_emits_the_localization_table() {
    let cfg = "[nonlinearity]\nfamily = \"masked_quintic\"\nsign = 1.0\nr_inner = 0.0\nr_outer = 1.0\n\n\
               [sweep]\nepsilon = 0.1\nepsilon_tracks_alpha = true\n";
    let run = nlwave("recover", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    assert!(run.stdout.contains("recovery-band PASS"));
    assert!(run.stdout.contains("interior: final deviation"));
    assert!(run.stdout.contains("exterior: final |phi|"));
    let rows = data_rows(&run.out_dir.join("localization.csv"));
    // Two centres, three epsilons each, in long format.
    assert_eq!(rows.len(), 6);
    assert!(run.out_dir.join("localization.json").is_file());
}

#[test]
fn recover_full_pde_over_budget_is_a_config_error() {
    let cfg = "[sweep]\nmode = \"full_pde\"\n";
    let run = nlwave("recover", Some(cfg), &[]);
    assert_eq!(run.status, Some(2), "stderr:\n{}", run.stderr);
    assert!(run.stderr.contains("budget"));
}

#[test]
fn localize_rejects_an_unmasked_family() {
    let run = nlwave("localize", None, &[]);
    assert_eq!(run.status, Some(2), "stderr:\n{}", run.stderr);
    assert!(run.stderr.contains("masked"));
}

#[test]
fn localize_standalone_writes_the_table() {
    let cfg = "[nonlinearity]\nfamily = \"masked_quintic\"\nsign = -1.0\nr_inner = 0.0\nr_outer = 1.0\n\n\
               [localize]\ncenters = [[0.0, 0.0, 0.0, 0.0]]\nepsilons = [0.4, 0.2]\n";
    let run = nlwave("localize", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    let rows = data_rows(&run.out_dir.join("localization.csv"));
    assert_eq!(rows.len(), 2);
    // Negative sign flips the interior limit.
    let limit: f64 = rows[0][7].parse().unwrap();
    assert!(limit < 0.0);
}

#[test]
fn scaling_study_fits_a_high_order_slope() {
    let run = nlwave("scaling-study", None, &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    assert!(run.stdout.contains("scaling-slope PASS fitted slope"));
    let rows = data_rows(&run.out_dir.join("scaling.csv"));
    assert_eq!(rows.len(), 3);
    assert!(run.out_dir.join("scaling.json").is_file());
}

#[test]
fn scaling_study_rejects_a_single_epsilon() {
    let cfg = "[scaling]\nepsilons = [0.2]\n";
    let run = nlwave("scaling-study", Some(cfg), &[]);
    assert_eq!(run.status, Some(2), "stderr:\n{}", run.stderr);
    assert!(run.stderr.contains("at least 3"));
}

#[test]
fn scaling_study_over_budget_truncates_and_exits_1() {
    let cfg = "[scaling]\nepsilons = [0.4, 0.3, 0.2, 0.1]\nbudget = 12\n";
    let run = nlwave("scaling-study", Some(cfg), &[]);
    assert_eq!(run.status, Some(1), "stdout:\n{}", run.stdout);
    assert!(run.stdout.contains("scaling-budget FAIL study truncated to 3 of 4 points"));
    // The affordable prefix is still measured and written out.
    let rows = data_rows(&run.out_dir.join("scaling.csv"));
    assert_eq!(rows.len(), 3);
}

#[test]
fn scaling_study_zero_family_reports_the_floor() {
    let cfg = "[nonlinearity]\nfamily = \"quintic\"\nsign = 0.0\n";
    let run = nlwave("scaling-study", Some(cfg), &[]);
    assert_eq!(run.status, Some(0), "stdout:\n{}", run.stdout);
    assert!(run.stdout.contains("slope undefined"));
    assert!(run.stdout.contains("discretization floor"));
    let rows = data_rows(&run.out_dir.join("scaling.csv"));
    assert!(rows.iter().all(|r| r[5] == "true"), "all points floor-limited");
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = nlwave("recover", None, &["--workers", "1"]);
    let b = nlwave("recover", None, &["--workers", "2"]);
    assert_eq!(a.status, Some(0));
    assert_eq!(b.status, Some(0));
    for file in ["hw_samples.csv", "h_estimate.csv", "f_curve.csv", "recovery.json"] {
        let left = fs::read(a.out_dir.join(file)).unwrap();
        let right = fs::read(b.out_dir.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between reruns");
    }
}

#[test]
fn seed_is_part_of_the_recorded_config() {
    let cfg = "[weight]\nxi_max = 1.0\nxi_step = 0.5\n";
    let a = nlwave("verify-weight", Some(cfg), &["--seed", "7"]);
    let b = nlwave("verify-weight", Some(cfg), &["--seed", "8"]);
    assert_eq!(a.status, Some(0));
    assert_eq!(b.status, Some(0));
    let ha = header_hash(&a.out_dir.join("weight_certificate.csv"));
    let hb = header_hash(&b.out_dir.join("weight_certificate.csv"));
    assert_ne!(ha, hb, "different seeds must be distinguishable in the header");
}

#[test]
fn out_flag_overrides_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg_out = tmp.path().join("from_config");
    let flag_out = tmp.path().join("from_flag");
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        format!(
            "[run]\nout_dir = \"{}\"\n\n[measures]\nlambda_min = 2.1\nlambda_max = 3.0\nn_lambda = 2\n",
            cfg_out.display()
        ),
    )
    .unwrap();
    let out = Command::new(BIN)
        .args(["verify-measures", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&flag_out)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(flag_out.join("measures.csv").is_file());
    assert!(!cfg_out.exists());
}

#[test]
fn config_problems_exit_2() {
    let unknown_key = nlwave("recover", Some("[sweep]\nn_tau = 4\n"), &[]);
    assert_eq!(unknown_key.status, Some(2), "stderr:\n{}", unknown_key.stderr);
    assert!(unknown_key.stderr.contains("unknown field"));

    let bad_value = nlwave("recover", Some("[recover]\nmax_rel_err = -0.05\n"), &[]);
    assert_eq!(bad_value.status, Some(2));
    assert!(bad_value.stderr.contains("max_rel_err"));

    let missing = Command::new(BIN)
        .args(["recover", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn the_checked_in_example_config_matches_the_defaults() {
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/nlwave.toml");
    let tmp = TempDir::new().unwrap();

    // Same subcommand, defaults vs the example file: the recorded config
    // hash must agree, proving the example documents the real defaults.
    let with_example = Command::new(BIN)
        .args(["verify-measures", "--config"])
        .arg(&example)
        .arg("--out")
        .arg(tmp.path().join("a"))
        .output()
        .unwrap();
    assert_eq!(with_example.status.code(), Some(0), "example config failed to parse or run");
    let defaults = nlwave("verify-measures", None, &[]);
    assert_eq!(defaults.status, Some(0));
    assert_eq!(
        header_hash(&tmp.path().join("a/measures.csv")),
        header_hash(&defaults.out_dir.join("measures.csv"))
    );
}
