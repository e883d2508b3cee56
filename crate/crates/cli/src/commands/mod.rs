//! One module per subcommand. Each `run` takes the effective config,
//! prints a verdict line per check, writes its artifacts, and returns
//! whether everything passed.

pub mod localize;
pub mod recover;
pub mod scaling;
pub mod verify_measures;
pub mod verify_weight;

/// Relative difference against the larger magnitude, floored so two
/// exact zeros compare equal.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// One verdict line per check, mirrored on stdout.
pub fn check(name: &str, pass: bool, detail: &str) -> bool {
    println!("{name} {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
