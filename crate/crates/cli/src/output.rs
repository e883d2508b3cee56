//! CSV and JSON emission with a reproducible provenance header: every
//! file names the command, the config hash and the tolerances in force,
//! and all floats use the shortest round-trip decimal form so identical
//! runs produce identical bytes.

use crate::fail::{io_at, CliResult, Failure};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Shortest decimal form that parses back to the same float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct Header<'a> {
    pub command: &'a str,
    pub config_sha256: &'a str,
    /// Tolerances pinned into the emitted file, name and value.
    pub tolerances: &'a [(&'a str, f64)],
}

pub fn write_csv(
    path: &Path,
    header: &Header,
    columns: &[&str],
    rows: &[Vec<String>],
) -> CliResult<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# nlwave {}", header.command);
    let _ = writeln!(text, "# config sha256 {}", header.config_sha256);
    for (name, value) in header.tolerances {
        let _ = writeln!(text, "# {name} = {}", num(*value));
    }
    let _ = writeln!(text, "{}", columns.join(","));
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let _ = writeln!(text, "{}", row.join(","));
    }
    std::fs::write(path, text).map_err(io_at(path))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct JsonDoc<'a, T> {
    command: &'a str,
    config_sha256: &'a str,
    tolerances: BTreeMap<&'a str, f64>,
    report: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, header: &Header, report: &T) -> CliResult<()> {
    let doc = JsonDoc {
        command: header.command,
        config_sha256: header.config_sha256,
        tolerances: header.tolerances.iter().copied().collect(),
        report,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Failure::Check(format!("report not serializable: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_at(path))?;
    println!("wrote {}", path.display());
    Ok(())
}
