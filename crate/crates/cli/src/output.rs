//! CSV output with a single `#`-prefixed JSON header line.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use rsqn::driver::RunRecord;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const OPTIMIZE_COLUMNS: &str = "iter,f,grad_norm,step,cum_grad_evals,wall_ms,flag";
pub const SPECTRUM_COLUMNS: &str = "iter,eigenvalue,imag";
pub const RECOVER_COLUMNS: &str = "seed,eps,method,lambda_bar,error,flag";

/// `# {"schema_version":…,"command":…,"columns":…,"config":…,…}` followed by the column line.
pub fn write_header<W: Write, C: Serialize>(
    out: &mut W,
    command: &str,
    columns: &str,
    config: &C,
    extra: Value,
) -> Result<()> {
    let mut header = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "columns": columns,
        "config": config,
    });
    if let (Value::Object(h), Value::Object(e)) = (&mut header, extra) {
        h.extend(e);
    }
    writeln!(out, "# {header}")?;
    writeln!(out, "{columns}")?;
    Ok(())
}

/// Quotes a free-text field when it holds a comma, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_record<W: Write>(out: &mut W, r: &RunRecord) -> Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        r.iter,
        r.f,
        r.grad_norm,
        r.step,
        r.cum_grad_evals,
        r.wall_ms,
        csv_field(r.flag.as_deref().unwrap_or(""))
    )?;
    Ok(())
}

/// Splits an output file into its parsed JSON header and the remaining CSV lines.
pub fn split_header(text: &str) -> Option<(Value, Vec<&str>)> {
    let mut lines = text.lines();
    let header = lines.next()?.strip_prefix("# ")?;
    Some((serde_json::from_str(header).ok()?, lines.collect()))
}
