//! Append-only results table with deterministic CSV output.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

pub const CSV_HEADER: &str = "check_id,module,paper_ref,value,bound,pass,runtime_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub check_id: String,
    pub module: String,
    /// Short description of the statement being checked.
    pub paper_ref: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub runtime_ms: u64,
}

impl ResultRow {
    pub fn new(check_id: impl Into<String>, module: &str, paper_ref: &str, value: f64, bound: f64, pass: bool) -> Self {
        ResultRow {
            check_id: check_id.into(),
            module: module.into(),
            paper_ref: paper_ref.into(),
            value,
            bound,
            pass,
            runtime_ms: 0,
        }
    }

    /// Row passing when value ≤ bound.
    pub fn at_most(check_id: impl Into<String>, module: &str, paper_ref: &str, value: f64, bound: f64) -> Self {
        Self::new(check_id, module, paper_ref, value, bound, value <= bound)
    }

    /// Reported value with no asserted bound.
    pub fn info(check_id: impl Into<String>, module: &str, paper_ref: &str, value: f64) -> Self {
        Self::new(check_id, module, paper_ref, value, f64::NAN, true)
    }

    /// Row passing when value ≥ bound.
    pub fn at_least(check_id: impl Into<String>, module: &str, paper_ref: &str, value: f64, bound: f64) -> Self {
        Self::new(check_id, module, paper_ref, value, bound, value >= bound)
    }
}

/// Reals with 17 significant digits; non-finite values spelled out.
pub fn fmt_csv_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    rows: Vec<ResultRow>,
    /// Write measured runtimes; off keeps reruns byte-identical.
    pub record_timings: bool,
    /// Written as a leading `# config_hash=` line when set.
    pub config_hash: Option<String>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ResultRow>) {
        self.rows.extend(rows);
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(h) = &self.config_hash {
            s.push_str(&format!("# config_hash={h}\n"));
        }
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let ms = if self.record_timings { r.runtime_ms } else { 0 };
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&r.check_id),
                csv_field(&r.module),
                csv_field(&r.paper_ref),
                fmt_csv_real(r.value),
                fmt_csv_real(r.bound),
                if r.pass { "PASS" } else { "FAIL" },
                ms
            ));
        }
        s
    }

    /// Write `<name>.csv` under `outdir`.
    pub fn persist(&self, outdir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
        let path = outdir.join(format!("{name}.csv"));
        std::fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_and_reals() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(fmt_csv_real(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_csv_real(f64::NEG_INFINITY), "-inf");
    }
}
