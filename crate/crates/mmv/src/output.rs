//! Deterministic CSV emission. Floats carry 17 significant digits so that
//! repeated runs diff byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// One named check with its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// What a subcommand did: its checks, the files it wrote and free-form
/// notes for the terminal.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
        }
        for f in &self.files {
            out.push_str(&format!("wrote {}\n", f.display()));
        }
        out
    }
}

/// Writes `rows` under a fixed header and records the path in `report`.
pub fn write_csv<S: AsRef<str>>(
    report: &mut Report,
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let csv_err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    report.files.push(path.clone());
    Ok(path)
}

/// Two-column `quantity,value` summary.
pub fn write_summary(
    report: &mut Report,
    dir: &Path,
    name: &str,
    entries: &[(&str, String)],
) -> Result<PathBuf, CliError> {
    let rows = entries.iter().map(|(k, v)| vec![k.to_string(), v.clone()]);
    write_csv(report, dir, name, &["quantity", "value"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-1.0), "-1.0000000000000000e0");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_has_header_and_newline_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::default();
        let p = write_csv(&mut r, dir.path(), "a.csv", &["z", "t"], [vec![num(1.0), num(0.5)]]).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text, "z,t\n1.0000000000000000e0,5.0000000000000000e-1\n");
        assert_eq!(r.files.len(), 1);
    }
}
