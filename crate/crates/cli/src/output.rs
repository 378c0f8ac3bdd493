//! Atomic file output and delimited tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use basisfit::optimize::HistoryRow;

use crate::CliError;

pub const HISTORY_FLUSH_EVERY: usize = 50;

/// Writes `text` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step history as CSV, rewritten atomically every [`HISTORY_FLUSH_EVERY`] rows.
pub struct HistoryWriter {
    path: PathBuf,
    text: String,
    pending: usize,
    error: Option<CliError>,
}

impl HistoryWriter {
    pub fn new(path: PathBuf, term_names: &[String]) -> Self {
        let mut text = String::from("step,total");
        for n in term_names {
            let _ = write!(text, ",loss_{n}");
        }
        for n in term_names {
            let _ = write!(text, ",weight_{n}");
        }
        text.push('\n');
        HistoryWriter { path, text, pending: 0, error: None }
    }

    pub fn push(&mut self, row: &HistoryRow) {
        let _ = write!(self.text, "{},{}", row.step, num(row.total));
        for v in row.terms.iter().chain(&row.weights) {
            let _ = write!(self.text, ",{}", num(*v));
        }
        self.text.push('\n');
        self.pending += 1;
        if self.pending >= HISTORY_FLUSH_EVERY {
            self.flush_quiet();
        }
    }

    fn flush_quiet(&mut self) {
        self.pending = 0;
        if let Err(e) = write_atomic(&self.path, &self.text) {
            self.error.get_or_insert(e);
        }
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.flush_quiet();
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn history_flushes_in_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let mut h = HistoryWriter::new(path.clone(), &["pde".into(), "bc".into()]);
        let row = |step| HistoryRow { step, total: 1.0, terms: vec![0.5, 0.5], weights: vec![1.0, 1.0] };
        for s in 0..HISTORY_FLUSH_EVERY - 1 {
            h.push(&row(s));
        }
        assert!(!path.exists());
        h.push(&row(HISTORY_FLUSH_EVERY));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), HISTORY_FLUSH_EVERY + 1);
        assert!(text.starts_with("step,total,loss_pde,loss_bc,weight_pde,weight_bc\n"));
        h.push(&row(99));
        h.finish().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), HISTORY_FLUSH_EVERY + 2);
    }
}
