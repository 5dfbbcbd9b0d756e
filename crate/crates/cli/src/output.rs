//! Atomic file output and deterministic number formatting.
//!
//! Files are written to a temporary sibling and renamed into place on
//! success, so interrupted or failed runs never leave truncated output.
//! Floats are printed with 17 significant digits, enough to reproduce the
//! exact binary value on read-back.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::CliError;

/// 17 significant digits; round-trips f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:.16e}")
    }
}

/// CSV writer that stages everything in a temp file and renames on finish.
pub struct AtomicCsv {
    writer: BufWriter<NamedTempFile>,
    path: PathBuf,
}

impl AtomicCsv {
    pub fn create(path: &Path, header: &str) -> Result<Self, CliError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let tmp = match dir {
            Some(dir) => NamedTempFile::new_in(dir),
            None => NamedTempFile::new_in("."),
        }
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut out = Self {
            writer: BufWriter::new(tmp),
            path: path.to_path_buf(),
        };
        out.write_line(header)?;
        Ok(out)
    }

    pub fn write_line(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.writer, "{line}")
            .map_err(|e| CliError::io(format!("{}: {e}", self.path.display())))
    }

    /// Flushes and renames the staged file into place.
    pub fn finish(self) -> Result<(), CliError> {
        let path = self.path;
        let tmp = self
            .writer
            .into_inner()
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        tmp.persist(&path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

/// Rows destined either for a file (atomic) or stdout.
pub enum CsvSink {
    File(AtomicCsv),
    Stdout,
}

impl CsvSink {
    pub fn create(path: Option<&Path>, header: &str) -> Result<Self, CliError> {
        match path {
            Some(path) => Ok(CsvSink::File(AtomicCsv::create(path, header)?)),
            None => {
                println!("{header}");
                Ok(CsvSink::Stdout)
            }
        }
    }

    pub fn write_line(&mut self, line: &str) -> Result<(), CliError> {
        match self {
            CsvSink::File(f) => f.write_line(line),
            CsvSink::Stdout => {
                println!("{line}");
                Ok(())
            }
        }
    }

    pub fn finish(self) -> Result<(), CliError> {
        match self {
            CsvSink::File(f) => f.finish(),
            CsvSink::Stdout => Ok(()),
        }
    }
}
