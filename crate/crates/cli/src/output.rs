use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, EXIT_OUTPUT_EXISTS};

/// A run directory that did not exist before this run.
pub struct OutDir {
    path: PathBuf,
}

impl OutDir {
    pub fn refuse_existing(path: &Path) -> Result<(), CliError> {
        if path.exists() {
            return Err(exists(path));
        }
        Ok(())
    }

    pub fn create(path: &Path) -> Result<Self, CliError> {
        Self::refuse_existing(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        match fs::create_dir(path) {
            Ok(()) => Ok(Self { path: path.to_path_buf() }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(exists(path)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn bytes(&self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let mut f = fs::OpenOptions::new().write(true).create_new(true).open(self.path.join(name))?;
        f.write_all(data)?;
        Ok(())
    }

    pub fn text(&self, name: &str, data: &str) -> Result<(), CliError> {
        self.bytes(name, data.as_bytes())
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.text(name, &s)
    }

    pub fn json_lines<T: Serialize>(&self, name: &str, values: &[T]) -> Result<(), CliError> {
        let mut s = String::new();
        for v in values {
            s.push_str(&serde_json::to_string(v).expect("record serializes"));
            s.push('\n');
        }
        self.text(name, &s)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::new(crate::error::EXIT_FAILURE, format!("csv: {e}"));
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let data = w.into_inner().map_err(|e| CliError::new(crate::error::EXIT_FAILURE, format!("csv: {e}")))?;
        self.bytes(name, &data)
    }
}

fn exists(path: &Path) -> CliError {
    CliError::new(
        EXIT_OUTPUT_EXISTS,
        format!("output directory {} already exists; outputs are never overwritten", path.display()),
    )
}

/// Shortest round-trip representation; empty for missing values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
