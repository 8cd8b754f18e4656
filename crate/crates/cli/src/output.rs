//! Output directories, config sidecars and CSV/JSON writers.

use std::fs::File;
use std::path::{Path, PathBuf};

use interrupt_core::{rng, Error, Result};
use serde::Serialize;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    generator: &'a str,
    args: &'a T,
}

/// Creates `out` and writes the config sidecar into it.
pub fn prepare_out<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let sidecar = Sidecar { command, version: env!("CARGO_PKG_VERSION"), generator: rng::GENERATOR, args };
    write_json(&out.join(CONFIG_FILE), &sidecar)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")))
    }
}

pub fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// CSV writer that reports errors against its path.
pub struct Csv {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        inner.write_record(header).map_err(|e| csv_error(path, e))?;
        Ok(Csv { path: path.to_path_buf(), inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}
