//! Reading and writing the pipeline's files with path-aware errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use sarvb::io::{read_dataset, read_key_values, read_weights, write_key_values};
use sarvb::{Dataset, Result as SarResult, SarError};

use crate::config::Config;
use crate::error::CliError;

fn wrap(path: &Path, e: SarError) -> CliError {
    match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(path.display(), e))
}

pub fn read_with<T>(path: &Path, read: impl FnOnce(BufReader<File>) -> SarResult<T>) -> Result<T, CliError> {
    read(open(path)?).map_err(|e| wrap(path, e))
}

pub fn write_with(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> SarResult<()>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::data(parent.display(), e))?;
    }
    let file = File::create(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut out = BufWriter::new(file);
    write(&mut out).map_err(|e| wrap(path, e))?;
    out.flush().map_err(|e| CliError::data(path.display(), e))
}

/// Reads the dataset and weights named by the `data` and `weights` keys.
pub fn load_dataset(cfg: &Config) -> Result<Dataset, CliError> {
    let data_path = cfg.path("data");
    let weights_path = cfg.path("weights");
    let row_standardize: bool = cfg.get("row_standardize")?;
    let bytes = std::fs::read(&data_path).map_err(|e| CliError::data(data_path.display(), e))?;
    let n = csv::Reader::from_reader(bytes.as_slice())
        .records()
        .try_fold(0usize, |n, r| r.map(|_| n + 1))
        .map_err(|e| CliError::data(data_path.display(), e))?;
    let weights = read_with(&weights_path, |r| read_weights(r, n, row_standardize))?;
    read_dataset(bytes.as_slice(), Arc::new(weights)).map_err(|e| wrap(&data_path, e))
}

/// Ordered `key=value` record written beside every output.
#[derive(Debug, Default, Clone)]
pub struct Manifest(pub Vec<(String, String)>);

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn extend(&mut self, pairs: Vec<(String, String)>) {
        self.0.extend(pairs);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_with(path, |w| write_key_values(w, &self.0))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        read_with(path, read_key_values).map(Manifest)
    }

    pub fn get(&self, key: &str) -> Result<&str, CliError> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::Data(format!("manifest has no '{key}' entry")))
    }
}
