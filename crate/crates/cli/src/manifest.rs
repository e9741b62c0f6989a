use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use gradnetot_core::numfmt::{fmt_f64, to_json_exact_pretty};
use gradnetot_core::DenseVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Record of one command invocation, written as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Effective configuration after command-line overrides.
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
    /// Every file the run wrote, the manifest included.
    pub outputs: Vec<PathBuf>,
    pub metrics: serde_json::Value,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn output(&self, name: &str) -> Option<&Path> {
        self.outputs
            .iter()
            .find(|p| p.file_name().is_some_and(|f| f == name))
            .map(PathBuf::as_path)
    }
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects output paths and warnings while a command runs.
pub(crate) struct Run {
    dir: PathBuf,
    started_at: String,
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started_at: now(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Path for a new output file, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn finish<C: Serialize>(
        mut self,
        command: &str,
        seed: u64,
        config: &C,
        metrics: serde_json::Value,
    ) -> CliResult<RunManifest> {
        let path = self.file("manifest.json");
        let manifest = RunManifest {
            command: command.to_owned(),
            version: version_string(),
            seed,
            config: serde_json::to_value(config)?,
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
            metrics,
            warnings: self.warnings,
        };
        fs::write(&path, to_json_exact_pretty(&manifest)?).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Writes a header row and then one record per row, reals at 17 significant
/// digits.
pub(crate) fn write_csv<I>(path: &Path, header: &[String], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<Cell>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) enum Cell {
    Real(f64),
    Int(usize),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Real(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Header `prefix0, prefix1, …` for a point of dimension `dim`.
pub(crate) fn coord_header(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("{prefix}{k}")).collect()
}

/// Rows of concatenated point coordinates, one row per index.
pub(crate) fn point_rows<'a>(columns: &'a [&'a [DenseVector]]) -> impl Iterator<Item = Vec<Cell>> + 'a {
    let n = columns.first().map_or(0, |c| c.len());
    (0..n).map(move |i| {
        columns
            .iter()
            .flat_map(|c| c[i].as_slice().iter().map(|&v| Cell::Real(v)))
            .collect()
    })
}
