//! Result files: JSON documents, the per-point CSV and run manifests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tracemix::prony::GateOutcome;
use tracemix::recovery::RecoveryResult;

use crate::config::{Mode, Settings};
use crate::CliError;

pub const CSV_HEADER: [&str; 9] = [
    "index",
    "arg_z",
    "re_z",
    "im_z",
    "gate",
    "gate_pass_rate",
    "k",
    "residual",
    "std_err",
];

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Sibling CSV path of a JSON result.
pub fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

fn gate_label(g: Option<GateOutcome>) -> &'static str {
    match g {
        None => "",
        Some(GateOutcome::Yes) => "yes",
        Some(GateOutcome::NoSingular) => "no:singular",
        Some(GateOutcome::NoDet) => "no:det",
    }
}

/// Writes `result` as JSON at `path` and one CSV row per grid point and
/// moment order next to it.
pub fn emit_report(result: &RecoveryResult, path: &Path) -> Result<(), CliError> {
    write_json(path, result)?;
    let csv_file = csv_path(path);
    let io = |e: csv::Error| CliError::io(&csv_file, e.into());
    let mut w = csv::Writer::from_path(&csv_file).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for point in &result.diagnostics.points {
        for (k, (res, se)) in point.residuals.iter().zip(&point.std_errs).enumerate() {
            w.write_record([
                point.index.to_string(),
                point.z.arg().to_string(),
                point.z.re.to_string(),
                point.z.im.to_string(),
                gate_label(point.gate).to_string(),
                point.gate_pass_rate.to_string(),
                k.to_string(),
                res.to_string(),
                se.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&csv_file, e))
}

/// Everything needed to replay a run.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    /// Merged settings; pass this file back with `--config` to rerun.
    pub settings: &'a Settings,
    pub resolved: &'a R,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl<'a, R: Serialize> Manifest<'a, R> {
    pub fn new(mode: Mode, seed: u64, settings: &'a Settings, resolved: &'a R) -> Self {
        let inputs = ["dist", "traces"].into_iter().filter_map(|k| settings.path(k)).collect();
        Self {
            tool: "tracemix",
            version: env!("CARGO_PKG_VERSION"),
            core_version: tracemix::VERSION,
            mode: mode.name(),
            seed,
            settings,
            resolved,
            inputs,
            outputs: Vec::new(),
        }
    }

    /// Manifest path for a primary output, `<out>.manifest.json`.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Records `outputs` and writes the manifest next to the first one.
    pub fn write_beside(mut self, outputs: Vec<PathBuf>) -> Result<PathBuf, CliError> {
        let path = Self::path_for(&outputs[0]);
        self.outputs = outputs;
        write_json(&path, &self)?;
        Ok(path)
    }
}
