//! Subcommand implementations. Each writes its outputs under `out_dir` and
//! returns the manifest it wrote there.

use std::fs::File;
use std::io::BufWriter;

use gradnetot_core::training::TrainReport;
use gradnetot_core::DenseVector;

use crate::error::{CliError, CliResult};
use crate::manifest::{coord_header, point_rows, write_csv, Run};

mod gauss;
mod morph;
mod verify;

pub use gauss::{cmd_gauss2d, cmd_gauss_highdim};
pub use morph::{cmd_morph, time_label};
pub use verify::{cmd_verify, VerifyReport};

pub(crate) fn write_trace(run: &mut Run, name: &str, report: &TrainReport) -> CliResult<()> {
    let path = run.file(&format!("{name}_train.jsonl"));
    let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    report.write_jsonl(BufWriter::new(f)).map_err(|e| CliError::io(&path, e))
}

pub(crate) fn write_checkpoint(run: &mut Run, name: &str, report: &TrainReport) -> CliResult<()> {
    let path = run.file(&format!("{name}_checkpoint.json"));
    report.checkpoint.save(&path)?;
    Ok(())
}

pub(crate) fn write_map_csv(run: &mut Run, name: &str, xs: &[DenseVector], ys: &[DenseVector]) -> CliResult<()> {
    let dim = xs.first().map_or(0, DenseVector::dim);
    let mut header = coord_header("x", dim);
    header.extend(coord_header("y", dim));
    let path = run.file(&format!("{name}.csv"));
    write_csv(&path, &header, point_rows(&[xs, ys]))
}

