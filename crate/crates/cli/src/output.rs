use std::fs::File;
use std::io::{self, BufWriter, Write};

use anyhow::Context;

use crate::Failure;

/// Buffered writer for `path`, or standard output for `-`. The file is
/// created immediately so an unwritable path fails before any work is done.
pub fn open(path: &str) -> Result<Box<dyn Write>, Failure> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let f = File::create(path)
        .with_context(|| format!("cannot open output {path}"))
        .map_err(Failure::Io)?;
    Ok(Box::new(BufWriter::new(f)))
}

/// 17 significant digits, period decimal separator.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_writer(path: &str) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    Ok(csv::Writer::from_writer(open(path)?))
}

pub fn io_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Io(e.into())
}
