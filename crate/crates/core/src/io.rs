//! File formats.
//!
//! A tail curve is one CSV file: a `#`-prefixed JSON header line
//! `{"ell":..,"n":..,"seed":..}` followed by the columns `y,survival,stderr`.
//! Floats are written in shortest round-trip form, so a saved curve reloads
//! bit-identically.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::estimators::TailCurve;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveHeader {
    pub ell: f64,
    pub n: u64,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    y: f64,
    survival: f64,
    stderr: f64,
}

pub fn write_curve<W: Write>(curve: &TailCurve, mut out: W) -> Result<()> {
    let header = CurveHeader { ell: curve.ell, n: curve.n_replicas, seed: curve.seed };
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;
    let mut w = csv::Writer::from_writer(out);
    for k in 0..curve.grid.len() {
        w.serialize(CurveRow { y: curve.grid[k], survival: curve.survival[k], stderr: curve.stderr[k] })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curve; survival values pass through the isotonic correction again.
pub fn read_curve<R: Read>(input: R) -> Result<TailCurve> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let json = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::domain("tail curve file must start with a '# {json}' header"))?;
    let header: CurveHeader = serde_json::from_str(json.trim())?;
    let mut r = csv::Reader::from_reader(reader);
    let (mut grid, mut raw) = (Vec::new(), Vec::new());
    for row in r.deserialize() {
        let row: CurveRow = row?;
        grid.push(row.y);
        raw.push(row.survival);
    }
    TailCurve::from_raw(header.ell, grid, raw, header.n, header.seed)
}

pub fn save_curve(curve: &TailCurve, path: &Path) -> Result<()> {
    write_curve(curve, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_curve(path: &Path) -> Result<TailCurve> {
    read_curve(std::fs::File::open(path)?)
}

/// Writes `value` as one JSON line.
pub fn write_json_line<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}
