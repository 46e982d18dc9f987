//! Matrix serialisation.
//!
//! Binary layout (little endian):
//!
//! | offset | size          | content              |
//! |--------|---------------|----------------------|
//! | 0      | 4             | magic `b"SCSM"`      |
//! | 4      | 4             | `u32` rows           |
//! | 8      | 4             | `u32` cols           |
//! | 12     | 8·rows·cols   | `f64` row-major data |
//!
//! CSV output is one matrix row per line, no header, values printed with
//! round-trip precision.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, ScsError};

pub const MAGIC: &[u8; 4] = b"SCSM";

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(12 + 8 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(ScsError::Format("missing SCSM header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(ScsError::Format(format!(
            "SCSM payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_scsm(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(m))?;
    Ok(())
}

pub fn read_scsm(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| ScsError::Format(format!("line {}: {e}", lineno + 1)))?;
        match cols {
            None => cols = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(ScsError::Format(format!(
                    "line {} has {} columns, expected {c}",
                    lineno + 1,
                    vals.len()
                )))
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

pub fn write_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, to_csv(m))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    from_csv(&fs::read_to_string(path)?)
}
