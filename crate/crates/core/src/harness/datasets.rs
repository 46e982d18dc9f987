//! Labeled vector tables.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::matrix_io;
use crate::model::{Provenance, SignalBatch};

/// Signals read from a headerless numeric CSV. When `label_column` is set,
/// that column is removed from the signals and its distinct values,
/// sorted ascending, become classes `0, 1, …`; the original values are
/// returned alongside.
pub fn read_labeled_csv(
    path: impl AsRef<Path>,
    label_column: Option<usize>,
) -> Result<(SignalBatch, Vec<f64>)> {
    let path = path.as_ref();
    let table = matrix_io::read_csv(path)?;
    let source = path.display().to_string();
    labeled_from_table(&table, label_column, &source)
}

pub fn labeled_from_table(
    table: &nalgebra::DMatrix<f64>,
    label_column: Option<usize>,
    source: &str,
) -> Result<(SignalBatch, Vec<f64>)> {
    let (rows, cols) = table.shape();
    if rows == 0 {
        return Err(invalid("table has no rows"));
    }
    let Some(lc) = label_column else {
        let signals = table.row_iter().map(|r| r.transpose()).collect();
        let batch = SignalBatch::new(
            signals,
            None,
            Provenance::Table {
                source: source.into(),
            },
        )?;
        return Ok((batch, Vec::new()));
    };
    if lc >= cols || cols < 2 {
        return Err(invalid(format!(
            "label column {lc} outside a {cols}-column table"
        )));
    }
    let mut values: Vec<f64> = table.column(lc).iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut signals = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for r in table.row_iter() {
        let v = r[lc];
        labels.push(values.partition_point(|&u| u < v));
        signals.push(DVector::from_iterator(
            cols - 1,
            r.iter()
                .enumerate()
                .filter(|&(j, _)| j != lc)
                .map(|(_, &x)| x),
        ));
    }
    let batch = SignalBatch::new(
        signals,
        Some(labels),
        Provenance::Table {
            source: source.into(),
        },
    )?;
    Ok((batch, values))
}
