//! Line-delimited JSON transaction files, one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{GdgmError, Result};
use crate::graph::TransactionRecord;

pub fn save_transactions(records: &[TransactionRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| GdgmError::InvalidArgument(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load records; every record must have the feature width of the first.
pub fn load_transactions(path: &Path) -> Result<Vec<TransactionRecord>> {
    load_impl(path, None)
}

/// Load records, requiring exactly `width` features per record.
pub fn load_transactions_with_width(path: &Path, width: usize) -> Result<Vec<TransactionRecord>> {
    load_impl(path, Some(width))
}

fn load_impl(path: &Path, width: Option<usize>) -> Result<Vec<TransactionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<TransactionRecord> = Vec::new();
    let mut width = width;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: TransactionRecord =
            serde_json::from_str(&line).map_err(|e| GdgmError::Parse { line: lineno, msg: e.to_string() })?;
        let expected = *width.get_or_insert(rec.features.len());
        if rec.features.len() != expected {
            return Err(GdgmError::Parse {
                line: lineno,
                msg: format!("{} features, expected {expected}", rec.features.len()),
            });
        }
        if let Some(y) = rec.label.filter(|&y| y > 1) {
            return Err(GdgmError::Parse { line: lineno, msg: format!("label {y} outside {{0,1}}") });
        }
        out.push(rec);
    }
    Ok(out)
}
