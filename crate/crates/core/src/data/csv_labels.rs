use std::collections::HashSet;
use std::path::Path;

use super::{DataError, Result};

/// Reads a multi-hot label table. The header names one class per column;
/// every header must be a known class and may appear once. Classes without
/// a column are all-zero.
pub fn load_labels_csv(path: &Path, class_names: &[String]) -> Result<Vec<Vec<u8>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut seen = HashSet::new();
    let mut columns = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let h = h.trim();
        let idx = class_names
            .iter()
            .position(|c| c == h)
            .ok_or_else(|| DataError::Invalid(format!("unknown class column {h:?}")))?;
        if !seen.insert(idx) {
            return Err(DataError::Invalid(format!("duplicated class column {h:?}")));
        }
        columns.push(idx);
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = vec![0u8; class_names.len()];
        for (cell, &idx) in record.iter().zip(&columns) {
            row[idx] = match cell.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(DataError::Invalid(format!(
                        "row {}: non-binary cell {other:?}",
                        line + 1
                    )))
                }
            };
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_labels_csv(path: &Path, class_names: &[String], rows: &[Vec<u8>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(class_names)?;
    for row in rows {
        w.write_record(row.iter().map(|b| b.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["a", "b", "c"].iter().map(|s| s.to_string()).collect()
    }

    fn load(text: &str) -> Result<Vec<Vec<u8>>> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        std::fs::write(&p, text).unwrap();
        load_labels_csv(&p, &names())
    }

    #[test]
    fn header_only_is_empty() {
        assert!(load("a,b,c\n").unwrap().is_empty());
    }

    #[test]
    fn rows_become_multi_hot() {
        assert_eq!(load("a,b,c\n1,0,1\n").unwrap(), vec![vec![1, 0, 1]]);
        assert_eq!(load("c,a\n1,0\n").unwrap(), vec![vec![0, 0, 1]]);
    }

    #[test]
    fn bad_headers_and_cells() {
        assert!(load("a,a,b\n1,0,1\n").is_err());
        assert!(load("a,z\n1,0\n").is_err());
        assert!(load("a,b,c\n1,2,0\n").is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let rows = vec![vec![1, 0, 1], vec![0, 0, 0]];
        write_labels_csv(&p, &names(), &rows).unwrap();
        assert_eq!(load_labels_csv(&p, &names()).unwrap(), rows);
    }
}
