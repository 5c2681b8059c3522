use std::path::Path;

use anyhow::{bail, Context, Result};

/// One CSV row. `values` is `Err` when a field is not a number, so the row
/// can be reported as a per-sample failure.
pub struct SampleRow {
    pub line: u64,
    pub values: Result<Vec<f64>, String>,
}

/// Reads comma-separated samples, one per row. A first row that does not
/// parse as numbers is taken as a header.
pub fn read_samples(path: &Path) -> Result<Vec<SampleRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open samples file {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = parse_record(&record).map_err(|(col, field)| {
            format!("{} line {line}, column {col}: '{field}' is not a number", path.display())
        });
        if i == 0 && values.is_err() {
            continue;
        }
        rows.push(SampleRow { line, values });
    }
    Ok(rows)
}

fn parse_record(record: &csv::StringRecord) -> Result<Vec<f64>, (usize, String)> {
    record
        .iter()
        .enumerate()
        .map(|(col, field)| field.parse::<f64>().map_err(|_| (col + 1, field.to_string())))
        .collect()
}

pub fn read_text(path: &Path, what: &str) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {what} file {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("{what} file {} is empty", path.display());
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rows(text: &str) -> Vec<SampleRow> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        read_samples(f.path()).unwrap()
    }

    #[test]
    fn header_is_optional() {
        let a = rows("x0,x1\n1,2\n3,4\n");
        let b = rows("1,2\n3,4\n");
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);
        assert_eq!(a[1].values.as_ref().unwrap(), &vec![3.0, 4.0]);
        assert_eq!(a[1].line, 3);
    }

    #[test]
    fn bad_field_is_reported_per_row() {
        let r = rows("1,2\n3,abc\n5\n");
        assert_eq!(r.len(), 3);
        let e = r[1].values.as_ref().unwrap_err();
        assert!(e.contains("line 2, column 2"), "{e}");
        assert_eq!(r[2].values.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn empty_file_has_no_rows() {
        assert!(rows("").is_empty());
        assert!(rows("x0,x1\n").is_empty());
    }
}
