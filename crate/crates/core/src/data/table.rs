use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Task};
use crate::error::{io_error, Error, Location, Result};
use crate::linalg::Matrix;

/// How to split CSV columns into inputs and targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSpec {
    /// Zero-based target columns; empty means the last column.
    pub target_columns: Vec<usize>,
    /// `None` detects a header by whether the first row parses as numbers.
    pub header: Option<bool>,
    /// Treat the single target column as integer class labels.
    pub classes: Option<usize>,
}

fn format_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location: Location::Line(line),
        message: message.into(),
    }
}

pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(io_error(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut first = true;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        let is_header = first && spec.header.unwrap_or(parsed.is_err());
        first = false;
        if is_header {
            continue;
        }
        let values = parsed.map_err(|e| format_error(path, line, format!("not a number: {e}")))?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(format_error(
                    path,
                    line,
                    format!("row has {} fields, expected {w}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push(values);
    }
    let width = width.ok_or_else(|| format_error(path, 1, "no data rows"))?;
    let targets: Vec<usize> = if spec.target_columns.is_empty() {
        vec![width - 1]
    } else {
        spec.target_columns.clone()
    };
    if let Some(&bad) = targets.iter().find(|&&c| c >= width) {
        return Err(Error::Argument(format!(
            "target column {bad} out of range for {width} columns"
        )));
    }
    let inputs_cols: Vec<usize> = (0..width).filter(|c| !targets.contains(c)).collect();
    if inputs_cols.is_empty() {
        return Err(Error::Argument(
            "no input columns left after removing targets".into(),
        ));
    }
    let pick = |cols: &[usize]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect()
    };
    let inputs = Matrix::from_rows(&pick(&inputs_cols))?;
    let meta = DatasetMeta {
        source: format!("csv:{}", path.display()),
        ..DatasetMeta::default()
    };
    let ds = match spec.classes {
        Some(classes) => {
            if targets.len() != 1 {
                return Err(Error::Argument(
                    "classification needs exactly one label column".into(),
                ));
            }
            let labels = rows
                .iter()
                .map(|r| {
                    let v = r[targets[0]];
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Argument(format!("label {v} is not a class index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Dataset::from_labels(inputs, &labels, classes)?
        }
        None => Dataset::new(
            inputs,
            Matrix::from_rows(&pick(&targets))?,
            Task::Regression,
        )?,
    };
    Ok(ds.with_meta(meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn last_column_is_target_by_default() {
        let (_d, p) = file("1,2,3\n4,5,6");
        let ds = load_csv(&p, &CsvSpec::default()).unwrap();
        assert_eq!(
            ds.inputs,
            Matrix::from_rows(&[[1.0, 2.0], [4.0, 5.0]]).unwrap()
        );
        assert_eq!(ds.targets, Matrix::from_rows(&[[3.0], [6.0]]).unwrap());
    }

    #[test]
    fn header_is_detected_and_labels_parsed() {
        let (_d, p) = file("x,y,label\n0.5,1.5,1\n-1,2,0\n");
        let spec = CsvSpec {
            classes: Some(2),
            ..CsvSpec::default()
        };
        let ds = load_csv(&p, &spec).unwrap();
        assert_eq!(ds.labels().unwrap(), vec![1, 0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let (_d, p) = file("1,2,3\n4,5\n");
        match load_csv(&p, &CsvSpec::default()) {
            Err(Error::Format { location, .. }) => assert_eq!(location, Location::Line(2)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn explicit_target_columns() {
        let (_d, p) = file("1,2,3\n4,5,6\n");
        let spec = CsvSpec {
            target_columns: vec![0, 2],
            ..CsvSpec::default()
        };
        let ds = load_csv(&p, &spec).unwrap();
        assert_eq!(ds.inputs.column(0), vec![2.0, 5.0]);
        assert_eq!(
            ds.targets,
            Matrix::from_rows(&[[1.0, 3.0], [4.0, 6.0]]).unwrap()
        );
    }
}
