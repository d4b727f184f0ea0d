//! CSV input of complete samples and incomplete records, and output of the
//! imputed table with its sidecar report.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::DataMatrix;
use crate::predictor::{PredictionResult, PredictionTask};

pub const DEFAULT_MISSING_MARKERS: [&str; 3] = ["", "NA", "NaN"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub missing_markers: Vec<String>,
    pub header: bool,
    #[serde(with = "delimiter_char")]
    pub delimiter: u8,
}

mod delimiter_char {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &u8, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&char::from(*d).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u8, D::Error> {
        let text = String::deserialize(d)?;
        match text.as_bytes() {
            [b] => Ok(*b),
            _ => Err(serde::de::Error::custom("delimiter must be a single byte")),
        }
    }
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_markers: DEFAULT_MISSING_MARKERS.iter().map(|s| s.to_string()).collect(),
            header: true,
            delimiter: b',',
        }
    }
}

/// A parsed table. Missing cells hold `NaN` in `rows` and `true` in the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub missing_mask: Vec<Vec<bool>>,
    pub header: bool,
}

impl Dataset {
    pub fn ncols(&self) -> usize {
        self.column_names.len()
    }

    pub fn is_complete(&self, row: usize) -> bool {
        !self.missing_mask[row].iter().any(|&m| m)
    }

    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.is_complete(i)).collect()
    }

    pub fn incomplete_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.is_complete(i)).collect()
    }

    /// The complete samples as a data matrix.
    pub fn complete_matrix(&self) -> DataMatrix {
        let keep = self.complete_rows();
        let values = DMatrix::from_fn(keep.len(), self.ncols(), |i, j| self.rows[keep[i]][j]);
        DataMatrix::new(self.column_names.clone(), values)
            .expect("row width matches the header")
    }

    /// The prediction task for an incomplete row.
    pub fn task(&self, row: usize) -> Result<PredictionTask> {
        let record: Vec<Option<f64>> = self.rows[row]
            .iter()
            .zip(&self.missing_mask[row])
            .map(|(&v, &missing)| (!missing).then_some(v))
            .collect();
        PredictionTask::from_record(&record)
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, options)
}

/// Parses a table. Row numbers in errors count data rows from 1.
pub fn parse_csv<R: Read>(input: R, options: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(options.delimiter)
        .from_reader(input);
    let mut records = reader.records();

    let mut column_names: Option<Vec<String>> = None;
    if options.header {
        match records.next() {
            Some(rec) => {
                column_names = Some(rec?.iter().map(|s| s.trim().to_string()).collect());
            }
            None => return Err(Error::NoCompleteRows),
        }
    }

    let mut rows = Vec::new();
    let mut mask = Vec::new();
    for (idx, rec) in records.enumerate() {
        let rec = rec?;
        let row_no = idx + 1;
        let names = column_names
            .get_or_insert_with(|| (0..rec.len()).map(|j| format!("c{j}")).collect());
        if rec.len() != names.len() {
            return Err(Error::Ragged {
                row: row_no,
                expected: names.len(),
                found: rec.len(),
            });
        }
        let mut values = Vec::with_capacity(rec.len());
        let mut missing = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if options.missing_markers.iter().any(|m| m == cell) {
                values.push(f64::NAN);
                missing.push(true);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    values.push(v);
                    missing.push(false);
                }
                _ => {
                    return Err(Error::Parse {
                        row: row_no,
                        column: names[j].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        if missing.iter().all(|&m| m) {
            return Err(Error::EmptyRow(row_no));
        }
        rows.push(values);
        mask.push(missing);
    }

    let dataset = Dataset {
        column_names: column_names.unwrap_or_default(),
        rows,
        missing_mask: mask,
        header: options.header,
    };
    if dataset.complete_rows().is_empty() {
        return Err(Error::NoCompleteRows);
    }
    Ok(dataset)
}

/// Up to 12 significant digits, printed in shortest round-trip form.
pub fn format_number(value: f64) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let rounded: f64 = format!("{value:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

pub const REPORT_FORMAT: &str = "pcadist-imputation-report";

/// Sidecar entry for one imputed row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    /// Data row number, counted from 1.
    pub row: usize,
    pub imputed: BTreeMap<String, f64>,
    pub t_pred: Vec<f64>,
    pub distance: f64,
    pub unique: bool,
    pub distance_invariant: bool,
    pub intersects: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub format: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<RowReport>,
}

/// Path of the JSON report written next to an imputed CSV.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("report.json")
}

fn build_report(dataset: &Dataset, results: &BTreeMap<usize, PredictionResult>) -> ImputationReport {
    let rows = results
        .iter()
        .map(|(&row, r)| RowReport {
            row: row + 1,
            imputed: r
                .imputed
                .iter()
                .map(|(&j, &v)| (dataset.column_names[j].clone(), v))
                .collect(),
            t_pred: r.t_pred.clone(),
            distance: r.distance,
            unique: r.unique,
            distance_invariant: r.distance_invariant,
            intersects: r.intersects(),
        })
        .collect();
    ImputationReport {
        format: REPORT_FORMAT.to_string(),
        version: 1,
        columns: dataset.column_names.clone(),
        rows,
    }
}

/// Writes the table with every missing cell filled from `results` (keyed by
/// row index), in input order.
pub fn write_imputed_csv<W: Write>(
    dataset: &Dataset,
    results: &BTreeMap<usize, PredictionResult>,
    out: W,
    delimiter: u8,
) -> Result<()> {
    for row in dataset.incomplete_rows() {
        if !results.contains_key(&row) {
            return Err(Error::InvalidArgument(format!(
                "no prediction for incomplete row {}",
                row + 1
            )));
        }
    }
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    if dataset.header {
        w.write_record(&dataset.column_names)?;
    }
    for (i, row) in dataset.rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if dataset.missing_mask[i][j] {
                    format_number(results[&i].imputed[&j])
                } else {
                    format_number(v)
                }
            })
            .collect();
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes the imputed CSV to `path` and its report to [`sidecar_path`].
pub fn write_imputed(
    dataset: &Dataset,
    results: &BTreeMap<usize, PredictionResult>,
    path: impl AsRef<Path>,
    delimiter: u8,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_imputed_csv(dataset, results, file, delimiter)?;
    let report = build_report(dataset, results);
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(&side, text).map_err(|e| Error::io(side, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_csv(text.as_bytes(), &CsvOptions::default())
    }

    fn parse_headerless(text: &str) -> Result<Dataset> {
        let opts = CsvOptions {
            header: false,
            ..Default::default()
        };
        parse_csv(text.as_bytes(), &opts)
    }

    #[test]
    fn splits_complete_and_incomplete_rows() {
        let ds = parse_headerless("1,2\n2,4\n3,\n").unwrap();
        assert_eq!(ds.complete_rows(), vec![0, 1]);
        assert_eq!(ds.incomplete_rows(), vec![2]);
        assert_eq!(ds.complete_matrix().nrows(), 2);
        assert_eq!(ds.task(2).unwrap().missing(), &[1]);
    }

    #[test]
    fn custom_marker() {
        let opts = CsvOptions {
            missing_markers: vec!["NA".into()],
            ..Default::default()
        };
        let ds = parse_csv("x,y\n1,2\n2,NA\n".as_bytes(), &opts).unwrap();
        assert!(ds.missing_mask[1][1]);
        assert!(ds.rows[1][1].is_nan());
    }

    #[test]
    fn parse_error_names_cell() {
        let err = parse("x,y\n1,abc\n").unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "y", "abc"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_and_empty_inputs() {
        assert!(matches!(
            parse("x,y\n1,2\n3\n"),
            Err(Error::Ragged { row: 2, expected: 2, found: 1 })
        ));
        assert!(matches!(parse("x,y\n1,\n"), Err(Error::NoCompleteRows)));
        assert!(matches!(parse("x,y\n1,2\n,NA\n"), Err(Error::EmptyRow(2))));
        assert!(matches!(parse("x,y\n1,inf\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(8.0), "8");
        assert_eq!(format_number(0.1 + 0.2), "0.3");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(-0.0), "0");
    }

    #[test]
    fn write_without_imputations_keeps_values() {
        let text = "x,y\n1.5,2\n-3,4.25\n";
        let ds = parse(text).unwrap();
        let mut out = Vec::new();
        write_imputed_csv(&ds, &BTreeMap::new(), &mut out, b',').unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn only_the_missing_cell_changes() {
        let ds = parse("x,y\n1,2\n2,4\n4,\n").unwrap();
        let result = PredictionResult {
            imputed: [(1, 8.0)].into_iter().collect(),
            t_pred: vec![1.0],
            distance: 0.0,
            unique: true,
            distance_invariant: false,
        };
        let results = [(2, result)].into_iter().collect();
        let mut out = Vec::new();
        write_imputed_csv(&ds, &results, &mut out, b',').unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y\n1,2\n2,4\n4,8\n");
    }

    #[test]
    fn missing_result_is_an_error() {
        let ds = parse("x,y\n1,2\n4,\n").unwrap();
        let mut out = Vec::new();
        assert!(write_imputed_csv(&ds, &BTreeMap::new(), &mut out, b',').is_err());
    }

    #[test]
    fn sidecar_carries_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let ds = parse("x,y\n1,2\n2,4\n4,\n").unwrap();
        let result = PredictionResult {
            imputed: [(1, 3.0)].into_iter().collect(),
            t_pred: vec![0.0],
            distance: 0.5,
            unique: false,
            distance_invariant: true,
        };
        write_imputed(&ds, &[(2, result)].into_iter().collect(), &path, b',').unwrap();
        let report: ImputationReport =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].row, 3);
        assert!(report.rows[0].distance_invariant);
        assert!(!report.rows[0].unique);
        assert_eq!(report.rows[0].imputed["y"], 3.0);
    }

    #[test]
    fn unwritable_path_errors() {
        let ds = parse("x,y\n1,2\n").unwrap();
        let err = write_imputed(&ds, &BTreeMap::new(), "/nonexistent/dir/out.csv", b',');
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
