//! CSV ingestion: header row, numeric columns, UTF-8. Empty fields, `NA`,
//! and `NaN` (any case) are missing values.

use crate::error::Error;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct DataTable {
    pub columns: Vec<String>,
    /// Row-major; `None` marks a missing value.
    pub rows: Vec<Vec<Option<f64>>>,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan")
}

impl DataTable {
    pub fn read_csv_path(path: &Path) -> Result<Self, Error> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader<R: std::io::Read>(reader: R, source: &str) -> Result<Self, Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(format!("{source}: {e}")))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if columns.is_empty() {
            return Err(Error::Data(format!("{source}: no header row")));
        }
        let mut rows = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{source}: {e}")))?;
            let mut row = Vec::with_capacity(columns.len());
            for (j, field) in record.iter().enumerate() {
                if is_missing(field) {
                    row.push(None);
                } else {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::Data(format!(
                            "{source}: row {}, column `{}`: cannot parse `{}` as a number",
                            idx + 2,
                            columns.get(j).map(String::as_str).unwrap_or("?"),
                            field
                        ))
                    })?;
                    row.push(Some(v));
                }
            }
            if row.len() != columns.len() {
                return Err(Error::Data(format!(
                    "{source}: row {} has {} fields, expected {}",
                    idx + 2,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(DataTable { columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}
