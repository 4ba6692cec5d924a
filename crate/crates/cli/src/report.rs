//! Small CSV tables written in one go.

use std::path::Path;

use crate::CliError;

pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let fail = |e: csv::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(fail)?;
        w.write_record(&self.header).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row).map_err(fail)?;
        }
        w.flush()
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }
}
