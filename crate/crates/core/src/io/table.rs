//! Result tables: rows are generation p, columns training p.

use std::path::Path;

use super::{read_file, write_file, IoError};

pub const CORNER: &str = "generation p \\ training p";

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<f64>,
    pub row_labels: Vec<f64>,
    pub cells: Vec<Vec<f64>>,
}

impl Table {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col]
    }

    fn check(&self) -> Result<(), IoError> {
        if self.cells.len() != self.row_labels.len() {
            return Err(IoError::Table(format!("{} row labels for {} rows", self.row_labels.len(), self.cells.len())));
        }
        if let Some((i, r)) = self.cells.iter().enumerate().find(|(_, r)| r.len() != self.columns.len()) {
            return Err(IoError::Table(format!("row {i} has {} cells, expected {}", r.len(), self.columns.len())));
        }
        Ok(())
    }
}

/// Three decimals with trailing zeros removed; zero prints as `0`.
pub fn format_cell(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_owned(),
        other => other.to_owned(),
    }
}

pub fn write_csv_table(table: &Table, path: &Path) -> Result<(), IoError> {
    write_file(path, &table_bytes(table)?)
}

pub fn table_bytes(table: &Table) -> Result<Vec<u8>, IoError> {
    table.check()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![CORNER.to_owned()];
    header.extend(table.columns.iter().map(|&c| format_cell(c)));
    w.write_record(&header)?;
    for (label, row) in table.row_labels.iter().zip(&table.cells) {
        let mut rec = vec![format_cell(*label)];
        rec.extend(row.iter().map(|&v| format_cell(v)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| IoError::Table(e.to_string()))
}

fn number(s: &str) -> Result<f64, IoError> {
    s.trim().parse().map_err(|_| IoError::Table(format!("not a number: `{s}`")))
}

pub fn parse_table(bytes: &[u8]) -> Result<Table, IoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut records = r.records();
    let header = records.next().ok_or_else(|| IoError::Table("empty table".into()))??;
    let columns = header.iter().skip(1).map(number).collect::<Result<Vec<_>, _>>()?;
    let mut row_labels = Vec::new();
    let mut cells = Vec::new();
    for rec in records {
        let rec = rec?;
        let mut it = rec.iter();
        row_labels.push(number(it.next().unwrap_or(""))?);
        cells.push(it.map(number).collect::<Result<Vec<_>, _>>()?);
    }
    let t = Table { columns, row_labels, cells };
    t.check()?;
    Ok(t)
}

pub fn read_csv_table(path: &Path) -> Result<Table, IoError> {
    parse_table(&read_file(path)?)
}
