//! Report persistence: table CSV, provenance JSON and raw distances.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellSpec, VarietyError, VarietyReport};
use crate::io::{read_file, table_bytes, write_file, IoError};
use crate::models::Placement;

pub const TABLE_FILE: &str = "table.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const DISTANCES_DIR: &str = "distances";

fn placement_tag(p: Placement) -> &'static str {
    match p {
        Placement::None => "none",
        Placement::AllHidden => "all",
        Placement::FirstHiddenOnly => "first",
    }
}

pub fn distances_file_name(spec: &CellSpec) -> String {
    format!(
        "train{}_gen{}_scale{}_{}.txt",
        spec.p_train.get(),
        spec.p_dropout.get(),
        spec.p_scale.get(),
        placement_tag(spec.placement)
    )
}

/// Writes `table.csv`, `provenance.json` and one distance file per cell.
pub fn write_report(report: &VarietyReport, dir: &Path) -> Result<(), VarietyError> {
    write_file(&dir.join(TABLE_FILE), &table_bytes(&report.table())?)?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| IoError::Header(e.to_string()))?;
    write_file(&dir.join(PROVENANCE_FILE), &json)?;
    for cell in report.cells() {
        let mut text = String::with_capacity(cell.distances.len() * 20);
        for d in &cell.distances {
            writeln!(text, "{d}").expect("write to string");
        }
        write_file(&dir.join(DISTANCES_DIR).join(distances_file_name(&cell.spec)), text.as_bytes())?;
    }
    Ok(())
}

/// Raw distances of one cell as persisted by [`write_report`].
pub fn read_distances(dir: &Path, spec: &CellSpec) -> Result<Vec<f64>, VarietyError> {
    let bytes = read_file(&dir.join(DISTANCES_DIR).join(distances_file_name(spec)))?;
    let text = String::from_utf8(bytes).map_err(|e| IoError::Table(e.to_string()))?;
    text.lines()
        .map(|l| l.parse::<f64>().map_err(|_| VarietyError::Io(IoError::Table(format!("bad distance `{l}`")))))
        .collect()
}

/// Reloads a report with its raw distances.
pub fn load_report(dir: &Path) -> Result<VarietyReport, VarietyError> {
    let bytes = read_file(&dir.join(PROVENANCE_FILE))?;
    let mut report: VarietyReport = serde_json::from_slice(&bytes).map_err(|e| IoError::Header(e.to_string()))?;
    for cell in report.cells.iter_mut().flatten() {
        cell.distances = read_distances(dir, &cell.spec)?;
        if cell.distances.len() != cell.samples() {
            return Err(VarietyError::Invalid(format!(
                "{}: {} distances, expected {}",
                distances_file_name(&cell.spec),
                cell.distances.len(),
                cell.samples()
            )));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionRow {
    pub p_generation: f64,
    pub no_dropout_std: f64,
    /// `(p_train, std)` of the dropout-trained models.
    pub dropout_trained: Vec<(f64, f64)>,
    pub exceeds_all: bool,
    /// Dropout-trained model whose std is nearest the no-dropout model's.
    pub nearest_p_train: Option<f64>,
}

/// How the model trained without dropout compares with dropout-trained
/// models at each positive generation p. Recorded, not gated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionObservation {
    pub rows: Vec<DistortionRow>,
}

pub fn distortion_observation(report: &VarietyReport) -> Option<DistortionObservation> {
    let base = report.matrix.p_train.iter().position(|p| p.is_zero())?;
    let rows = report
        .cells
        .iter()
        .filter(|row| !row[base].spec.p_dropout.is_zero())
        .map(|row| {
            let no_dropout_std = row[base].std;
            let dropout_trained: Vec<(f64, f64)> =
                row.iter().enumerate().filter(|(j, _)| *j != base).map(|(_, c)| (c.spec.p_train.get(), c.std)).collect();
            let nearest_p_train = dropout_trained
                .iter()
                .min_by(|a, b| (a.1 - no_dropout_std).abs().total_cmp(&(b.1 - no_dropout_std).abs()))
                .map(|&(p, _)| p);
            DistortionRow {
                p_generation: row[base].spec.p_dropout.get(),
                no_dropout_std,
                exceeds_all: dropout_trained.iter().all(|&(_, s)| no_dropout_std > s),
                dropout_trained,
                nearest_p_train,
            }
        })
        .collect();
    Some(DistortionObservation { rows })
}
