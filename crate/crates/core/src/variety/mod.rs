//! Variety of dropout-noised generations against the noise-free baseline.

mod compare;
mod distance;
mod matrix;
mod report;

pub use compare::{brown_forsythe, compare_placements, CellComparison, DispersionTest, PlacementComparison, ALPHA};
pub use distance::{euclidean_distance, items, mean_pairwise_distance, slice_distance};
pub use matrix::{
    cell_distances, cell_label, matrix_latents, run_matrix, variety_std, CellSpec, CheckpointRef, ExperimentMatrix,
    GridModel, Reading, Scaling, VarietyCell, VarietyReport, P_GRID,
};
pub use report::{
    distances_file_name, distortion_observation, load_report, read_distances, write_report, DistortionObservation,
    DistortionRow, DISTANCES_DIR, PROVENANCE_FILE, TABLE_FILE,
};

use thiserror::Error;

use crate::io::IoError;
use crate::models::{ModelError, Placement};

#[derive(Debug, Error)]
pub enum VarietyError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid experiment: {0}")]
    Invalid(String),

    #[error("no checkpoint for training p {p_train} (cell generation p {p_dropout}, placement {placement:?})")]
    MissingCheckpoint { p_train: f64, p_dropout: f64, placement: Placement },

    #[error("reports cover different grids: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] IoError),
}

/// Population standard deviation and mean.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
