use dropnoise_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{mean_std, slice_distance, items, VarietyError};
use crate::io::Table;
use crate::models::{generate, sample_latents, GenerationConfig, Placement};
use crate::nn::{LayerStack, MaskRng, Probability};
use crate::rng::{derive_seed, prob_label, stream_rng, StreamId};

/// Training and generation dropout grid.
pub const P_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Latents per generator forward pass.
const CHUNK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// `p_scale = p_dropout`.
    Matched,
    /// `p_scale = 0`.
    None,
}

impl Scaling {
    pub fn p_scale(self, p_dropout: Probability) -> Probability {
        match self {
            Scaling::Matched => p_dropout,
            Scaling::None => Probability::ZERO,
        }
    }
}

/// Which statistic a report's table shows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reading {
    /// Standard deviation over all N·R distances.
    #[default]
    AllDistances,
    /// Standard deviation over the R per-repeat sums of N distances.
    RepeatSums,
}

/// One generator cell of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub p_train: Probability,
    pub p_dropout: Probability,
    pub p_scale: Probability,
    pub placement: Placement,
}

impl CellSpec {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig::new(self.p_dropout, self.p_scale, self.placement)
    }
}

fn placement_label(p: Placement) -> u64 {
    match p {
        Placement::None => 0,
        Placement::AllHidden => 1,
        Placement::FirstHiddenOnly => 2,
    }
}

/// Seed label of a cell's mask substream.
pub fn cell_label(spec: &CellSpec) -> [u64; 4] {
    [prob_label(spec.p_train.get()), prob_label(spec.p_dropout.get()), prob_label(spec.p_scale.get()), placement_label(spec.placement)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarietyCell {
    pub spec: CellSpec,
    pub n: usize,
    pub r: usize,
    pub std: f64,
    pub mean: f64,
    /// Standard deviation of the R sums (alternate reading).
    pub std_of_sums: f64,
    /// Distances in repeat-major order (`r·N + i`).
    #[serde(skip)]
    pub distances: Vec<f64>,
}

impl VarietyCell {
    pub fn from_distances(spec: CellSpec, n: usize, r: usize, distances: Vec<f64>) -> Self {
        assert_eq!(distances.len(), n * r, "distance count");
        let (mean, std) = mean_std(&distances);
        let sums: Vec<f64> = distances.chunks(n).map(|c| c.iter().sum()).collect();
        let (_, std_of_sums) = mean_std(&sums);
        Self { spec, n, r, std, mean, std_of_sums, distances }
    }

    pub fn samples(&self) -> usize {
        self.n * self.r
    }

    pub fn value(&self, reading: Reading) -> f64 {
        match reading {
            Reading::AllDistances => self.std,
            Reading::RepeatSums => self.std_of_sums,
        }
    }
}

fn run_chunked(
    gen: &LayerStack<f32>,
    z: &Tensor<f32>,
    cfg: &GenerationConfig,
    rng: &mut MaskRng,
) -> Result<Vec<Tensor<f32>>, VarietyError> {
    let n = z.shape()[0];
    (0..n)
        .step_by(CHUNK)
        .map(|s| {
            let chunk = z.slice_outer(s, (s + CHUNK).min(n)).expect("chunk in range");
            Ok(generate(gen, &chunk, cfg, rng)?)
        })
        .collect()
}

/// Distances between g(z_i) and R dropout-noised g′(z_i) for `latents`,
/// with masks drawn from `mask_seed`.
pub fn cell_distances(
    gen: &LayerStack<f32>,
    spec: &CellSpec,
    latents: &Tensor<f32>,
    r: usize,
    mask_seed: u64,
) -> Result<Vec<f64>, VarietyError> {
    let mut idle = MaskRng::shared(mask_seed, StreamId::GENERATION);
    let baseline = run_chunked(gen, latents, &GenerationConfig::BASELINE, &mut idle)?;
    let cfg = spec.generation();
    let mut rng = MaskRng::shared(mask_seed, StreamId::GENERATION);
    let mut out = Vec::with_capacity(r * latents.shape()[0]);
    for _ in 0..r {
        let noised = run_chunked(gen, latents, &cfg, &mut rng)?;
        for (b, v) in baseline.iter().zip(&noised) {
            out.extend(items(b).zip(items(v)).map(|(x, y)| slice_distance(x, y)));
        }
    }
    Ok(out)
}

/// Latents shared by every cell of a matrix with master `seed`.
pub fn matrix_latents(n: usize, latent_dim: usize, seed: u64) -> Tensor<f32> {
    sample_latents(n, latent_dim, &mut stream_rng(seed, StreamId::LATENTS))
}

/// Variety cell with latents and masks derived from `seed`.
pub fn variety_std(gen: &LayerStack<f32>, spec: &CellSpec, n: usize, r: usize, seed: u64) -> Result<VarietyCell, VarietyError> {
    if n == 0 || r == 0 {
        return Err(VarietyError::Invalid(format!("N = {n}, R = {r}")));
    }
    let latents = matrix_latents(n, gen.input_shape()[0], seed);
    let d = cell_distances(gen, spec, &latents, r, derive_seed(seed, &cell_label(spec)))?;
    Ok(VarietyCell::from_distances(*spec, n, r, d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub p_train: Vec<Probability>,
    pub p_generation: Vec<Probability>,
    pub scaling: Scaling,
    pub placement: Placement,
    pub n: usize,
    pub r: usize,
    pub seed: u64,
}

impl ExperimentMatrix {
    /// Full grid at desk scale (N = 100, R = 10).
    pub fn desk(scaling: Scaling, placement: Placement, seed: u64) -> Self {
        let grid: Vec<Probability> = P_GRID.iter().map(|&p| Probability::new(p).expect("grid value")).collect();
        Self { p_train: grid.clone(), p_generation: grid, scaling, placement, n: 100, r: 10, seed }
    }

    fn validate(&self) -> Result<(), VarietyError> {
        if self.p_train.is_empty() || self.p_generation.is_empty() {
            return Err(VarietyError::Invalid("empty grid".into()));
        }
        if self.n == 0 || self.r == 0 {
            return Err(VarietyError::Invalid(format!("N = {}, R = {}", self.n, self.r)));
        }
        Ok(())
    }

    pub fn cell(&self, p_train: Probability, p_dropout: Probability) -> CellSpec {
        CellSpec { p_train, p_dropout, p_scale: self.scaling.p_scale(p_dropout), placement: self.placement }
    }
}

/// A trained generator available to the matrix.
#[derive(Clone, Debug)]
pub struct GridModel {
    pub p_train: Probability,
    pub generator: LayerStack<f32>,
    /// Digest of the checkpoint file the generator came from.
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub p_train: Probability,
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarietyReport {
    pub matrix: ExperimentMatrix,
    pub reading: Reading,
    pub code_version: String,
    pub checkpoints: Vec<CheckpointRef>,
    /// `cells[row][col]`: rows follow `p_generation`, columns `p_train`.
    pub cells: Vec<Vec<VarietyCell>>,
}

impl VarietyReport {
    pub fn table(&self) -> Table {
        self.table_for(self.reading)
    }

    pub fn table_for(&self, reading: Reading) -> Table {
        Table {
            columns: self.matrix.p_train.iter().map(|p| p.get()).collect(),
            row_labels: self.matrix.p_generation.iter().map(|p| p.get()).collect(),
            cells: self.cells.iter().map(|row| row.iter().map(|c| c.value(reading)).collect()).collect(),
        }
    }

    pub fn column(&self, p_train: f64) -> Option<Vec<&VarietyCell>> {
        let j = self.matrix.p_train.iter().position(|p| p.get() == p_train)?;
        Some(self.cells.iter().map(|row| &row[j]).collect())
    }

    pub fn cells(&self) -> impl Iterator<Item = &VarietyCell> {
        self.cells.iter().flatten()
    }
}

/// Evaluates every (generation p, training p) cell of `m`.
pub fn run_matrix(m: &ExperimentMatrix, models: &[GridModel], reading: Reading) -> Result<VarietyReport, VarietyError> {
    m.validate()?;
    let mut columns = Vec::with_capacity(m.p_train.len());
    for &pt in &m.p_train {
        let model = models.iter().find(|g| g.p_train == pt).ok_or(VarietyError::MissingCheckpoint {
            p_train: pt.get(),
            p_dropout: m.p_generation[0].get(),
            placement: m.placement,
        })?;
        columns.push(model);
    }
    let mut cells: Vec<Vec<VarietyCell>> = vec![Vec::with_capacity(columns.len()); m.p_generation.len()];
    for model in &columns {
        let latents = matrix_latents(m.n, model.generator.input_shape()[0], m.seed);
        for (row, &pg) in cells.iter_mut().zip(&m.p_generation) {
            let spec = m.cell(model.p_train, pg);
            let d = cell_distances(&model.generator, &spec, &latents, m.r, derive_seed(m.seed, &cell_label(&spec)))?;
            row.push(VarietyCell::from_distances(spec, m.n, m.r, d));
        }
    }
    Ok(VarietyReport {
        matrix: m.clone(),
        reading,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        checkpoints: columns.iter().map(|g| CheckpointRef { p_train: g.p_train, sha256: g.checkpoint.clone() }).collect(),
        cells,
    })
}
