//! Subcommands of the `dropnoise` binary, callable as library functions.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dropnoise_core::io::{
    load_checkpoint, load_mnist_idx, read_file, save_checkpoint, save_image_grid, write_file, Checkpoint, Dataset,
    FileDigest, GridFormat,
};
use dropnoise_core::models::{generate, sample_latents, GenerationConfig, Placement};
use dropnoise_core::nn::{MaskRng, Probability};
use dropnoise_core::rng::{derive_seed, prob_label, stream_rng, StreamId};
use dropnoise_core::training::{train_gan, TrainConfig, TrainOutcome};
use dropnoise_core::variety::{
    compare_placements, distortion_observation, load_report, run_matrix, write_report, ExperimentMatrix, GridModel,
    Reading, Scaling, VarietyReport, P_GRID,
};
use dropnoise_tensor::Tensor;

pub const IMAGES_FILE: &str = "train-images-idx3-ubyte";
pub const LABELS_FILE: &str = "train-labels-idx1-ubyte";
pub const DISTORTION_FILE: &str = "distortion.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Matched,
    None,
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Matched => Scaling::Matched,
            ScalingArg::None => Scaling::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    All,
    First,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::All => Placement::AllHidden,
            PlacementArg::First => Placement::FirstHiddenOnly,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReadingArg {
    /// Std over all N·R distances.
    All,
    /// Std over the R per-repeat sums.
    Sums,
}

impl From<ReadingArg> for Reading {
    fn from(r: ReadingArg) -> Self {
        match r {
            ReadingArg::All => Reading::AllDistances,
            ReadingArg::Sums => Reading::RepeatSums,
        }
    }
}

fn probability(s: &str) -> Result<Probability, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    Probability::new(v).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = probability)]
    pub p_train: Probability,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// IDX image file, or a directory holding `train-images-idx3-ubyte`.
    #[arg(long)]
    pub data: PathBuf,
    /// Images drawn (seeded) from the dataset, capped at its size.
    #[arg(long, default_value_t = 5000)]
    pub images: usize,
    /// Steps between mode-collapse checks (0: epoch ends only).
    #[arg(long, default_value_t = 0)]
    pub monitor_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Path of the training log written next to `checkpoint`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.json")
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (images, labels) = if path.is_dir() {
        let labels = path.join(LABELS_FILE);
        (path.join(IMAGES_FILE), labels.exists().then_some(labels))
    } else {
        (path.to_path_buf(), None)
    };
    load_mnist_idx(&images, labels.as_deref()).with_context(|| format!("loading {}", images.display()))
}

pub fn train(args: &TrainArgs, out: &mut impl Write) -> Result<TrainOutcome> {
    let dataset = load_dataset(&args.data)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        dataset_size: Some(args.images.min(dataset.len())),
        monitor_every: args.monitor_every,
        checkpoint_out: Some(args.out.clone()),
        ..TrainConfig::desk(args.p_train, args.seed)
    };
    writeln!(out, "train p_train={} seed={} images={} epochs={} batch={}", args.p_train.get(), cfg.seed,
        cfg.dataset_size.unwrap_or(dataset.len()), cfg.epochs, cfg.batch_size)?;
    let mut write_err = None;
    let outcome = train_gan(&cfg, &dataset, |p| {
        let collapse = p.collapse.as_ref();
        let line = format!(
            "epoch {}/{} step {} g_loss {:.4} d_loss {:.4} spread {:.4} threshold {:.4}{}",
            p.epoch,
            p.epochs,
            p.step,
            p.mean_g_loss,
            p.mean_d_loss,
            collapse.map_or(f64::NAN, |c| c.mean_pairwise_distance),
            collapse.map_or(f64::NAN, |c| c.threshold),
            if collapse.is_some_and(|c| c.flagged) { " MODE-COLLAPSE" } else { "" }
        );
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&Checkpoint::from_outcome(&outcome), &args.out)?;
    let log = serde_json::to_vec_pretty(&outcome.log)?;
    write_file(&log_path(&args.out), &log)?;
    writeln!(
        out,
        "saved {} ({}collapse flagged)",
        args.out.display(),
        if outcome.log.collapse_flagged() { "" } else { "no " }
    )?;
    Ok(outcome)
}

/// Generators of every `*.ckpt` in `dir`, keyed by their training p.
pub fn load_grid_models(dir: &Path) -> Result<Vec<GridModel>> {
    let mut models: Vec<GridModel> = Vec::new();
    let files = dropnoise_serve::checkpoint_files(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
    for path in files {
        let bytes = read_file(&path)?;
        let c = dropnoise_core::io::decode_checkpoint(&bytes).with_context(|| path.display().to_string())?;
        let Some(p) = c.p_train() else { bail!("{}: checkpoint records no training config", path.display()) };
        let p_train = Probability::new(p)?;
        if models.iter().any(|m| m.p_train == p_train) {
            bail!("{}: a second checkpoint for p_train = {p}", path.display());
        }
        models.push(GridModel {
            p_train,
            generator: c.generator()?,
            checkpoint: Some(FileDigest::of(path.display().to_string(), &bytes).sha256),
        });
    }
    Ok(models)
}

#[derive(Clone, Debug, Args)]
pub struct MatrixArgs {
    /// Directory of checkpoints, one per training p.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_enum, default_value = "matched")]
    pub scaling: ScalingArg,
    #[arg(long, value_enum, default_value = "all")]
    pub placement: PlacementArg,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "all")]
    pub reading: ReadingArg,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn matrix(args: &MatrixArgs, out: &mut impl Write) -> Result<VarietyReport> {
    let models = load_grid_models(&args.models)?;
    let m = ExperimentMatrix { n: args.n, r: args.r, ..ExperimentMatrix::desk(args.scaling.into(), args.placement.into(), args.seed) };
    let report = run_matrix(&m, &models, args.reading.into())?;
    write_report(&report, &args.out)?;
    if let Some(obs) = distortion_observation(&report) {
        write_file(&args.out.join(DISTORTION_FILE), &serde_json::to_vec_pretty(&obs)?)?;
    }
    let table = dropnoise_core::io::table_bytes(&report.table())?;
    out.write_all(&table)?;
    Ok(report)
}

#[derive(Clone, Debug, Args)]
pub struct GridArgs {
    /// Checkpoint to sample from.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid rows; each repeats every column with fresh masks.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value = "matched")]
    pub scaling: ScalingArg,
    #[arg(long, value_enum, default_value = "all")]
    pub placement: PlacementArg,
    /// Write binary PGM instead of PNG.
    #[arg(long)]
    pub pgm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// One latent, rows of repeats, columns of generation p.
pub fn grid_images(c: &Checkpoint, seed: u64, repeats: usize, scaling: Scaling, placement: Placement) -> Result<Tensor<f32>> {
    let generator = c.generator()?;
    let z = sample_latents::<f32>(1, generator.input_shape()[0], &mut stream_rng(seed, StreamId::LATENTS));
    let mut tiles = Vec::with_capacity(repeats * P_GRID.len());
    for r in 0..repeats {
        for &p in &P_GRID {
            let p = Probability::new(p)?;
            let cfg = GenerationConfig::new(p, scaling.p_scale(p), placement);
            let mut rng = MaskRng::shared(derive_seed(seed, &[r as u64, prob_label(p.get())]), StreamId::GENERATION);
            tiles.push(generate(&generator, &z, &cfg, &mut rng)?);
        }
    }
    Ok(Tensor::concat_outer(&tiles)?)
}

pub fn grid(args: &GridArgs) -> Result<()> {
    let c = load_checkpoint(&args.model)?;
    let images = grid_images(&c, args.seed, args.repeats, args.scaling.into(), args.placement.into())?;
    let format = if args.pgm { GridFormat::Pgm } else { GridFormat::Png };
    save_image_grid(&images, args.repeats, P_GRID.len(), &args.out, format)?;
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    /// Matrix output directory with all-hidden placement.
    #[arg(long)]
    pub all: PathBuf,
    /// Matrix output directory with first-hidden-only placement.
    #[arg(long)]
    pub first: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compare(args: &CompareArgs, out: &mut impl Write) -> Result<()> {
    let cmp = compare_placements(&load_report(&args.all)?, &load_report(&args.first)?)?;
    let json = serde_json::to_vec_pretty(&cmp)?;
    match &args.out {
        Some(p) => write_file(p, &json)?,
        None => out.write_all(&json)?,
    }
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Overrides `DROPNOISE_PORT`.
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let port = dropnoise_serve::resolve_port(args.port).map_err(anyhow::Error::msg)?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on 127.0.0.1:{port}, loading {}", args.models.display());
    rt.block_on(dropnoise_serve::serve(args.models.clone(), port))?;
    Ok(())
}
