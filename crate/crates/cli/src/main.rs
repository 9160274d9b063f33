use clap::{Parser, Subcommand};
use dropnoise_cli::{CompareArgs, GridArgs, MatrixArgs, ServeArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "dropnoise", version, about = "Dropout as generation noise for GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one generator/discriminator pair.
    Train(TrainArgs),
    /// Measure output variety over the training × generation p grid.
    Matrix(MatrixArgs),
    /// Render repeats × generation p image grids for one checkpoint.
    Grid(GridArgs),
    /// Compare all-hidden and first-hidden matrices cell by cell.
    Compare(CompareArgs),
    /// Serve checkpoints over HTTP.
    Serve(ServeArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train(a) => dropnoise_cli::train(&a, &mut stdout).map(drop),
        Command::Matrix(a) => dropnoise_cli::matrix(&a, &mut stdout).map(drop),
        Command::Grid(a) => dropnoise_cli::grid(&a),
        Command::Compare(a) => dropnoise_cli::compare(&a, &mut stdout),
        Command::Serve(a) => dropnoise_cli::serve(&a),
    }
}
