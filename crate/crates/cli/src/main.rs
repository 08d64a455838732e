use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use monde_cli::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "monde", version, about = "Monotone neural estimators of conditional distribution functions")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write the configured dataset to data.csv.
    Generate(Common),
    /// Train a model and compute the configured metrics.
    Train(Common),
    /// Recompute the configured metrics for a saved model.
    Eval(Common),
    /// ROC and PR curves for tail events.
    TailClassify(Common),
    /// Empirical and model tail-dependence curves.
    TailDep(Common),
    /// Pairwise mutual information by quadrature.
    Mi(Common),
    /// Pairwise bivariate log-likelihood win table.
    PairwiseLl(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Saved model(s); skips training.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::Generate(c) => (Command::Generate, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::TailClassify(c) => (Command::TailClassify, c),
        Sub::TailDep(c) => (Command::TailDep, c),
        Sub::Mi(c) => (Command::Mi, c),
        Sub::PairwiseLl(c) => (Command::PairwiseLl, c),
    };
    let opts = RunOptions {
        config: common.config,
        out: common.out,
        seed: common.seed,
        models: common.models,
    };
    match run(cmd, &opts) {
        Ok(dir) => println!("{}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
