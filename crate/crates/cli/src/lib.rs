//! Command-line front end: argument parsing, configuration and the command
//! implementations behind the `xcae` binary.

pub mod commands;
pub mod config;
pub mod image;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_widths, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot load data from {0} (set --data or XCAE_DATA): {1}")]
    Data(PathBuf, xcov::Error),
    #[error("checkpoint {0}: {1}")]
    Checkpoint(PathBuf, xcov::Error),
    #[error("cannot write {0}: {1}")]
    Output(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] xcov::Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "xcae",
    version,
    about = "Train and analyse autoencoders with a cross-covariance penalty on MNIST"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or resume with --checkpoint) and write metrics and per-epoch checkpoints.
    Train(Common),
    /// Accuracy, reconstruction error and XCov on the validation and test splits.
    Eval(Common),
    /// Decode sweeps of each z dimension over ±k·σ for every class.
    Sweep(Common),
    /// Decode scaled one-hot labels, including negative scales, with z = 0.
    Extrapolate(Common),
    /// Decoder Jacobian spectra and images at each class with z = 0.
    Jacobian(Common),
    /// Mean, standard deviation and histogram of z on the test split.
    Stats(Common),
    /// Parzen-window log-likelihood of model samples on the test split.
    Parzen(ParzenArgs),
    /// Sample labels and z from the fitted latent model and decode them.
    Generate(Common),
}

#[derive(Debug, Args)]
pub struct ParzenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Score real training images instead of model samples; no checkpoint needed.
    #[arg(long)]
    pub empirical_bound: bool,
}

/// Flags shared by every command. Unset flags fall back to the config
/// file, then to the defaults shown.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and sampling [default: 0]
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Supervised cross-entropy multiplier [default: 10]
    #[arg(long, value_name = "F")]
    pub beta: Option<f64>,
    /// Cross-covariance penalty multiplier [default: 10]
    #[arg(long, value_name = "F")]
    pub gamma: Option<f64>,
    /// Mini-batch size [default: 100]
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    /// Total training epochs [default: 30]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Checkpoint to analyse or resume from
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// MNIST directory with the four unzipped IDX files [default: $XCAE_DATA, else data/mnist]
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Encoder hidden widths, mirrored in the decoder [default: 500,500]
    #[arg(long, value_name = "W,W,...", value_parser = parse_hidden)]
    pub hidden: Option<Widths>,
    /// Latent z width [default: 2]
    #[arg(long, value_name = "K")]
    pub latent: Option<usize>,
    /// Train on the first N rows of the 50k training split; 0 = all [default: 0]
    #[arg(long, value_name = "N")]
    pub train_size: Option<usize>,
    /// Sweep columns [default: 7]
    #[arg(long, value_name = "N")]
    pub sweep_steps: Option<usize>,
    /// Sweep half-range in standard deviations [default: 2]
    #[arg(long, value_name = "F")]
    pub sweep_sigmas: Option<f64>,
    /// Lowest label scale for extrapolation [default: -5]
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    pub scale_min: Option<f64>,
    /// Highest label scale for extrapolation [default: 5]
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    pub scale_max: Option<f64>,
    /// Number of label scales [default: 11]
    #[arg(long, value_name = "N")]
    pub scale_steps: Option<usize>,
    /// Leading singular vectors drawn for layer h-3 [default: 4]
    #[arg(long, value_name = "N")]
    pub top_vectors: Option<usize>,
    /// Random Jacobian columns drawn for layer h-2 [default: 4]
    #[arg(long, value_name = "N")]
    pub random_columns: Option<usize>,
    /// Generated samples used as Parzen kernel centres [default: 10000]
    #[arg(long, value_name = "N")]
    pub parzen_samples: Option<usize>,
    /// Training images used as kernel centres for the empirical bound [default: 10000]
    #[arg(long, value_name = "N")]
    pub bound_train: Option<usize>,
    /// Validation images used to choose σ; 0 = all [default: 10000]
    #[arg(long, value_name = "N")]
    pub parzen_valid: Option<usize>,
    /// Test images scored; 0 = all [default: 10000]
    #[arg(long, value_name = "N")]
    pub parzen_test: Option<usize>,
    /// Images drawn by `generate` [default: 100]
    #[arg(long, value_name = "N")]
    pub generate_count: Option<usize>,
}

/// Comma-separated layer widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

fn parse_hidden(s: &str) -> Result<Widths, String> {
    parse_widths(s).map(Widths).map_err(|e| e.to_string())
}

impl Common {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(p) = &self.config {
            c.apply_file(p)?;
        }
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        take!(
            seed,
            beta,
            gamma,
            batch,
            epochs,
            out,
            latent,
            train_size,
            sweep_steps,
            sweep_sigmas,
            scale_min,
            scale_max,
            scale_steps,
            top_vectors,
            random_columns,
            parzen_samples,
            bound_train,
            parzen_valid,
            parzen_test,
            generate_count
        );
        if let Some(w) = &self.hidden {
            c.hidden = w.0.clone();
        }
        if self.checkpoint.is_some() {
            c.checkpoint = self.checkpoint.clone();
        }
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        Ok(c)
    }
}

/// Runs one parsed command, writing progress to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<(), CliError> {
    use commands::*;
    let files = match &cli.command {
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let data = load_splits(&cfg)?;
            let o = train(&cfg, &data, log)?;
            let mut f = vec![o.metrics_csv];
            f.extend(o.checkpoints);
            f
        }
        Command::Eval(a) => {
            let cfg = a.resolve()?;
            eval(&cfg, &load_splits(&cfg)?, log)?
        }
        Command::Sweep(a) => {
            let cfg = a.resolve()?;
            sweep(&cfg, &load_splits(&cfg)?, log)?
        }
        Command::Extrapolate(a) => extrapolate(&a.resolve()?, log)?,
        Command::Jacobian(a) => jacobian(&a.resolve()?, log)?,
        Command::Stats(a) => {
            let cfg = a.resolve()?;
            stats(&cfg, &load_splits(&cfg)?, log)?.1
        }
        Command::Parzen(a) => {
            let cfg = a.common.resolve()?;
            parzen(&cfg, &load_splits(&cfg)?, a.empirical_bound, log)?.1
        }
        Command::Generate(a) => {
            let cfg = a.resolve()?;
            generate(&cfg, &load_splits(&cfg)?, log)?
        }
    };
    for f in files {
        let _ = writeln!(log, "wrote {}", f.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "beta = 2\ngamma = 3\nhidden = 50,40\n").unwrap();
        let cli = Cli::try_parse_from(["xcae", "train", "--config", p.to_str().unwrap(), "--gamma", "0"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let c = a.resolve().unwrap();
        assert_eq!((c.beta, c.gamma), (2.0, 0.0));
        assert_eq!(c.hidden, vec![50, 40]);
    }

    #[test]
    fn hidden_flag_parses() {
        let cli = Cli::try_parse_from(["xcae", "train", "--hidden", "200,200"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.resolve().unwrap().hidden, vec![200, 200]);
    }

    #[test]
    fn negative_scale_flags_parse() {
        let cli = Cli::try_parse_from(["xcae", "extrapolate", "--scale-min", "-3", "--scale-max", "3"]).unwrap();
        let Command::Extrapolate(a) = cli.command else { panic!() };
        assert_eq!(a.resolve().unwrap().scale_min, -3.0);
    }

    /// Every `[default: …]` in the help text names the value `RunConfig`
    /// actually uses.
    #[test]
    fn help_defaults_match_config() {
        let d = RunConfig::default();
        let expected = [
            ("seed", d.seed.to_string()),
            ("beta", d.beta.to_string()),
            ("gamma", d.gamma.to_string()),
            ("batch", d.batch.to_string()),
            ("epochs", d.epochs.to_string()),
            ("out", d.out.display().to_string()),
            (
                "hidden",
                d.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("latent", d.latent.to_string()),
            ("train-size", d.train_size.to_string()),
            ("sweep-steps", d.sweep_steps.to_string()),
            ("sweep-sigmas", d.sweep_sigmas.to_string()),
            ("scale-min", d.scale_min.to_string()),
            ("scale-max", d.scale_max.to_string()),
            ("scale-steps", d.scale_steps.to_string()),
            ("top-vectors", d.top_vectors.to_string()),
            ("random-columns", d.random_columns.to_string()),
            ("parzen-samples", d.parzen_samples.to_string()),
            ("bound-train", d.bound_train.to_string()),
            ("parzen-valid", d.parzen_valid.to_string()),
            ("parzen-test", d.parzen_test.to_string()),
            ("generate-count", d.generate_count.to_string()),
        ];
        let cmd = Cli::command();
        let train = cmd.find_subcommand("train").unwrap();
        for (flag, value) in expected {
            let arg = train.get_arguments().find(|a| a.get_long() == Some(flag)).unwrap();
            let help = arg.get_help().unwrap().to_string();
            assert!(help.ends_with(&format!("[default: {value}]")), "{flag}: {help}");
        }
    }
}
