//! Run configuration: defaults, a flat `key = value` file, then flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use xcov::model::Architecture;

use crate::CliError;

pub const DATA_ENV: &str = "XCAE_DATA";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// MNIST directory; falls back to `$XCAE_DATA`, then `data/mnist`.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub beta: f64,
    pub gamma: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent: usize,
    /// Use only the first `train_size` rows of the 50k training split; 0 = all.
    pub train_size: usize,
    pub sweep_steps: usize,
    pub sweep_sigmas: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_steps: usize,
    pub top_vectors: usize,
    pub random_columns: usize,
    pub parzen_samples: usize,
    pub bound_train: usize,
    pub parzen_valid: usize,
    pub parzen_test: usize,
    pub generate_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            seed: 0,
            beta: 10.0,
            gamma: 10.0,
            batch: 100,
            epochs: 30,
            hidden: vec![500, 500],
            latent: 2,
            train_size: 0,
            sweep_steps: 7,
            sweep_sigmas: 2.0,
            scale_min: -5.0,
            scale_max: 5.0,
            scale_steps: 11,
            top_vectors: 4,
            random_columns: 4,
            parzen_samples: 10_000,
            bound_train: 10_000,
            parzen_valid: 10_000,
            parzen_test: 10_000,
            generate_count: 100,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub fn parse_widths(value: &str) -> Result<Vec<usize>, CliError> {
    let v: Vec<usize> = value
        .split(',')
        .map(|s| parse::<usize>("hidden", s.trim()))
        .collect::<Result<_, _>>()?;
    if v.contains(&0) {
        return Err(CliError::Config("hidden: widths must be positive".into()));
    }
    Ok(v)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "hidden" => self.hidden = parse_widths(value)?,
            "latent" => self.latent = parse(key, value)?,
            "train_size" => self.train_size = parse(key, value)?,
            "sweep_steps" => self.sweep_steps = parse(key, value)?,
            "sweep_sigmas" => self.sweep_sigmas = parse(key, value)?,
            "scale_min" => self.scale_min = parse(key, value)?,
            "scale_max" => self.scale_max = parse(key, value)?,
            "scale_steps" => self.scale_steps = parse(key, value)?,
            "top_vectors" => self.top_vectors = parse(key, value)?,
            "random_columns" => self.random_columns = parse(key, value)?,
            "parzen_samples" => self.parzen_samples = parse(key, value)?,
            "bound_train" => self.bound_train = parse(key, value)?,
            "parzen_valid" => self.parzen_valid = parse(key, value)?,
            "parzen_test" => self.parzen_test = parse(key, value)?,
            "generate_count" => self.generate_count = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment; blank lines are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value", n + 1)));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::symmetric(
            xcov::dataset::IMAGE_DIM,
            &self.hidden,
            xcov::dataset::NUM_CLASSES,
            self.latent,
        )
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn checkpoint_path(&self) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Config("this command needs --checkpoint".into()))
    }

    pub fn objective(&self) -> xcov::model::ObjectiveConfig {
        xcov::model::ObjectiveConfig {
            beta: self.beta,
            gamma: self.gamma,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}
