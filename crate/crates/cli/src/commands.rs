//! Command implementations. Each returns the files it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use xcov::analysis::{
    decoder_jacobian, jacobian_spectrum, latent_stats, latent_sweep, random_columns, symmetric_steps, y_extrapolate,
    DecoderPoint, JacobianLayer, LatentStats,
};
use xcov::dataset::{load_mnist, split_train_valid, LabeledSet, IMAGE_DIM, IMAGE_SIDE, NUM_CLASSES};
use xcov::generative::{
    default_sigma_grid, empirical_bound, fit_latent_model, parzen_evaluate, sample_and_decode, ParzenReport,
};
use xcov::model::{evaluate, load_checkpoint, save_checkpoint, EvalMetrics, Trainer, METRICS_CSV_HEADER};
use xcov::{Rng, Tensor};

use crate::config::RunConfig;
use crate::image::{signed_to_unit, write_pgm_grid};
use crate::CliError;

/// Stream ids for [`Rng::derived`] in analysis commands.
const JACOBIAN_STREAM: u64 = 11;
const SAMPLE_STREAM: u64 = 12;

pub struct Splits {
    pub train: LabeledSet,
    pub valid: LabeledSet,
    pub test: LabeledSet,
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let dir = cfg.data_dir();
    let (all_train, test) = load_mnist(&dir).map_err(|e| CliError::Data(dir.clone(), e))?;
    let (train, valid) = split_train_valid(&all_train)?;
    let train = if cfg.train_size > 0 && cfg.train_size < train.len() {
        train.head(cfg.train_size)?
    } else {
        train
    };
    Ok(Splits { train, valid, test })
}

fn ensure_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Output(cfg.out.clone(), e))?;
    Ok(&cfg.out)
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, text).map_err(|e| CliError::Output(path.clone(), e))?;
    Ok(path)
}

fn write_grid(path: PathBuf, tiles: &Tensor, rows: usize, cols: usize) -> Result<PathBuf, CliError> {
    write_pgm_grid(&path, tiles, rows, cols, IMAGE_SIDE).map_err(|e| CliError::Output(path.clone(), e))?;
    Ok(path)
}

/// Loads a checkpoint and checks it fits 28×28, ten-class data.
pub fn load_model(cfg: &RunConfig) -> Result<Trainer, CliError> {
    let path = cfg.checkpoint_path()?;
    let t = load_checkpoint(path).map_err(|e| CliError::Checkpoint(path.to_path_buf(), e))?;
    let m = &t.model;
    if m.input_dim() != IMAGE_DIM || m.classes() != NUM_CLASSES {
        return Err(CliError::Config(format!(
            "checkpoint {} has input width {} and {} classes; expected {IMAGE_DIM} and {NUM_CLASSES}",
            path.display(),
            m.input_dim(),
            m.classes()
        )));
    }
    Ok(t)
}

/// `<command>-s<seed>-e<epoch>` file stem.
fn stem(command: &str, seed: u64, epoch: u64) -> String {
    format!("{command}-s{seed}-e{epoch}")
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub valid: Vec<EvalMetrics>,
    pub test: EvalMetrics,
}

/// Trains to `cfg.epochs` total epochs, resuming from `cfg.checkpoint` if
/// set. Writes per-batch metrics and a checkpoint after every epoch.
pub fn train(cfg: &RunConfig, data: &Splits, log: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let obj = cfg.objective();
    obj.validate()?;
    let out = ensure_out(cfg)?.to_path_buf();
    let mut trainer = match &cfg.checkpoint {
        Some(_) => load_model(cfg)?,
        None => Trainer::new(&cfg.architecture(), cfg.seed)?,
    };
    let metrics_csv = out.join(format!("train-s{}-metrics.csv", cfg.seed));
    let file = if trainer.epoch == 0 {
        let mut f = File::create(&metrics_csv).map_err(|e| CliError::Output(metrics_csv.clone(), e))?;
        writeln!(f, "{METRICS_CSV_HEADER}").map_err(|e| CliError::Output(metrics_csv.clone(), e))?;
        f
    } else {
        fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&metrics_csv)
            .map_err(|e| CliError::Output(metrics_csv.clone(), e))?
    };
    let mut sink = BufWriter::new(file);
    let mut io_err = None;
    let mut checkpoints = Vec::new();
    let mut valid = Vec::new();
    while trainer.epoch < cfg.epochs as u64 {
        let summary = trainer.train_epoch(&data.train, &obj, true, |r| {
            if io_err.is_none() {
                if let Err(e) = writeln!(sink, "{}", r.csv_line()) {
                    io_err = Some(e);
                }
            }
        })?;
        if let Some(e) = io_err.take() {
            return Err(CliError::Output(metrics_csv, e));
        }
        sink.flush().map_err(|e| CliError::Output(metrics_csv.clone(), e))?;
        let v = evaluate(&trainer.model, &data.valid, cfg.batch)?;
        let ckpt = out.join(format!("{}.ckpt", stem("train", cfg.seed, trainer.epoch)));
        save_checkpoint(&trainer, &ckpt).map_err(|e| CliError::Checkpoint(ckpt.clone(), e))?;
        let _ = writeln!(
            log,
            "epoch {:>3}  train total {:.4}  valid accuracy {:.4}  recon {:.4}  xcov {:.3e}",
            trainer.epoch, summary.total, v.accuracy, v.recon, v.xcov
        );
        checkpoints.push(ckpt);
        valid.push(v);
    }
    let test = evaluate(&trainer.model, &data.test, cfg.batch)?;
    let _ = writeln!(
        log,
        "test accuracy {:.4}  recon {:.4}  xcov {:.3e}",
        test.accuracy, test.recon, test.xcov
    );
    Ok(TrainOutcome {
        trainer,
        metrics_csv,
        checkpoints,
        valid,
        test,
    })
}

pub fn eval(cfg: &RunConfig, data: &Splits, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let t = load_model(cfg)?;
    let out = ensure_out(cfg)?;
    let mut csv = String::from("split,accuracy,recon,xcov\n");
    for (name, set) in [("valid", &data.valid), ("test", &data.test)] {
        let m = evaluate(&t.model, set, cfg.batch)?;
        let _ = writeln!(
            log,
            "{name}: accuracy {:.4}  recon {:.4}  xcov {:.3e}",
            m.accuracy, m.recon, m.xcov
        );
        csv.push_str(&format!("{name},{:?},{:?},{:?}\n", m.accuracy, m.recon, m.xcov));
    }
    Ok(vec![write_text(
        out.join(format!("{}.csv", stem("eval", cfg.seed, t.epoch))),
        &csv,
    )?])
}

/// z statistics on the test split.
pub fn stats(cfg: &RunConfig, data: &Splits, log: &mut dyn Write) -> Result<(LatentStats, Vec<PathBuf>), CliError> {
    let t = load_model(cfg)?;
    let out = ensure_out(cfg)?;
    let s = latent_stats(&t.model, data.test.images())?;
    let base = stem("stats", cfg.seed, t.epoch);
    let mut summary = String::from("dim,mean,std\n");
    let mut hist = String::from("dim,bin_lo,bin_hi,count\n");
    for d in 0..s.mean.len() {
        let _ = writeln!(log, "z{d}: mean {:+.4}  std {:.4}", s.mean[d], s.std[d]);
        summary.push_str(&format!("{d},{:?},{:?}\n", s.mean[d], s.std[d]));
        let h = &s.histograms[d];
        for (b, &c) in h.counts.iter().enumerate() {
            hist.push_str(&format!("{d},{:?},{:?},{c}\n", h.edges[b], h.edges[b + 1]));
        }
    }
    let files = vec![
        write_text(out.join(format!("{base}.csv")), &summary)?,
        write_text(out.join(format!("{base}-hist.csv")), &hist)?,
    ];
    Ok((s, files))
}

/// One grid per z dimension: a row per class, a column per step over
/// `±sweep_sigmas·σ`, with σ measured on the test split.
pub fn sweep(cfg: &RunConfig, data: &Splits, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let t = load_model(cfg)?;
    let out = ensure_out(cfg)?;
    let s = latent_stats(&t.model, data.test.images())?;
    let classes: Vec<usize> = (0..NUM_CLASSES).collect();
    let mut files = Vec::new();
    for d in 0..t.model.latent() {
        let g = latent_sweep(&t.model, &classes, d, s.std[d], cfg.sweep_sigmas, cfg.sweep_steps)?;
        let path = out.join(format!("{}-z{d}.pgm", stem("sweep", cfg.seed, t.epoch)));
        let _ = writeln!(log, "z{d}: σ = {:.4}, values {:?}", s.std[d], g.values);
        files.push(write_grid(path, &g.images, g.rows(), g.cols())?);
    }
    Ok(files)
}

pub fn extrapolate(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let t = load_model(cfg)?;
    let out = ensure_out(cfg)?;
    if cfg.scale_steps == 0 || cfg.scale_min > cfg.scale_max {
        return Err(CliError::Config(
            "extrapolation needs scale_steps >= 1 and scale_min <= scale_max".into(),
        ));
    }
    let mid = 0.5 * (cfg.scale_min + cfg.scale_max);
    let scales: Vec<f64> = symmetric_steps(0.5 * (cfg.scale_max - cfg.scale_min), cfg.scale_steps)
        .into_iter()
        .map(|v| v + mid)
        .collect();
    let classes: Vec<usize> = (0..NUM_CLASSES).collect();
    let z = Tensor::zeros(1, t.model.latent());
    let g = y_extrapolate(&t.model, &classes, &scales, &z)?;
    let _ = writeln!(log, "scales {scales:?}");
    let path = out.join(format!("{}.pgm", stem("extrapolate", cfg.seed, t.epoch)));
    Ok(vec![write_grid(path, &g.images, g.rows(), g.cols())?])
}

pub const JACOBIAN_LAYERS: [JacobianLayer; 3] = [
    JacobianLayer::Latent,
    JacobianLayer::FromOutput(3),
    JacobianLayer::FromOutput(2),
];

/// Per class `c` at `{onehot(c), z = 0}`: spectra of the three decoder
/// Jacobians, the z columns, the leading `h-3` singular vectors and random
/// `h-2` columns.
pub fn jacobian(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let t = load_model(cfg)?;
    let m = &t.model;
    let out = ensure_out(cfg)?;
    let base = stem("jacobian", cfg.seed, t.epoch);
    let mut rng = Rng::derived(cfg.seed, JACOBIAN_STREAM);
    let mut files = Vec::new();
    let mut points = Tensor::zeros(0, IMAGE_DIM);
    let mut z_cols = Tensor::zeros(0, IMAGE_DIM);
    let mut vectors = Tensor::zeros(0, IMAGE_DIM);
    let mut columns = Tensor::zeros(0, IMAGE_DIM);
    let mut summary = String::from("layer,class,retained,pruned,top_normalized_2\n");
    for c in 0..NUM_CLASSES {
        let p = DecoderPoint::class(m, c)?;
        points = points.vstack(&m.decode(&p.y, &p.z)?)?;
        for layer in JACOBIAN_LAYERS.into_iter().filter(|l| layer_exists(m, *l)) {
            let r = decoder_jacobian(m, &p, layer)?;
            let spec = jacobian_spectrum(&r, cfg.top_vectors)?;
            let mut csv = String::from("index,normalized_value\n");
            for (i, v) in spec.normalized.iter().enumerate() {
                csv.push_str(&format!("{i},{v:?}\n"));
            }
            files.push(write_text(out.join(format!("{base}-{layer}-c{c}.csv")), &csv)?);
            summary.push_str(&format!(
                "{layer},{c},{},{},{:?}\n",
                r.retained.len(),
                r.pruned.len(),
                spec.normalized.get(1).copied().unwrap_or(0.0)
            ));
            match layer {
                JacobianLayer::Latent => {
                    let idx: Vec<usize> = (m.classes()..m.classes() + m.latent()).collect();
                    z_cols = z_cols.vstack(&r.jacobian.select_cols(&idx)?.transpose())?;
                }
                JacobianLayer::FromOutput(3) => {
                    let mut v = spec.vectors.clone();
                    while v.rows() < cfg.top_vectors {
                        v = v.vstack(&Tensor::filled(1, IMAGE_DIM, 0.0))?;
                    }
                    vectors = vectors.vstack(&v)?;
                }
                JacobianLayer::FromOutput(_) => {
                    let n = cfg.random_columns.min(r.retained.len());
                    let (_, mut cols) = random_columns(&r, n, &mut rng)?;
                    while cols.rows() < cfg.random_columns {
                        cols = cols.vstack(&Tensor::filled(1, IMAGE_DIM, 0.0))?;
                    }
                    columns = columns.vstack(&cols)?;
                }
            }
        }
    }
    let _ = write!(log, "{summary}");
    files.push(write_text(out.join(format!("{base}-summary.csv")), &summary)?);
    files.push(write_grid(
        out.join(format!("{base}-points.pgm")),
        &points,
        NUM_CLASSES,
        1,
    )?);
    files.push(write_grid(
        out.join(format!("{base}-z.pgm")),
        &signed_to_unit(&z_cols),
        NUM_CLASSES,
        m.latent(),
    )?);
    if vectors.rows() > 0 {
        files.push(write_grid(
            out.join(format!("{base}-h-3-vectors.pgm")),
            &signed_to_unit(&vectors),
            NUM_CLASSES,
            cfg.top_vectors,
        )?);
    }
    if columns.rows() > 0 {
        files.push(write_grid(
            out.join(format!("{base}-h-2-columns.pgm")),
            &signed_to_unit(&columns),
            NUM_CLASSES,
            cfg.random_columns,
        )?);
    }
    Ok(files)
}

fn layer_exists(m: &xcov::model::Autoencoder, layer: JacobianLayer) -> bool {
    match layer {
        JacobianLayer::Latent => true,
        JacobianLayer::FromOutput(j) => j <= m.decoder.len(),
    }
}

fn head_rows(t: &Tensor, n: usize) -> Result<Tensor, CliError> {
    Ok(if n > 0 && n < t.rows() {
        t.slice_rows(0, n)?
    } else {
        t.clone()
    })
}

/// Parzen evaluation of model samples, or of real training images with
/// `bound`.
pub fn parzen(
    cfg: &RunConfig,
    data: &Splits,
    bound: bool,
    log: &mut dyn Write,
) -> Result<(ParzenReport, Vec<PathBuf>), CliError> {
    let valid = head_rows(data.valid.images(), cfg.parzen_valid)?;
    let test = head_rows(data.test.images(), cfg.parzen_test)?;
    let grid = default_sigma_grid();
    let (report, name) = if bound {
        let train = head_rows(data.train.images(), cfg.bound_train)?;
        (
            empirical_bound(&train, &valid, &test, &grid)?,
            format!("parzen-bound-s{}", cfg.seed),
        )
    } else {
        let t = load_model(cfg)?;
        let samples = generate_samples(&t, cfg, data, cfg.parzen_samples)?;
        (
            parzen_evaluate(&samples, &valid, &test, &grid)?,
            stem("parzen", cfg.seed, t.epoch),
        )
    };
    let out = ensure_out(cfg)?;
    let _ = writeln!(
        log,
        "cross-validated sigma {:.4}; test log-likelihood {:.2} ± {:.2}",
        report.sigma, report.test.mean, report.test.stderr
    );
    let csv = write_text(out.join(format!("{name}.csv")), &report.csv())?;
    Ok((report, vec![csv]))
}

fn generate_samples(t: &Trainer, cfg: &RunConfig, data: &Splits, count: usize) -> Result<Tensor, CliError> {
    let latent = fit_latent_model(&t.model, data.train.images())?;
    let mut rng = Rng::derived(cfg.seed, SAMPLE_STREAM);
    Ok(sample_and_decode(&t.model, &latent, count, &mut rng)?)
}

pub fn generate(cfg: &RunConfig, data: &Splits, log: &mut dyn Write) -> Result<Vec<PathBuf>, CliError> {
    let t = load_model(cfg)?;
    if cfg.generate_count == 0 {
        return Err(CliError::Config("generate_count must be >= 1".into()));
    }
    let samples = generate_samples(&t, cfg, data, cfg.generate_count)?;
    let out = ensure_out(cfg)?;
    let cols = 10.min(cfg.generate_count);
    let rows = cfg.generate_count.div_ceil(cols);
    let _ = writeln!(log, "{} samples", samples.rows());
    let path = out.join(format!("{}.pgm", stem("generate", cfg.seed, t.epoch)));
    Ok(vec![write_grid(path, &samples, rows, cols)?])
}
