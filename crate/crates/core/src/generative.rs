//! Generative evaluation: fit a Categorical × diagonal-Normal model to the
//! encoder's outputs, decode samples from it, and score held-out data with
//! a Parzen-window (isotropic Gaussian kernel) density.

use std::f64::consts::PI;

use crate::analysis::encode_z;
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_PARZEN_SAMPLES: usize = 10_000;
pub const SIGMA_GRID_LEN: usize = 20;
pub const SIGMA_GRID_MIN: f64 = 0.05;
pub const SIGMA_GRID_MAX: f64 = 1.0;
pub const PARZEN_CSV_HEADER: &str = "split,sigma,mean_ll,stderr";

/// Rows of held-out data scored per block; bounds the distance buffer to
/// `CHUNK × S` floats.
const CHUNK: usize = 256;

/// `π` over classes, and a per-dimension Normal over `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel {
    pub pi: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentModel {
    /// `π` from the class frequencies of `argmax ŷ`; population moments of
    /// `z`.
    pub fn from_encodings(yhat: &Tensor, z: &Tensor) -> Result<Self> {
        if yhat.rows() == 0 {
            return Err(Error::Empty("fit_latent_model"));
        }
        if yhat.rows() != z.rows() {
            return Err(Error::Shape {
                op: "fit_latent_model",
                left: yhat.shape(),
                right: z.shape(),
            });
        }
        let n = yhat.rows() as f64;
        let mut counts = vec![0usize; yhat.cols()];
        for c in yhat.argmax_rows()? {
            counts[c] += 1;
        }
        let pi = counts.iter().map(|&c| c as f64 / n).collect();
        let mean = z.col_mean()?;
        let std = mean
            .iter()
            .enumerate()
            .map(|(d, &m)| ((0..z.rows()).map(|r| (z.get(r, d) - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(LatentModel { pi, mean, std })
    }

    fn sample_class(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last = 0;
        for (c, &p) in self.pi.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = c;
                if u < acc {
                    return c;
                }
            }
        }
        // Rounding can leave the cumulative sum just under 1.
        last
    }
}

/// Encodes `images` in chunks and fits a [`LatentModel`].
pub fn fit_latent_model(model: &Autoencoder, images: &Tensor) -> Result<LatentModel> {
    if images.rows() == 0 {
        return Err(Error::Empty("fit_latent_model"));
    }
    let z = encode_z(model, images)?;
    let mut yhat = Tensor::zeros(images.rows(), model.classes());
    let l = model.classes();
    let mut start = 0;
    while start < images.rows() {
        let end = (start + 1000).min(images.rows());
        let e = model.encode(&images.slice_rows(start, end)?)?;
        yhat.data_mut()[start * l..end * l].copy_from_slice(e.yhat.data());
        start = end;
    }
    LatentModel::from_encodings(&yhat, &z)
}

/// `count` draws of `(onehot(c), z)` with `c ~ π` and `z_d ~ N(μ_d, σ_d)`,
/// decoded.
pub fn sample_and_decode(model: &Autoencoder, latent: &LatentModel, count: usize, rng: &mut Rng) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    if latent.pi.len() != model.classes() || latent.mean.len() != model.latent() || latent.std.len() != model.latent() {
        return Err(Error::invalid("latent model does not match the network's head widths"));
    }
    let (l, k) = (model.classes(), model.latent());
    let mut y = Tensor::zeros(count, l);
    let mut z = Tensor::zeros(count, k);
    for r in 0..count {
        y.set(r, latent.sample_class(rng), 1.0);
        for d in 0..k {
            z.set(r, d, latent.mean[d] + latent.std[d] * rng.normal());
        }
    }
    let mut out = Tensor::zeros(count, model.input_dim());
    let dim = model.input_dim();
    let mut start = 0;
    while start < count {
        let end = (start + 1000).min(count);
        let x = model.decode(&y.slice_rows(start, end)?, &z.slice_rows(start, end)?)?;
        out.data_mut()[start * dim..end * dim].copy_from_slice(x.data());
        start = end;
    }
    Ok(out)
}

/// Kernel centres and bandwidth.
#[derive(Clone, Debug)]
pub struct ParzenEstimate {
    samples: Tensor,
    sigma: f64,
}

impl ParzenEstimate {
    pub fn new(samples: Tensor, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if samples.rows() == 0 {
            return Err(Error::Empty("parzen samples"));
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("parzen samples"));
        }
        Ok(ParzenEstimate { samples, sigma })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn loglik(&self, x: &Tensor) -> Result<LogLikelihood> {
        parzen_loglik(self, x)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "parzen bandwidth must be positive, got {sigma}"
        )))
    }
}

/// Per-example log-likelihoods and their summary.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihood {
    pub sigma: f64,
    pub per_example: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over examples divided by `√M`.
    pub stderr: f64,
}

impl LogLikelihood {
    fn new(sigma: f64, per_example: Vec<f64>) -> Self {
        let m = per_example.len() as f64;
        let mean = per_example.iter().sum::<f64>() / m;
        let var = per_example.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        LogLikelihood {
            sigma,
            mean,
            stderr: (var / m).sqrt(),
            per_example,
        }
    }
}

/// `log p(x) = logsumexp_s(−‖x − s‖² / 2σ²) − log S − (D/2)·log(2πσ²)`.
pub fn parzen_loglik(est: &ParzenEstimate, x: &Tensor) -> Result<LogLikelihood> {
    Ok(parzen_loglik_grid(&est.samples, x, &[est.sigma])?.remove(0))
}

/// [`parzen_loglik`] for several bandwidths, sharing one pass of squared
/// distances.
pub fn parzen_loglik_grid(samples: &Tensor, x: &Tensor, sigmas: &[f64]) -> Result<Vec<LogLikelihood>> {
    if sigmas.is_empty() {
        return Err(Error::Empty("sigma grid"));
    }
    for &s in sigmas {
        check_sigma(s)?;
    }
    if samples.rows() == 0 || x.rows() == 0 {
        return Err(Error::Empty("parzen_loglik"));
    }
    if samples.cols() != x.cols() {
        return Err(Error::Shape {
            op: "parzen_loglik",
            left: x.shape(),
            right: samples.shape(),
        });
    }
    if !x.is_finite() || !samples.is_finite() {
        return Err(Error::NonFinite("parzen_loglik"));
    }
    let d = x.cols() as f64;
    let log_s = (samples.rows() as f64).ln();
    let consts: Vec<f64> = sigmas
        .iter()
        .map(|&s| -log_s - 0.5 * d * (2.0 * PI * s * s).ln())
        .collect();
    let inv: Vec<f64> = sigmas.iter().map(|&s| 1.0 / (2.0 * s * s)).collect();
    let s_norms = samples.row_sq_norms();
    let st = samples.transpose();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(x.rows()); sigmas.len()];
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let block = x.slice_rows(start, end)?;
        let cross = block.matmul(&st)?;
        let x_norms = block.row_sq_norms();
        let mut dist = vec![0.0; samples.rows()];
        for (r, &xn) in x_norms.iter().enumerate() {
            let mut dmin = f64::INFINITY;
            for ((o, &c), &sn) in dist.iter_mut().zip(cross.row(r)).zip(&s_norms) {
                // Cancellation can leave tiny negatives at zero distance.
                *o = (xn + sn - 2.0 * c).max(0.0);
                dmin = dmin.min(*o);
            }
            for (k, &a) in inv.iter().enumerate() {
                let sum: f64 = dist.iter().map(|&v| (-(v - dmin) * a).exp()).sum();
                out[k].push(-dmin * a + sum.ln() + consts[k]);
            }
        }
        start = end;
    }
    Ok(sigmas.iter().zip(out).map(|(&s, v)| LogLikelihood::new(s, v)).collect())
}

/// `SIGMA_GRID_LEN` log-spaced values from `SIGMA_GRID_MIN` to
/// `SIGMA_GRID_MAX`, both included.
pub fn default_sigma_grid() -> Vec<f64> {
    let (a, b) = (SIGMA_GRID_MIN.ln(), SIGMA_GRID_MAX.ln());
    let n = SIGMA_GRID_LEN - 1;
    (0..=n)
        .map(|i| match i {
            0 => SIGMA_GRID_MIN,
            _ if i == n => SIGMA_GRID_MAX,
            _ => (a + (b - a) * i as f64 / n as f64).exp(),
        })
        .collect()
}

/// The grid value with the highest mean validation log-likelihood; ties go
/// to the smaller σ.
pub fn cv_sigma(samples: &Tensor, valid: &Tensor, grid: &[f64]) -> Result<(f64, Vec<LogLikelihood>)> {
    let scores = parzen_loglik_grid(samples, valid, grid)?;
    let best = pick_sigma(&scores);
    Ok((best, scores))
}

fn pick_sigma(scores: &[LogLikelihood]) -> f64 {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean > best.mean || (s.mean == best.mean && s.sigma < best.sigma) {
            best = s;
        }
    }
    best.sigma
}

/// Cross-validated bandwidth and the resulting test likelihood.
#[derive(Clone, Debug)]
pub struct ParzenReport {
    pub sigma: f64,
    pub validation: Vec<LogLikelihood>,
    pub test: LogLikelihood,
}

impl ParzenReport {
    /// `split,sigma,mean_ll,stderr` rows: every validation σ, then test.
    pub fn csv(&self) -> String {
        let mut s = String::from(PARZEN_CSV_HEADER);
        s.push('\n');
        for v in self.validation.iter().chain([&self.test]) {
            let split = if std::ptr::eq(v, &self.test) { "test" } else { "valid" };
            s.push_str(&format!("{split},{:?},{:?},{:?}\n", v.sigma, v.mean, v.stderr));
        }
        s
    }
}

/// Chooses σ on `valid`, then scores `test` with it.
pub fn parzen_evaluate(samples: &Tensor, valid: &Tensor, test: &Tensor, grid: &[f64]) -> Result<ParzenReport> {
    let (sigma, validation) = cv_sigma(samples, valid, grid)?;
    let est = ParzenEstimate::new(samples.clone(), sigma)?;
    Ok(ParzenReport {
        sigma,
        validation,
        test: parzen_loglik(&est, test)?,
    })
}

/// [`parzen_evaluate`] with real training images as the kernel centres.
pub fn empirical_bound(train: &Tensor, valid: &Tensor, test: &Tensor, grid: &[f64]) -> Result<ParzenReport> {
    parzen_evaluate(train, valid, test, grid)
}
