//! Decoder Jacobians and their spectra, latent sweeps, label extrapolation
//! and latent statistics for a frozen model.

use std::fmt;
use std::str::FromStr;

use crate::dataset::one_hot;
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::nn::{Activation, LayerCache};
use crate::tensor::{svd, Rng, Tensor};

pub const DEFAULT_SWEEP_STEPS: usize = 7;
pub const DEFAULT_SWEEP_SIGMAS: f64 = 2.0;
pub const HISTOGRAM_BINS: usize = 50;

/// Which activations the Jacobian is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianLayer {
    /// The decoder input `{y, z}`.
    Latent,
    /// `h^{-j}`: the decoder hidden layer `j` steps before the output, so
    /// `FromOutput(2)` feeds the output layer directly. `j >= 2`.
    FromOutput(usize),
}

impl fmt::Display for JacobianLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JacobianLayer::Latent => f.write_str("latent"),
            JacobianLayer::FromOutput(j) => write!(f, "h-{j}"),
        }
    }
}

impl FromStr for JacobianLayer {
    type Err = Error;

    /// Accepts `latent`, `yz`, or `-j` / `h-j` with `j >= 2`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" | "yz" => Ok(JacobianLayer::Latent),
            _ => {
                let j = s
                    .strip_prefix("h-")
                    .or_else(|| s.strip_prefix('-'))
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&j| j >= 2)
                    .ok_or_else(|| Error::invalid(format!("unknown jacobian layer {s:?}; use latent, -2, -3, ...")))?;
                Ok(JacobianLayer::FromOutput(j))
            }
        }
    }
}

impl JacobianLayer {
    /// Index into the decoder's hidden layers, or `None` for the latent
    /// layer.
    fn hidden_index(self, model: &Autoencoder) -> Result<Option<usize>> {
        match self {
            JacobianLayer::Latent => Ok(None),
            JacobianLayer::FromOutput(j) => {
                let n = model.decoder.len();
                if j < 2 || j > n {
                    return Err(Error::invalid(format!(
                        "layer h-{j} does not exist; the decoder has {} hidden layers",
                        n - 1
                    )));
                }
                Ok(Some(n - j))
            }
        }
    }
}

/// A single decoder input `{y, z}`, both `1×width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderPoint {
    pub y: Tensor,
    pub z: Tensor,
}

impl DecoderPoint {
    /// One-hot class `c` with `z = 0`.
    pub fn class(model: &Autoencoder, c: usize) -> Result<Self> {
        Ok(DecoderPoint {
            y: one_hot(&[c], model.classes())?,
            z: Tensor::zeros(1, model.latent()),
        })
    }

    /// The encoder's `{ŷ, z}` for a single input row.
    pub fn encoded(model: &Autoencoder, x: &Tensor) -> Result<Self> {
        if x.rows() != 1 {
            return Err(Error::invalid("decoder point needs exactly one input row"));
        }
        let e = model.encode(x)?;
        Ok(DecoderPoint { y: e.yhat, z: e.z })
    }
}

#[derive(Clone, Debug)]
pub struct JacobianReport {
    pub layer: JacobianLayer,
    /// Activations of the chosen layer at the evaluation point.
    pub activations: Vec<f64>,
    /// `∂x̂/∂h`, `D × retained.len()`; column `c` belongs to unit `retained[c]`.
    pub jacobian: Tensor,
    pub retained: Vec<usize>,
    pub pruned: Vec<usize>,
}

/// Exact Jacobian of the decoder output with respect to one layer's
/// activations, by forward-mode products through the frozen linearization.
/// ReLU units with activation exactly 0 are removed. Latent units are never
/// pruned: they are not ReLU outputs, and `z = 0` is a legitimate point.
pub fn decoder_jacobian(model: &Autoencoder, point: &DecoderPoint, layer: JacobianLayer) -> Result<JacobianReport> {
    let hidden = layer.hidden_index(model)?;
    if point.y.rows() != 1 {
        return Err(Error::invalid("decoder point must be a single row"));
    }
    let (_, caches) = model.decode_with_trace(&point.y, &point.z)?;
    let activations: Vec<f64> = match hidden {
        None => point.y.hstack(&point.z)?.into_vec(),
        Some(i) => caches[i].post.data().to_vec(),
    };
    let prunable = hidden.is_some_and(|i| model.decoder[i].activation == Activation::Relu);
    let (retained, pruned): (Vec<usize>, Vec<usize>) =
        (0..activations.len()).partition(|&j| !(prunable && activations[j] == 0.0));
    let jacobian = jacobian_columns(model, &caches, hidden, &retained)?;
    Ok(JacobianReport {
        layer,
        activations,
        jacobian,
        retained,
        pruned,
    })
}

/// Columns of `∂x̂/∂h` for `units`, pushed together as one batch of basis
/// tangents through every layer after `hidden`.
fn jacobian_columns(
    model: &Autoencoder,
    caches: &[LayerCache],
    hidden: Option<usize>,
    units: &[usize],
) -> Result<Tensor> {
    let first = hidden.map_or(0, |i| i + 1);
    let width = model.decoder[first].inputs();
    if units.is_empty() {
        return Ok(Tensor::zeros(model.input_dim(), 0));
    }
    let mut t = Tensor::zeros(units.len(), width);
    for (r, &u) in units.iter().enumerate() {
        t.set(r, u, 1.0);
    }
    for (layer, cache) in model.decoder[first..].iter().zip(&caches[first..]) {
        t = layer.jvp(cache, &t)?;
    }
    Ok(t.transpose())
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub singular_values: Vec<f64>,
    /// Singular values divided by the largest.
    pub normalized: Vec<f64>,
    /// Leading left singular vectors, one per row, in output (image) layout.
    pub vectors: Tensor,
}

/// SVD of the report's Jacobian, keeping the `top` leading vectors.
pub fn jacobian_spectrum(report: &JacobianReport, top: usize) -> Result<Spectrum> {
    if report.jacobian.is_empty() {
        return Err(Error::Empty("jacobian_spectrum: every unit was pruned"));
    }
    let dec = svd(&report.jacobian)?;
    let largest = dec.s[0];
    let normalized = if largest > 0.0 {
        dec.s.iter().map(|s| s / largest).collect()
    } else {
        vec![0.0; dec.s.len()]
    };
    let top = top.min(dec.s.len());
    let idx: Vec<usize> = (0..top).collect();
    Ok(Spectrum {
        vectors: dec.u.select_cols(&idx)?.transpose(),
        singular_values: dec.s,
        normalized,
    })
}

/// `count` distinct retained columns, chosen uniformly, one per output row,
/// with the unit indices they belong to.
pub fn random_columns(report: &JacobianReport, count: usize, rng: &mut Rng) -> Result<(Vec<usize>, Tensor)> {
    let m = report.retained.len();
    if count > m {
        return Err(Error::invalid(format!("asked for {count} columns, only {m} retained")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut order);
    order.truncate(count);
    let cols = report.jacobian.select_cols(&order)?.transpose();
    Ok((order.iter().map(|&c| report.retained[c]).collect(), cols))
}

/// Decoded images laid out as `rows × cols` cells, row-major.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    /// Class per grid row.
    pub classes: Vec<usize>,
    /// Swept value per grid column.
    pub values: Vec<f64>,
    /// `classes.len() · values.len()` images, row `r·values.len() + c`.
    pub images: Tensor,
}

impl SweepGrid {
    pub fn rows(&self) -> usize {
        self.classes.len()
    }

    pub fn cols(&self) -> usize {
        self.values.len()
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        self.images.row(r * self.values.len() + c)
    }
}

/// `steps` evenly spaced values over `[-half_width, half_width]`; a single
/// step sits at 0.
pub fn symmetric_steps(half_width: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..steps)
            .map(|i| half_width * (2.0 * i as f64 / (steps - 1) as f64 - 1.0))
            .collect(),
    }
}

/// Varies `z[dim]` over `±sigmas·sigma` with every other `z` at 0 and `y`
/// one-hot; one grid row per entry of `classes`.
pub fn latent_sweep(
    model: &Autoencoder,
    classes: &[usize],
    dim: usize,
    sigma: f64,
    sigmas: f64,
    steps: usize,
) -> Result<SweepGrid> {
    if dim >= model.latent() {
        return Err(Error::invalid(format!(
            "latent dimension {dim} out of range; the model has {}",
            model.latent()
        )));
    }
    if steps == 0 || sigma.is_nan() || sigma < 0.0 || sigmas.is_nan() || sigmas < 0.0 {
        return Err(Error::invalid("sweep needs steps >= 1 and a non-negative range"));
    }
    let values = symmetric_steps(sigmas * sigma, steps);
    let mut y = Vec::with_capacity(classes.len() * steps);
    let mut z = Tensor::zeros(classes.len() * steps, model.latent());
    for (r, &c) in classes.iter().enumerate() {
        for (s, &v) in values.iter().enumerate() {
            y.push(c);
            z.set(r * steps + s, dim, v);
        }
    }
    let images = model.decode(&one_hot(&y, model.classes())?, &z)?;
    Ok(SweepGrid {
        classes: classes.to_vec(),
        values,
        images,
    })
}

/// Integer scales `-5..=5`.
pub fn default_scales() -> Vec<f64> {
    (-5..=5).map(f64::from).collect()
}

/// Decodes `scale · onehot(c)` with `z` held fixed.
pub fn y_extrapolate(model: &Autoencoder, classes: &[usize], scales: &[f64], z: &Tensor) -> Result<SweepGrid> {
    if z.shape() != (1, model.latent()) {
        return Err(Error::Shape {
            op: "y_extrapolate",
            left: z.shape(),
            right: (1, model.latent()),
        });
    }
    let n = classes.len() * scales.len();
    let mut y = Tensor::zeros(n, model.classes());
    let mut zs = Tensor::zeros(n, model.latent());
    for (r, &c) in classes.iter().enumerate() {
        if c >= model.classes() {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        for (s, &v) in scales.iter().enumerate() {
            let row = r * scales.len() + s;
            y.set(row, c, v);
            zs.row_mut(row).copy_from_slice(z.row(0));
        }
    }
    let images = model.decode(&y, &zs)?;
    if !images.is_finite() {
        return Err(Error::NonFinite("y_extrapolate"));
    }
    Ok(SweepGrid {
        classes: classes.to_vec(),
        values: scales.to_vec(),
        images,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over the observed range. A constant sample is
    /// centred in a unit-wide range.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 {
            return Err(Error::Empty("histogram"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Histogram { edges, counts })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentStats {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation (divides by the count).
    pub std: Vec<f64>,
    pub histograms: Vec<Histogram>,
}

impl LatentStats {
    /// Two-pass mean and standard deviation per column of `z`.
    pub fn from_z(z: &Tensor) -> Result<Self> {
        if z.rows() == 0 {
            return Err(Error::Empty("latent_stats"));
        }
        let n = z.rows() as f64;
        let mean = z.col_mean()?;
        let mut std = Vec::with_capacity(z.cols());
        let mut histograms = Vec::with_capacity(z.cols());
        for (c, &m) in mean.iter().enumerate() {
            let col: Vec<f64> = (0..z.rows()).map(|r| z.get(r, c)).collect();
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            std.push((ss / n).sqrt());
            histograms.push(Histogram::new(&col, HISTOGRAM_BINS)?);
        }
        Ok(LatentStats {
            count: z.rows(),
            mean,
            std,
            histograms,
        })
    }
}

/// Encodes `images` in chunks and summarizes `z`.
pub fn latent_stats(model: &Autoencoder, images: &Tensor) -> Result<LatentStats> {
    LatentStats::from_z(&encode_z(model, images)?)
}

/// `z` for every row of `images`, encoded in chunks of 1000 rows.
pub fn encode_z(model: &Autoencoder, images: &Tensor) -> Result<Tensor> {
    const CHUNK: usize = 1000;
    let mut z = Tensor::zeros(images.rows(), model.latent());
    let mut start = 0;
    while start < images.rows() {
        let end = (start + CHUNK).min(images.rows());
        let e = model.encode(&images.slice_rows(start, end)?)?;
        z.data_mut()[start * model.latent()..end * model.latent()].copy_from_slice(e.z.data());
        start = end;
    }
    Ok(z)
}
