//! The semi-supervised autoencoder: encoder → split head (`ŷ` softmax, `z`
//! linear) → decoder over `[y, z]`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{accuracy, evaluate, EvalMetrics, ObjectiveConfig, StepRecord, Trainer, METRICS_CSV_HEADER};

use crate::error::{Error, Result};
use crate::losses::{recon_grad, recon_loss, xcov_grads, xcov_loss, xent_logit_grad, xent_loss, XCovInputs};
use crate::nn::{Activation, DenseLayer, LayerCache};
use crate::tensor::{Rng, Tensor};

/// Layer widths. The decoder output width always equals `input_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub classes: usize,
    pub latent: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Architecture {
    /// 784 → 500 → 500 → (10 softmax, 2 linear) → 500 → 500 → 784 linear.
    pub fn mnist() -> Self {
        Architecture::symmetric(784, &[500, 500], 10, 2)
    }

    /// Encoder hidden widths `hidden`, decoder hidden widths mirrored.
    pub fn symmetric(input_dim: usize, hidden: &[usize], classes: usize, latent: usize) -> Self {
        Architecture {
            input_dim,
            encoder_hidden: hidden.to_vec(),
            classes,
            latent,
            decoder_hidden: hidden.iter().rev().copied().collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let widths = self.encoder_hidden.iter().chain(&self.decoder_hidden).chain([
            &self.input_dim,
            &self.classes,
            &self.latent,
        ]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!("architecture has a zero-width layer: {self:?}")));
        }
        Ok(())
    }
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub hidden: Vec<LayerCache>,
    pub y_head: LayerCache,
    pub z_head: LayerCache,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub yhat: Tensor,
    pub z: Tensor,
}

/// Values of the three objective terms on one batch, and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub recon: f64,
    pub xent: f64,
    pub xcov: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: Vec<DenseLayer>,
    pub y_head: DenseLayer,
    pub z_head: DenseLayer,
    pub decoder: Vec<DenseLayer>,
}

impl Autoencoder {
    /// Glorot-initialized network. Hidden layers are ReLU, the decoder
    /// output is linear.
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut encoder = Vec::new();
        let mut width = arch.input_dim;
        for &h in &arch.encoder_hidden {
            encoder.push(DenseLayer::init_glorot(rng, width, h, Activation::Relu)?);
            width = h;
        }
        let y_head = DenseLayer::init_glorot(rng, width, arch.classes, Activation::Softmax)?;
        let z_head = DenseLayer::init_glorot(rng, width, arch.latent, Activation::Identity)?;
        let mut decoder = Vec::new();
        let mut width = arch.classes + arch.latent;
        for &h in &arch.decoder_hidden {
            decoder.push(DenseLayer::init_glorot(rng, width, h, Activation::Relu)?);
            width = h;
        }
        decoder.push(DenseLayer::init_glorot(
            rng,
            width,
            arch.input_dim,
            Activation::Identity,
        )?);
        Autoencoder::from_parts(encoder, y_head, z_head, decoder)
    }

    /// Assembles a network from existing layers, checking that widths chain.
    pub fn from_parts(
        encoder: Vec<DenseLayer>,
        y_head: DenseLayer,
        z_head: DenseLayer,
        decoder: Vec<DenseLayer>,
    ) -> Result<Self> {
        let bad = |what: &str| Err(Error::invalid(format!("inconsistent autoencoder: {what}")));
        let input_dim = encoder.first().map_or(y_head.inputs(), DenseLayer::inputs);
        for pair in encoder.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return bad("encoder widths do not chain");
            }
        }
        let enc_out = encoder.last().map_or(input_dim, DenseLayer::outputs);
        if y_head.inputs() != enc_out || z_head.inputs() != enc_out {
            return bad("heads do not consume the encoder output");
        }
        if y_head.activation != Activation::Softmax || z_head.activation != Activation::Identity {
            return bad("heads must be softmax (y) and identity (z)");
        }
        if encoder
            .iter()
            .chain(&decoder)
            .any(|l| l.activation == Activation::Softmax)
        {
            return bad("softmax is only allowed in the y head");
        }
        let Some(first) = decoder.first() else {
            return bad("decoder is empty");
        };
        if first.inputs() != y_head.outputs() + z_head.outputs() {
            return bad("decoder input width must equal classes + latent");
        }
        for pair in decoder.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return bad("decoder widths do not chain");
            }
        }
        if decoder.last().map(DenseLayer::outputs) != Some(input_dim) {
            return bad("decoder output width must equal the input width");
        }
        Ok(Autoencoder {
            encoder,
            y_head,
            z_head,
            decoder,
        })
    }

    pub fn architecture(&self) -> Architecture {
        let n_dec = self.decoder.len();
        Architecture {
            input_dim: self.input_dim(),
            encoder_hidden: self.encoder.iter().map(DenseLayer::outputs).collect(),
            classes: self.classes(),
            latent: self.latent(),
            decoder_hidden: self.decoder[..n_dec - 1].iter().map(DenseLayer::outputs).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(self.y_head.inputs(), DenseLayer::inputs)
    }

    pub fn classes(&self) -> usize {
        self.y_head.outputs()
    }

    pub fn latent(&self) -> usize {
        self.z_head.outputs()
    }

    /// Layers in parameter order: encoder, y head, z head, decoder.
    pub fn layers(&self) -> Vec<&DenseLayer> {
        let mut v: Vec<&DenseLayer> = self.encoder.iter().collect();
        v.push(&self.y_head);
        v.push(&self.z_head);
        v.extend(self.decoder.iter());
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self.encoder.iter_mut().collect();
        v.push(&mut self.y_head);
        v.push(&mut self.z_head);
        v.extend(self.decoder.iter_mut());
        v
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.encoder.len()).map(|i| format!("encoder.{i}")).collect();
        v.push("y_head".into());
        v.push("z_head".into());
        v.extend((0..self.decoder.len()).map(|i| format!("decoder.{i}")));
        v
    }

    /// Parameter tensors: `weight, bias` per layer in [`Self::layers`] order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layer_names()
            .into_iter()
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "encode",
                left: x.shape(),
                right: (x.rows(), self.input_dim()),
            });
        }
        Ok(())
    }

    pub fn encode_with_trace(&self, x: &Tensor) -> Result<(Encoded, EncoderTrace)> {
        self.check_input(x)?;
        let mut hidden = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for layer in &self.encoder {
            let (out, cache) = layer.forward(&h)?;
            hidden.push(cache);
            h = out;
        }
        let (yhat, y_head) = self.y_head.forward(&h)?;
        let (z, z_head) = self.z_head.forward(&h)?;
        Ok((Encoded { yhat, z }, EncoderTrace { hidden, y_head, z_head }))
    }

    /// `{ŷ, z} = F(x; θ)`.
    pub fn encode(&self, x: &Tensor) -> Result<Encoded> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.apply(&h)?;
        }
        Ok(Encoded {
            yhat: self.y_head.apply(&h)?,
            z: self.z_head.apply(&h)?,
        })
    }

    fn decoder_input(&self, y: &Tensor, z: &Tensor) -> Result<Tensor> {
        if y.cols() != self.classes() || z.cols() != self.latent() || y.rows() != z.rows() {
            return Err(Error::Shape {
                op: "decode",
                left: y.shape(),
                right: z.shape(),
            });
        }
        y.hstack(z)
    }

    /// Runs the decoder on `[y, z]` and keeps every layer's cache.
    pub fn decode_with_trace(&self, y: &Tensor, z: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut h = self.decoder_input(y, z)?;
        let mut caches = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (out, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// `x̂ = G(y, z; φ)`. `y` may hold any finite values, not just
    /// probabilities.
    pub fn decode(&self, y: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut h = self.decoder_input(y, z)?;
        for layer in &self.decoder {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    /// Reconstruction through the class outputs: `G(F(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let e = self.encode(x)?;
        self.decode(&e.yhat, &e.z)
    }

    /// Objective value only. With `y = None` the batch is unlabeled: the
    /// supervised term is dropped and the decoder consumes `ŷ`.
    pub fn objective(&self, x: &Tensor, y: Option<&Tensor>, beta: f64, gamma: f64) -> Result<StepMetrics> {
        let e = self.encode(x)?;
        let y_dec = y.unwrap_or(&e.yhat);
        let xhat = self.decode(y_dec, &e.z)?;
        let recon = recon_loss(x, &xhat)?;
        let xent = match y {
            Some(y) => xent_loss(y, &e.yhat)?,
            None => 0.0,
        };
        let xcov = xcov_loss(XCovInputs::new(&e.yhat, &e.z)?)?;
        metrics(recon, xent, xcov, if y.is_some() { beta } else { 0.0 }, gamma)
    }

    /// Objective value and its gradient w.r.t. every parameter (in
    /// [`Self::params`] order), from one combined backward pass.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        y: Option<&Tensor>,
        beta: f64,
        gamma: f64,
    ) -> Result<(StepMetrics, Vec<Tensor>)> {
        if let Some(y) = y {
            if y.shape() != (x.rows(), self.classes()) {
                return Err(Error::Shape {
                    op: "labels",
                    left: y.shape(),
                    right: (x.rows(), self.classes()),
                });
            }
        }
        let beta = if y.is_some() { beta } else { 0.0 };
        let (enc, trace) = self.encode_with_trace(x)?;
        let y_dec = y.unwrap_or(&enc.yhat);
        let (xhat, dec_caches) = self.decode_with_trace(y_dec, &enc.z)?;

        let recon = recon_loss(x, &xhat)?;
        let xent = match y {
            Some(y) => xent_loss(y, &enc.yhat)?,
            None => 0.0,
        };
        let xcov_in = XCovInputs::new(&enc.yhat, &enc.z)?;
        let xcov = xcov_loss(xcov_in)?;
        let m = metrics(recon, xent, xcov, beta, gamma)?;

        // Decoder, from the reconstruction term only.
        let mut dec_grads = Vec::with_capacity(self.decoder.len());
        let mut g = recon_grad(x, &xhat)?;
        for (layer, cache) in self.decoder.iter().zip(&dec_caches).rev() {
            let lg = layer.backward(cache, &g)?;
            g = lg.input;
            dec_grads.push((lg.weight, lg.bias));
        }
        dec_grads.reverse();
        let (l, k) = (self.classes(), self.latent());
        let g_ydec = g.slice_cols(0, l)?;
        let mut g_z = g.slice_cols(l, l + k)?;

        let mut g_yhat = Tensor::zeros(x.rows(), l);
        if gamma != 0.0 {
            let (dy, dz) = xcov_grads(xcov_in)?;
            g_yhat.axpy(gamma, &dy)?;
            g_z.axpy(gamma, &dz)?;
        }
        if y.is_none() {
            g_yhat.axpy(1.0, &g_ydec)?;
        }
        let mut g_logits = self.y_head.activation_vjp(&trace.y_head, &g_yhat)?;
        if let Some(y) = y {
            if beta != 0.0 {
                g_logits.axpy(beta, &xent_logit_grad(y, &enc.yhat)?)?;
            }
        }
        let yg = self.y_head.backward_pre(&trace.y_head, &g_logits)?;
        let zg = self.z_head.backward(&trace.z_head, &g_z)?;

        let mut g_h = yg.input.add(&zg.input)?;
        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        for (layer, cache) in self.encoder.iter().zip(&trace.hidden).rev() {
            let lg = layer.backward(cache, &g_h)?;
            g_h = lg.input;
            enc_grads.push((lg.weight, lg.bias));
        }
        enc_grads.reverse();

        let mut grads = Vec::with_capacity(2 * (self.encoder.len() + self.decoder.len() + 2));
        for (w, b) in enc_grads
            .into_iter()
            .chain([(yg.weight, yg.bias), (zg.weight, zg.bias)])
            .chain(dec_grads)
        {
            grads.push(w);
            grads.push(b);
        }
        Ok((m, grads))
    }
}

fn metrics(recon: f64, xent: f64, xcov: f64, beta: f64, gamma: f64) -> Result<StepMetrics> {
    let total = recon + beta * xent + gamma * xcov;
    if !total.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(StepMetrics {
        recon,
        xent,
        xcov,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::one_hot;
    use crate::tensor::rng_normal;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture::symmetric(6, &[5], 2, 2)
    }

    fn uniform(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn default_shapes() {
        let mut rng = Rng::new(0);
        let m = Autoencoder::new(&Architecture::mnist(), &mut rng).unwrap();
        assert_eq!(m.decoder[0].inputs(), 12);
        let widths: Vec<usize> = m.layers().iter().map(|l| l.outputs()).collect();
        assert_eq!(widths, vec![500, 500, 10, 2, 500, 500, 784]);
        let x = uniform(&mut rng, 3, 784);
        let e = m.encode(&x).unwrap();
        assert_eq!(e.z.shape(), (3, 2));
        for r in e.yhat.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.reconstruct(&x).unwrap().shape(), (3, 784));
        assert_eq!(m.architecture(), Architecture::mnist());
    }

    #[test]
    fn deterministic_untrained_outputs() {
        let a = Autoencoder::new(&tiny_arch(), &mut Rng::new(5)).unwrap();
        let b = Autoencoder::new(&tiny_arch(), &mut Rng::new(5)).unwrap();
        let x = uniform(&mut Rng::new(1), 4, 6);
        assert_eq!(a.encode(&x).unwrap().z, b.encode(&x).unwrap().z);
    }

    #[test]
    fn decode_accepts_out_of_range_labels() {
        let mut rng = Rng::new(2);
        let m = Autoencoder::new(&tiny_arch(), &mut rng).unwrap();
        let y = Tensor::from_rows(&[[-5.0, 5.0], [3.0, -2.5]]).unwrap();
        let z = rng_normal(&mut rng, 2, 2, 0.0, 1.0).unwrap();
        let a = m.decode(&y, &z).unwrap();
        assert_eq!(a.shape(), (2, 6));
        assert_eq!(a, m.decode(&y, &z).unwrap());
        assert!(m.decode(&Tensor::zeros(2, 3), &z).is_err());
        assert!(m.decode(&y, &Tensor::zeros(1, 2)).is_err());
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = Autoencoder::new(&tiny_arch(), &mut Rng::new(2)).unwrap();
        assert!(m.encode(&Tensor::zeros(2, 5)).is_err());
    }

    #[test]
    fn inconsistent_parts_are_rejected() {
        let mut m = Autoencoder::new(&tiny_arch(), &mut Rng::new(2)).unwrap();
        m.decoder.remove(0);
        assert!(Autoencoder::from_parts(m.encoder, m.y_head, m.z_head, m.decoder).is_err());
    }

    #[test]
    fn unlabeled_batch_drops_supervised_term() {
        let mut rng = Rng::new(3);
        let m = Autoencoder::new(&tiny_arch(), &mut rng).unwrap();
        let x = uniform(&mut rng, 5, 6);
        let (met, grads) = m.loss_and_grads(&x, None, 10.0, 1.0).unwrap();
        assert_eq!(met.xent, 0.0);
        assert!((met.total - (met.recon + met.xcov)).abs() < 1e-15);
        assert_eq!(grads.len(), m.params().len());
        let obj = m.objective(&x, None, 10.0, 1.0).unwrap();
        assert_eq!(obj, met);
    }

    #[test]
    fn label_shape_mismatch() {
        let mut rng = Rng::new(3);
        let m = Autoencoder::new(&tiny_arch(), &mut rng).unwrap();
        let x = uniform(&mut rng, 4, 6);
        let y = one_hot(&[0, 1, 0], 2).unwrap();
        assert!(m.loss_and_grads(&x, Some(&y), 1.0, 1.0).is_err());
    }

    /// Worst relative error between analytic and central-difference
    /// gradients over every parameter, or `None` when a ReLU
    /// pre-activation sits close enough to its kink to spoil the difference.
    fn fd_check(labeled: bool, seed: u64) -> Option<f64> {
        let mut rng = Rng::new(seed);
        let mut m = Autoencoder::new(&tiny_arch(), &mut rng).unwrap();
        for p in m.params_mut() {
            for v in p.data_mut() {
                *v += 0.1 * rng.normal();
            }
        }
        let x = uniform(&mut rng, 8, 6);
        let classes: Vec<usize> = (0..8).map(|_| rng.below(2)).collect();
        let y = one_hot(&classes, 2).unwrap();
        let y = labeled.then_some(&y);

        let (enc, trace) = m.encode_with_trace(&x).unwrap();
        let (_, dec) = m.decode_with_trace(y.unwrap_or(&enc.yhat), &enc.z).unwrap();
        let near_kink = trace
            .hidden
            .iter()
            .chain(&dec[..dec.len() - 1])
            .any(|c| c.pre.data().iter().any(|v| v.abs() < 1e-4));
        if near_kink {
            return None;
        }

        let (_, grads) = m.loss_and_grads(&x, y, 1.0, 1.0).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = m.clone();
                plus.params_mut()[pi].data_mut()[k] += h;
                let mut minus = m.clone();
                minus.params_mut()[pi].data_mut()[k] -= h;
                let fd = (plus.objective(&x, y, 1.0, 1.0).unwrap().total
                    - minus.objective(&x, y, 1.0, 1.0).unwrap().total)
                    / (2.0 * h);
                let a = g.data()[k];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
        }
        Some(worst)
    }

    fn fd_over_seeds(labeled: bool) {
        let mut checked = 0;
        for seed in 0.. {
            if let Some(worst) = fd_check(labeled, seed) {
                assert!(worst < 1e-5, "seed {seed}: {worst}");
                checked += 1;
                if checked == 20 {
                    break;
                }
            }
            assert!(seed < 200, "too many seeds near a ReLU kink");
        }
    }

    #[test]
    fn labeled_gradients_match_finite_differences() {
        fd_over_seeds(true);
    }

    #[test]
    fn unlabeled_gradients_match_finite_differences() {
        fd_over_seeds(false);
    }
}
