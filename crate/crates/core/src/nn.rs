//! Fully connected layers with exact reverse- and forward-mode derivatives.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    /// Stable on-disk tag.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softmax => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softmax),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Row-wise softmax with the row maximum subtracted before exponentiating.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `s ⊙ (g − ⟨g, s⟩)` per row: the softmax Jacobian applied to `g`. The
/// Jacobian is symmetric, so this serves both as VJP and JVP.
fn softmax_jacobian_product(s: &Tensor, g: &Tensor) -> Tensor {
    let mut out = g.clone();
    for r in 0..out.rows() {
        let sr = s.row(r);
        let dot: f64 = sr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
        for (o, &si) in out.row_mut(r).iter_mut().zip(sr) {
            *o = si * (*o - dot);
        }
    }
    out
}

/// `y = act(x · Wᵀ + bᵀ)` with `W: out×in` and `b: out×1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Everything `backward` and `jvp` need from one forward call.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub input: Tensor,
    pub pre: Tensor,
    pub post: Tensor,
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if bias.shape() != (weight.rows(), 1) {
            return Err(Error::Shape {
                op: "DenseLayer::new",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        if !weight.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("DenseLayer::new"));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn init_glorot(rng: &mut Rng, inputs: usize, outputs: usize, activation: Activation) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("layer dimensions must be at least 1"));
        }
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.uniform(-limit, limit)).collect();
        DenseLayer::new(
            Tensor::from_vec(outputs, inputs, data)?,
            Tensor::zeros(outputs, 1),
            activation,
        )
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn check_input(&self, x: &Tensor, op: &'static str) -> Result<()> {
        if x.cols() != self.inputs() {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: self.weight.shape(),
            });
        }
        Ok(())
    }

    fn activate(&self, pre: &Tensor) -> Result<Tensor> {
        match self.activation {
            Activation::Identity => Ok(pre.clone()),
            Activation::Relu => pre.map(|v| v.max(0.0)),
            Activation::Softmax => softmax_rows(pre).checked("softmax"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        self.check_input(x, "DenseLayer::forward")?;
        let pre = x.matmul_nt(&self.weight)?.add_row(self.bias.data())?;
        let post = self.activate(&pre)?;
        let cache = LayerCache {
            input: x.clone(),
            pre,
            post: post.clone(),
        };
        Ok((post, cache))
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, "DenseLayer::apply")?;
        let pre = x.matmul_nt(&self.weight)?.add_row(self.bias.data())?;
        self.activate(&pre)
    }

    fn check_cache(&self, cache: &LayerCache, g: &Tensor, op: &'static str) -> Result<()> {
        if g.shape() != cache.pre.shape() || cache.pre.cols() != self.outputs() {
            return Err(Error::Shape {
                op,
                left: cache.pre.shape(),
                right: g.shape(),
            });
        }
        Ok(())
    }

    /// Pulls a gradient w.r.t. the layer output back to the pre-activation.
    /// The ReLU derivative at exactly 0 is taken as 0.
    pub fn activation_vjp(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<Tensor> {
        self.check_cache(cache, grad_out, "DenseLayer::activation_vjp")?;
        match self.activation {
            Activation::Identity => Ok(grad_out.clone()),
            Activation::Relu => {
                let mut g = grad_out.clone();
                for (gv, &p) in g.data_mut().iter_mut().zip(cache.pre.data()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok(g)
            }
            Activation::Softmax => softmax_jacobian_product(&cache.post, grad_out).checked("softmax vjp"),
        }
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<LayerGrads> {
        let grad_pre = self.activation_vjp(cache, grad_out)?;
        self.backward_pre(cache, &grad_pre)
    }

    /// Backward pass from a gradient already expressed w.r.t. the
    /// pre-activation (e.g. the fused softmax/cross-entropy gradient).
    pub fn backward_pre(&self, cache: &LayerCache, grad_pre: &Tensor) -> Result<LayerGrads> {
        self.check_cache(cache, grad_pre, "DenseLayer::backward_pre")?;
        let weight = grad_pre.matmul_tn(&cache.input)?;
        let mut bias = Tensor::zeros(self.outputs(), 1);
        for r in grad_pre.iter_rows() {
            for (b, &g) in bias.data_mut().iter_mut().zip(r) {
                *b += g;
            }
        }
        let input = grad_pre.matmul(&self.weight)?;
        Ok(LayerGrads {
            input,
            weight,
            bias: bias.checked("bias grad")?,
        })
    }

    /// Forward-mode derivative: maps tangents of the input (one per row) to
    /// tangents of the output, linearized at the cached activation pattern.
    /// Tangent rows need not match the cache's batch rows one-to-one when
    /// the cache holds a single example; each tangent row is then pushed
    /// through that example's linearization.
    pub fn jvp(&self, cache: &LayerCache, tangent_in: &Tensor) -> Result<Tensor> {
        self.check_input(tangent_in, "DenseLayer::jvp")?;
        let mut t = tangent_in.matmul_nt(&self.weight)?;
        let single = cache.pre.rows() == 1;
        if !single && cache.pre.rows() != t.rows() {
            return Err(Error::Shape {
                op: "DenseLayer::jvp",
                left: cache.pre.shape(),
                right: t.shape(),
            });
        }
        let cache_row = |r: usize| if single { 0 } else { r };
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => {
                for r in 0..t.rows() {
                    let pre = cache.pre.row(cache_row(r));
                    for (v, &p) in t.row_mut(r).iter_mut().zip(pre) {
                        if p <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            Activation::Softmax => {
                for r in 0..t.rows() {
                    let s = cache.post.row(cache_row(r));
                    let dot: f64 = s.iter().zip(t.row(r)).map(|(a, b)| a * b).sum();
                    for (v, &si) in t.row_mut(r).iter_mut().zip(s) {
                        *v = si * (*v - dot);
                    }
                }
            }
        }
        t.checked("jvp")
    }
}
