//! ADADELTA (Zeiler, 2012): per-parameter step sizes from running averages
//! of squared gradients and squared updates, with no global learning rate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
}

impl Default for Adadelta {
    fn default() -> Self {
        Adadelta {
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
        }
    }
}

/// Accumulators for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    /// Running mean of squared gradients.
    pub eg2: Tensor,
    /// Running mean of squared updates.
    pub edx2: Tensor,
}

impl AdadeltaState {
    pub fn zeros_like(param: &Tensor) -> Self {
        AdadeltaState {
            eg2: Tensor::zeros(param.rows(), param.cols()),
            edx2: Tensor::zeros(param.rows(), param.cols()),
        }
    }
}

impl Adadelta {
    pub fn new(rho: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) || eps.is_nan() || eps <= 0.0 {
            return Err(Error::invalid(format!(
                "adadelta needs 0 <= rho < 1 and eps > 0, got rho={rho}, eps={eps}"
            )));
        }
        Ok(Adadelta { rho, eps })
    }

    /// One elementwise step:
    ///
    /// ```text
    /// Eg²  ← ρ·Eg² + (1−ρ)·g²
    /// Δ    = −sqrt((EΔ² + ε) / (Eg² + ε)) · g
    /// EΔ²  ← ρ·EΔ² + (1−ρ)·Δ²
    /// θ    ← θ + Δ
    /// ```
    pub fn update(&self, state: &mut AdadeltaState, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() || state.eg2.shape() != param.shape() || state.edx2.shape() != param.shape() {
            return Err(Error::Shape {
                op: "adadelta_update",
                left: param.shape(),
                right: grad.shape(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("adadelta gradient"));
        }
        let (rho, eps) = (self.rho, self.eps);
        let eg2 = state.eg2.data_mut();
        let edx2 = state.edx2.data_mut();
        for (((p, &g), e), d) in param.data_mut().iter_mut().zip(grad.data()).zip(eg2).zip(edx2) {
            *e = rho * *e + (1.0 - rho) * g * g;
            let delta = -((*d + eps) / (*e + eps)).sqrt() * g;
            *d = rho * *d + (1.0 - rho) * delta * delta;
            *p += delta;
        }
        if param.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("adadelta update"))
        }
    }
}
