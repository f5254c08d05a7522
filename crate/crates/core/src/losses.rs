//! The three objective terms: squared-error reconstruction, cross-entropy on
//! the class outputs, and the XCov cross-covariance penalty.
//!
//! Reconstruction and cross-entropy are averaged over the batch. XCov is a
//! batch statistic and carries its own `1/N` inside the covariance.

use crate::dataset::check_one_hot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `(1/N) Σ_n ‖x_n − x̂_n‖²`.
pub fn recon_loss(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    same_shape(x, xhat, "recon_loss")?;
    let n = x.rows().max(1) as f64;
    let total: f64 = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / n)
}

/// Gradient of [`recon_loss`] w.r.t. `xhat`: `2(x̂ − x)/N`.
pub fn recon_grad(x: &Tensor, xhat: &Tensor) -> Result<Tensor> {
    same_shape(x, xhat, "recon_grad")?;
    let scale = 2.0 / x.rows().max(1) as f64;
    xhat.sub(x)?.scale(scale)
}

/// `−(1/N) Σ_n Σ_i y_i log ŷ_i` for one-hot `y`.
pub fn xent_loss(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    same_shape(y, yhat, "xent_loss")?;
    check_one_hot(y)?;
    let n = y.rows().max(1) as f64;
    let total: f64 = y
        .data()
        .iter()
        .zip(yhat.data())
        .filter(|(&t, _)| t == 1.0)
        .map(|(_, &p)| -p.max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / n)
}

/// Gradient of [`xent_loss`] through the softmax, w.r.t. the logits:
/// `(ŷ − y)/N`.
pub fn xent_logit_grad(y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
    same_shape(y, yhat, "xent_logit_grad")?;
    check_one_hot(y)?;
    yhat.sub(y)?.scale(1.0 / y.rows().max(1) as f64)
}

/// Batch class outputs `ŷ: N×L` and latent code `z: N×K`.
#[derive(Clone, Copy, Debug)]
pub struct XCovInputs<'a> {
    pub yhat: &'a Tensor,
    pub z: &'a Tensor,
}

impl<'a> XCovInputs<'a> {
    pub fn new(yhat: &'a Tensor, z: &'a Tensor) -> Result<Self> {
        if yhat.rows() != z.rows() {
            return Err(Error::Shape {
                op: "xcov",
                left: yhat.shape(),
                right: z.shape(),
            });
        }
        if yhat.rows() == 0 {
            return Err(Error::Empty("xcov"));
        }
        Ok(XCovInputs { yhat, z })
    }
}

struct Centered {
    yhat: Tensor,
    z: Tensor,
    /// `c_ij = (1/N) Σ_n (ŷ_i − ȳ_i)(z_j − z̄_j)`, shape L×K.
    cov: Tensor,
}

fn centered(inputs: XCovInputs<'_>) -> Result<Centered> {
    let n = inputs.yhat.rows() as f64;
    let yhat = inputs.yhat.center_cols()?;
    let z = inputs.z.center_cols()?;
    let cov = yhat.matmul_tn(&z)?.scale(1.0 / n)?;
    Ok(Centered { yhat, z, cov })
}

/// The batch cross-covariance matrix between `ŷ` and `z` (L×K).
pub fn cross_covariance(inputs: XCovInputs<'_>) -> Result<Tensor> {
    Ok(centered(inputs)?.cov)
}

/// `C = ½ Σ_ij c_ij²`. Zero for a single-row batch.
pub fn xcov_loss(inputs: XCovInputs<'_>) -> Result<f64> {
    let c = centered(inputs)?;
    Ok(0.5 * c.cov.data().iter().map(|v| v * v).sum::<f64>())
}

/// `(∂C/∂ŷ, ∂C/∂z)`:
///
/// `∂C/∂ŷ_ma = Σ_j c_aj (z_mj − z̄_j)/N` and `∂C/∂z_mb = Σ_i c_ib (ŷ_mi − ȳ_i)/N`.
///
/// The batch means are treated as constants. That is exact: their own
/// derivative contributes a factor `Σ_n (z_nj − z̄_j)`, which vanishes.
pub fn xcov_grads(inputs: XCovInputs<'_>) -> Result<(Tensor, Tensor)> {
    let c = centered(inputs)?;
    let n = inputs.yhat.rows() as f64;
    let d_yhat = c.z.matmul_nt(&c.cov)?.scale(1.0 / n)?;
    let d_z = c.yhat.matmul(&c.cov)?.scale(1.0 / n)?;
    Ok((d_yhat, d_z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::one_hot;
    use crate::nn::softmax_rows;
    use crate::tensor::{rng_normal, Rng};
    use proptest::prelude::*;

    /// Oracle: evaluates C straight from the double sum, with the
    /// means recomputed from scratch.
    fn xcov_direct(yhat: &Tensor, z: &Tensor) -> f64 {
        let n = yhat.rows();
        let mut total = 0.0;
        for i in 0..yhat.cols() {
            let ybar: f64 = (0..n).map(|r| yhat.get(r, i)).sum::<f64>() / n as f64;
            for j in 0..z.cols() {
                let zbar: f64 = (0..n).map(|r| z.get(r, j)).sum::<f64>() / n as f64;
                let c: f64 = (0..n)
                    .map(|r| (yhat.get(r, i) - ybar) * (z.get(r, j) - zbar))
                    .sum::<f64>()
                    / n as f64;
                total += c * c;
            }
        }
        0.5 * total
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn recon_examples() {
        let x = Tensor::from_rows(&[[0.1, 0.2]]).unwrap();
        assert_eq!(recon_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(
            recon_loss(&Tensor::zeros(1, 4), &Tensor::filled(1, 4, 1.0)).unwrap(),
            4.0
        );
        assert!(recon_loss(&Tensor::zeros(1, 4), &Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn recon_grad_matches_finite_differences() {
        let mut rng = Rng::new(1);
        let x = rng_normal(&mut rng, 3, 5, 0.0, 1.0).unwrap();
        let xh = rng_normal(&mut rng, 3, 5, 0.0, 1.0).unwrap();
        let g = recon_grad(&x, &xh).unwrap();
        let h = 1e-6;
        for k in 0..xh.len() {
            let (mut p, mut m) = (xh.clone(), xh.clone());
            p.data_mut()[k] += h;
            m.data_mut()[k] -= h;
            let fd = (recon_loss(&x, &p).unwrap() - recon_loss(&x, &m).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[k]).abs() < 1e-7);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn xent_examples() {
        let y = one_hot(&[2, 0], 3).unwrap();
        assert_eq!(xent_loss(&y, &y).unwrap(), 0.0);
        let y10 = one_hot(&[4], 10).unwrap();
        let uniform = Tensor::filled(1, 10, 0.1);
        assert!((xent_loss(&y10, &uniform).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!((xent_loss(&y10, &uniform).unwrap() - 2.302585).abs() < 1e-6);
        assert!(xent_loss(&Tensor::filled(1, 10, 0.1), &uniform).is_err());
    }

    #[test]
    fn fused_xent_grad_matches_finite_differences() {
        let mut rng = Rng::new(2);
        let logits = rng_normal(&mut rng, 4, 5, 0.0, 2.0).unwrap();
        let y = one_hot(&[0, 3, 3, 1], 5).unwrap();
        let loss = |l: &Tensor| xent_loss(&y, &softmax_rows(l)).unwrap();
        let g = xent_logit_grad(&y, &softmax_rows(&logits)).unwrap();
        let h = 1e-5;
        for k in 0..logits.len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[k] += h;
            m.data_mut()[k] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(rel_err(g.data()[k], fd) < 1e-6, "{k}: {} vs {fd}", g.data()[k]);
        }
    }

    #[test]
    fn xcov_hand_example() {
        // c₁₁ = 0.5, c₂₁ = −0.5, C = ½(0.25 + 0.25).
        let yhat = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let z = Tensor::from_rows(&[[1.0], [-1.0]]).unwrap();
        let inputs = XCovInputs::new(&yhat, &z).unwrap();
        assert_eq!(cross_covariance(inputs).unwrap().data(), &[0.5, -0.5]);
        assert_eq!(xcov_loss(inputs).unwrap(), 0.25);
    }

    #[test]
    fn constant_latent_gives_zero() {
        let mut rng = Rng::new(3);
        let yhat = softmax_rows(&rng_normal(&mut rng, 6, 3, 0.0, 1.0).unwrap());
        let z = Tensor::from_rows(&[[0.7, -2.0]; 6]).unwrap();
        let inputs = XCovInputs::new(&yhat, &z).unwrap();
        assert_eq!(xcov_loss(inputs).unwrap(), 0.0);
        let (gy, gz) = xcov_grads(inputs).unwrap();
        assert!(gy.data().iter().chain(gz.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_batch_is_zero() {
        let yhat = Tensor::from_rows(&[[0.3, 0.7]]).unwrap();
        let z = Tensor::from_rows(&[[5.0]]).unwrap();
        assert_eq!(xcov_loss(XCovInputs::new(&yhat, &z).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let a = Tensor::zeros(3, 2);
        let b = Tensor::zeros(4, 2);
        assert!(XCovInputs::new(&a, &b).is_err());
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let mut rng = Rng::new(4);
        let yhat = rng_normal(&mut rng, 7, 3, 0.0, 1.0).unwrap();
        let z = rng_normal(&mut rng, 7, 4, 0.0, 1.0).unwrap();
        let (gy, gz) = xcov_grads(XCovInputs::new(&yhat, &z).unwrap()).unwrap();
        for g in [gy, gz] {
            for s in g.col_mean().unwrap() {
                assert!(s.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_matches_direct_sum() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let yhat = rng_normal(&mut rng, 7, 3, 0.0, 1.0).unwrap();
            let z = rng_normal(&mut rng, 7, 4, 0.0, 1.0).unwrap();
            let c = xcov_loss(XCovInputs::new(&yhat, &z).unwrap()).unwrap();
            assert!(rel_err(c, xcov_direct(&yhat, &z)) < 1e-12);
        }
    }

    /// Central differences of the direct double sum, means recomputed at
    /// every perturbation.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let h = 1e-5;
        for _ in 0..100 {
            let yhat = rng_normal(&mut rng, 7, 3, 0.0, 1.0).unwrap();
            let z = rng_normal(&mut rng, 7, 4, 0.0, 1.0).unwrap();
            let (gy, gz) = xcov_grads(XCovInputs::new(&yhat, &z).unwrap()).unwrap();
            for k in 0..yhat.len() {
                let (mut p, mut m) = (yhat.clone(), yhat.clone());
                p.data_mut()[k] += h;
                m.data_mut()[k] -= h;
                let fd = (xcov_direct(&p, &z) - xcov_direct(&m, &z)) / (2.0 * h);
                assert!(rel_err(gy.data()[k], fd) < 1e-7);
            }
            for k in 0..z.len() {
                let (mut p, mut m) = (z.clone(), z.clone());
                p.data_mut()[k] += h;
                m.data_mut()[k] -= h;
                let fd = (xcov_direct(&yhat, &p) - xcov_direct(&yhat, &m)) / (2.0 * h);
                assert!(rel_err(gz.data()[k], fd) < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn permutation_symmetry(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = Rng::new(seed);
            let yhat = rng_normal(&mut rng, n, 3, 0.0, 1.0).unwrap();
            let z = rng_normal(&mut rng, n, 2, 0.0, 1.0).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let (py, pz) = (yhat.select_rows(&perm).unwrap(), z.select_rows(&perm).unwrap());
            let a = XCovInputs::new(&yhat, &z).unwrap();
            let b = XCovInputs::new(&py, &pz).unwrap();
            prop_assert!(rel_err(xcov_loss(a).unwrap(), xcov_loss(b).unwrap()) < 1e-12);
            let (gy, gz) = xcov_grads(a).unwrap();
            let (pgy, pgz) = xcov_grads(b).unwrap();
            prop_assert!(gy.select_rows(&perm).unwrap().max_abs_diff(&pgy).unwrap() < 1e-12);
            prop_assert!(gz.select_rows(&perm).unwrap().max_abs_diff(&pgz).unwrap() < 1e-12);
        }

        #[test]
        fn argument_swap_symmetry(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = Rng::new(seed);
            let yhat = rng_normal(&mut rng, n, 3, 0.0, 1.0).unwrap();
            let z = rng_normal(&mut rng, n, 2, 0.0, 1.0).unwrap();
            let a = xcov_loss(XCovInputs::new(&yhat, &z).unwrap()).unwrap();
            let b = xcov_loss(XCovInputs::new(&z, &yhat).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn latent_translation_invariance(seed in any::<u64>(), n in 2usize..12, shift in -10.0f64..10.0) {
            let mut rng = Rng::new(seed);
            let yhat = rng_normal(&mut rng, n, 3, 0.0, 1.0).unwrap();
            let z = rng_normal(&mut rng, n, 2, 0.0, 1.0).unwrap();
            let zs = z.add_row(&[shift, -shift]).unwrap();
            let a = XCovInputs::new(&yhat, &z).unwrap();
            let b = XCovInputs::new(&yhat, &zs).unwrap();
            let (la, lb) = (xcov_loss(a).unwrap(), xcov_loss(b).unwrap());
            prop_assert!((la - lb).abs() <= 1e-10 * la.max(1.0));
            let (gya, gza) = xcov_grads(a).unwrap();
            let (gyb, gzb) = xcov_grads(b).unwrap();
            prop_assert!(gya.max_abs_diff(&gyb).unwrap() < 1e-10);
            prop_assert!(gza.max_abs_diff(&gzb).unwrap() < 1e-10);
        }
    }
}
