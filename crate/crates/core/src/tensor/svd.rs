//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of a working copy of `A` are rotated pairwise until every pair is
//! orthogonal to a relative tolerance; the column norms are then the singular
//! values and the accumulated rotations form `V`.

use super::Tensor;
use crate::error::{Error, Result};

/// Relative off-diagonal threshold: a pair `(p, q)` counts as orthogonal when
/// `|a_p·a_q| <= SVD_TOLERANCE · ‖a_p‖‖a_q‖`.
pub const SVD_TOLERANCE: f64 = 1e-12;
pub const SVD_MAX_SWEEPS: usize = 60;

/// `A = U · diag(s) · Vᵀ` with `U: m×r`, `V: n×r`, `r = min(m, n)` and
/// `s` sorted in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl Svd {
    pub fn reconstruct(&self) -> Result<Tensor> {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (x, &s) in us.row_mut(r).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul_nt(&self.v)
    }
}

pub fn svd(a: &Tensor) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd"));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    svd_tall(a)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

fn pair_mut(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = cols.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

/// Requires `m >= n`.
fn svd_tall(a: &Tensor) -> Result<Svd> {
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut work: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                if alpha < f64::MIN_POSITIVE || beta < f64::MIN_POSITIVE {
                    continue;
                }
                let gamma = dot(&work[p], &work[q]);
                if gamma.abs() <= SVD_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = pair_mut(&mut work, p, q);
                rotate(wp, wq, c, s);
                let (vp, vq) = pair_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: SVD_MAX_SWEEPS });
    }

    let norms: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let zero_cut = f64::MIN_POSITIVE.sqrt();
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > zero_cut {
            u_cols.push(work[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            missing.push(k);
        }
    }
    complete_basis(&mut u_cols, &missing, m);

    let s: Vec<f64> = order
        .iter()
        .map(|&j| if norms[j] > zero_cut { norms[j] } else { 0.0 })
        .collect();
    let mut u = Tensor::zeros(m, n);
    let mut vt = Tensor::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for (i, &x) in u_cols[k].iter().enumerate() {
            u.set(i, k, x);
        }
        for (i, &x) in v[j].iter().enumerate() {
            vt.set(i, k, x);
        }
    }
    Ok(Svd { u, s, v: vt })
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns, by Gram–Schmidt on standard basis vectors.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of classical Gram–Schmidt.
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == k || (missing.contains(&idx) && c.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let proj = dot(&e, c);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-3 {
                cols[k] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_normal, Rng};

    /// Cyclic Jacobi eigensolver for symmetric matrices; independent of the
    /// one-sided SVD path.
    #[allow(clippy::needless_range_loop)]
    fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn check_bounds(a: &Tensor, d: &Svd) {
        let r = a.rows().min(a.cols());
        assert_eq!(d.s.len(), r);
        assert_eq!(d.u.shape(), (a.rows(), r));
        assert_eq!(d.v.shape(), (a.cols(), r));
        assert!(d.s.iter().all(|&s| s >= 0.0));
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        let err = d.reconstruct().unwrap().sub(a).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * a.frobenius_norm().max(1.0), "reconstruction {err}");
        let eye = Tensor::identity(r);
        assert!(d.u.matmul_tn(&d.u).unwrap().max_abs_diff(&eye).unwrap() <= 1e-8);
        assert!(d.v.matmul_tn(&d.v).unwrap().max_abs_diff(&eye).unwrap() <= 1e-8);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let d = svd(&Tensor::identity(4)).unwrap();
        assert_eq!(d.s, vec![1.0; 4]);
    }

    #[test]
    fn diagonal_gives_signed_permutations() {
        let a = Tensor::from_rows(&[[3.0, 0.0], [0.0, 2.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0]);
        for t in [&d.u, &d.v] {
            for x in t.data() {
                assert!(x.abs() == 0.0 || x.abs() == 1.0);
            }
        }
        check_bounds(&a, &d);
    }

    #[test]
    fn squared_values_match_gram_eigenvalues() {
        let mut rng = Rng::new(17);
        let a = rng_normal(&mut rng, 5, 3, 0.0, 1.0).unwrap();
        let d = svd(&a).unwrap();
        let ev = symmetric_eigenvalues(&a.matmul_tn(&a).unwrap());
        for (s, e) in d.s.iter().zip(&ev) {
            assert!((s * s - e).abs() <= 1e-10 * ev[0], "{s}^2 vs {e}");
        }
    }

    #[test]
    fn wide_and_rank_deficient() {
        let mut rng = Rng::new(5);
        let wide = rng_normal(&mut rng, 3, 7, 0.0, 1.0).unwrap();
        check_bounds(&wide, &svd(&wide).unwrap());

        let col = rng_normal(&mut rng, 6, 1, 0.0, 1.0).unwrap();
        let row = rng_normal(&mut rng, 1, 4, 0.0, 1.0).unwrap();
        let rank1 = col.matmul(&row).unwrap();
        let d = svd(&rank1).unwrap();
        check_bounds(&rank1, &d);
        assert!(d.s[1] <= 1e-12 * d.s[0]);

        let zero = Tensor::zeros(4, 3);
        let d = svd(&zero).unwrap();
        assert_eq!(d.s, vec![0.0; 3]);
        check_bounds(&zero, &d);
    }

    #[test]
    fn random_matrices_satisfy_bounds() {
        let mut rng = Rng::new(2024);
        for _ in 0..200 {
            let m = 1 + rng.below(20);
            let n = 1 + rng.below(20);
            let a = rng_normal(&mut rng, m, n, 0.0, 1.0).unwrap();
            check_bounds(&a, &svd(&a).unwrap());
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Tensor::zeros(2, 2);
        a.data_mut()[0] = f64::INFINITY;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }
}
