//! Gaussian log-likelihood and the KL accuracy metric, evaluated from a
//! tiled Cholesky factor. Everything is computed in FP64 whatever the tile
//! storage precisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tile::{TileIndex, TiledSymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodResult {
    /// `log |Σ|`.
    pub log_det: f64,
    /// `yᵀ Σ⁻¹ y`.
    pub quad_form: f64,
    pub loglik: f64,
    pub n: usize,
}

/// `log |Σ| = 2 Σ log L_ii` over the logical diagonal.
pub fn log_det_from_factor(l: &TiledSymmetricMatrix) -> Result<f64> {
    let nb = l.nb();
    let mut s = 0.0;
    for k in 0..l.nt() {
        let idx = TileIndex::new(k, k);
        let (rows, _) = l.logical_extent(idx);
        let t = l.tile(idx);
        for i in 0..rows {
            let d = t.get(i, i);
            if !(d > 0.0) {
                return Err(Error::NonPositiveDiagonal { index: k * nb + i });
            }
            s += d.ln();
        }
    }
    Ok(2.0 * s)
}

/// Solves `L z = y` in place by tiled forward substitution.
fn forward_solve(l: &TiledSymmetricMatrix, z: &mut [f64]) -> Result<()> {
    let n = l.n();
    let nb = l.nb();
    for k in 0..l.nt() {
        let k0 = k * nb;
        let kw = (n - k0).min(nb);
        for m in 0..k {
            let t = l.tile(TileIndex::new(k, m));
            let m0 = m * nb;
            for j in 0..nb.min(n - m0) {
                let zj = z[m0 + j];
                if zj == 0.0 {
                    continue;
                }
                let col = t.column(j);
                for i in 0..kw {
                    z[k0 + i] -= col[i] * zj;
                }
            }
        }
        let d = l.tile(TileIndex::new(k, k));
        for j in 0..kw {
            let djj = d.get(j, j);
            if djj == 0.0 {
                return Err(Error::SingularDiagonal { index: k0 + j });
            }
            z[k0 + j] /= djj;
            let zj = z[k0 + j];
            let col = d.column(j);
            for i in j + 1..kw {
                z[k0 + i] -= col[i] * zj;
            }
        }
    }
    Ok(())
}

/// Log-likelihood of `y` (zero when `None`) under `Σ = L Lᵀ`.
pub fn log_likelihood(l: &TiledSymmetricMatrix, y: Option<&[f64]>) -> Result<LikelihoodResult> {
    let n = l.n();
    let log_det = log_det_from_factor(l)?;
    let quad_form = match y {
        None => 0.0,
        Some(y) => {
            if y.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
            }
            let mut z = y.to_vec();
            forward_solve(l, &mut z)?;
            z.iter().map(|v| v * v).sum()
        }
    };
    let loglik = -(n as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad_form;
    Ok(LikelihoodResult { log_det, quad_form, loglik, n })
}

/// Accuracy loss of an approximate pipeline: `ℓ_exact(0) − ℓ_approx(0)`.
///
/// This is the plain log-likelihood difference at the zero observation, not
/// the textbook Gaussian KL (which carries an extra trace term). Its sign
/// follows the log-determinant error of the approximation.
pub fn kl_divergence(loglik_exact: f64, loglik_approx: f64) -> f64 {
    loglik_exact - loglik_approx
}

/// `‖A − L Lᵀ‖_F / ‖A‖_F` over the logical region, using the lower triangle
/// of `L` only.
pub fn factorization_residual(a: &TiledSymmetricMatrix, l: &TiledSymmetricMatrix) -> Result<f64> {
    if a.n() != l.n() || a.nb() != l.nb() {
        return Err(Error::DimensionMismatch { expected: a.n(), actual: l.n() });
    }
    let nt = a.nt();
    let nb = a.nb();
    let mut num = 0.0;
    let mut den = 0.0;
    for idx in crate::tile::lower_indices(nt) {
        let (rows, cols) = a.logical_extent(idx);
        let (m, k) = (idx.row, idx.col);
        let mut prod = vec![0.0; nb * nb];
        for n in 0..=k {
            let lm = l.tile(TileIndex::new(m, n));
            let lk = l.tile(TileIndex::new(k, n));
            let diag_k = n == k;
            let diag_m = n == m;
            for j in 0..cols {
                for p in 0..nb {
                    // Only the lower triangle of diagonal factor tiles counts.
                    if diag_k && p > j {
                        continue;
                    }
                    let b = lk.get(j, p);
                    if b == 0.0 {
                        continue;
                    }
                    let col = lm.column(p);
                    let start = if diag_m { p } else { 0 };
                    for i in start..rows {
                        prod[i + j * nb] += col[i] * b;
                    }
                }
            }
        }
        let at = a.tile(idx);
        let weight = if idx.is_diagonal() { 1.0 } else { 2.0 };
        let mut tn = 0.0;
        let mut td = 0.0;
        for j in 0..cols {
            for i in 0..rows {
                let v = at.get(i, j);
                let r = v - prod[i + j * nb];
                tn += r * r;
                td += v * v;
            }
        }
        num += weight * tn;
        den += weight * td;
    }
    if den == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Dense column-major reference Cholesky, written independently of the tile kernels.
    fn dense_cholesky(a: &[f64], n: usize) -> Vec<f64> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j + j * n];
            for p in 0..j {
                d -= l[j + p * n] * l[j + p * n];
            }
            let d = d.sqrt();
            l[j + j * n] = d;
            for i in j + 1..n {
                let mut s = a[i + j * n];
                for p in 0..j {
                    s -= l[i + p * n] * l[j + p * n];
                }
                l[i + j * n] = s / d;
            }
        }
        l
    }

    fn random_spd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let mut s = 0.0;
                for p in 0..n {
                    s += m[i + p * n] * m[j + p * n];
                }
                a[i + j * n] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    // Diagonal factor tiles must have a zero upper triangle.
    fn lower_factor(a: &[f64], n: usize, nb: usize) -> TiledSymmetricMatrix {
        let l = dense_cholesky(a, n);
        TiledSymmetricMatrix::from_fn(n, nb, |i, j| if i >= j { l[i + j * n] } else { 0.0 })
    }

    #[test]
    fn log_det_examples() {
        let i3 = TiledSymmetricMatrix::identity(3, 2);
        assert_eq!(log_det_from_factor(&i3).unwrap(), 0.0);
        let two = TiledSymmetricMatrix::from_fn(3, 2, |i, j| if i == j { 2.0 } else { 0.0 });
        assert!((log_det_from_factor(&two).unwrap() - 6.0 * 2f64.ln()).abs() < 1e-14);
        let sigma = [4.0, 2.0, 2.0, 5.0];
        let l = lower_factor(&sigma, 2, 2);
        assert!((log_det_from_factor(&l).unwrap() - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_det_rejects_non_positive_diagonal() {
        let l = TiledSymmetricMatrix::from_fn(4, 2, |i, j| {
            if i == j {
                if i == 2 {
                    -1.0
                } else {
                    1.0
                }
            } else {
                0.0
            }
        });
        assert_eq!(log_det_from_factor(&l), Err(Error::NonPositiveDiagonal { index: 2 }));
    }

    #[test]
    fn loglik_examples() {
        let r = log_likelihood(&TiledSymmetricMatrix::identity(2, 1), None).unwrap();
        assert!((r.loglik + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert_eq!(r.quad_form, 0.0);
        let l = lower_factor(&[4.0, 2.0, 2.0, 5.0], 2, 2);
        let r = log_likelihood(&l, None).unwrap();
        assert!((r.loglik - (-3.2242)).abs() < 1e-4, "{}", r.loglik);
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * r.log_det - 0.5 * r.quad_form;
        assert_eq!(r.loglik, expected);
    }

    #[test]
    fn loglik_dimension_mismatch() {
        let l = TiledSymmetricMatrix::identity(4, 2);
        assert_eq!(log_likelihood(&l, Some(&[1.0; 3])), Err(Error::DimensionMismatch { expected: 4, actual: 3 }));
    }

    #[test]
    fn quad_form_matches_dense_solve() {
        for (n, nb) in [(64, 16), (61, 8), (100, 32)] {
            let a = random_spd(n, n as u64);
            let ld = dense_cholesky(&a, n);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Dense forward solve.
            let mut z = y.clone();
            for j in 0..n {
                z[j] /= ld[j + j * n];
                for i in j + 1..n {
                    z[i] -= ld[i + j * n] * z[j];
                }
            }
            let want: f64 = z.iter().map(|v| v * v).sum();
            let l = lower_factor(&a, n, nb);
            let got = log_likelihood(&l, Some(&y)).unwrap().quad_form;
            assert!(((got - want) / want).abs() < 1e-10, "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn log_det_is_additive_over_blocks() {
        let (n1, n2, nb) = (24, 40, 8);
        let a1 = random_spd(n1, 1);
        let a2 = random_spd(n2, 2);
        let l1 = dense_cholesky(&a1, n1);
        let l2 = dense_cholesky(&a2, n2);
        let n = n1 + n2;
        let block = TiledSymmetricMatrix::from_fn(n, nb, |i, j| {
            if i < j {
                0.0
            } else if j < n1 && i < n1 {
                l1[i + j * n1]
            } else if j >= n1 {
                l2[(i - n1) + (j - n1) * n2]
            } else {
                0.0
            }
        });
        let sum = log_det_from_factor(&lower_factor(&a1, n1, nb)).unwrap()
            + log_det_from_factor(&lower_factor(&a2, n2, nb)).unwrap();
        let whole = log_det_from_factor(&block).unwrap();
        assert!((whole - sum).abs() <= 1e-12 * sum.abs());
    }

    #[test]
    fn kl_of_self_is_zero() {
        let l = lower_factor(&random_spd(20, 3), 20, 8);
        let a = log_likelihood(&l, None).unwrap().loglik;
        assert_eq!(kl_divergence(a, a), 0.0);
    }

    #[test]
    fn residual_of_exact_factor_is_small() {
        let n = 50;
        let a = random_spd(n, 4);
        let at = TiledSymmetricMatrix::from_dense(n, 16, &a);
        let l = lower_factor(&a, n, 16);
        let r = factorization_residual(&at, &l).unwrap();
        assert!(r < 10.0 * n as f64 * f64::EPSILON / 2.0, "{r}");
        // A perturbed factor is detected.
        let mut bad = l.clone();
        let v = bad.tile(TileIndex::new(1, 0)).get(0, 0);
        bad.tile_mut(TileIndex::new(1, 0)).set(0, 0, v + 1.0);
        assert!(factorization_residual(&at, &bad).unwrap() > 1e-3);
    }
}
