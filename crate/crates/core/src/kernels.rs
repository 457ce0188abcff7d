//! The four tile kernels of the left-looking factorization.
//!
//! Arithmetic is FP64 on the (exactly up-cast) stored values. The output tile
//! keeps the accumulator's storage precision and is rounded into it on write.
//! Each output element is accumulated in ascending inner index order, so the
//! bits of a result depend only on the bits of the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tile::TileBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "POTRF")]
    Potrf,
    #[serde(rename = "TRSM")]
    Trsm,
    #[serde(rename = "SYRK")]
    Syrk,
    #[serde(rename = "GEMM")]
    Gemm,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [KernelKind::Potrf, KernelKind::Trsm, KernelKind::Syrk, KernelKind::Gemm];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Potrf => "POTRF",
            KernelKind::Trsm => "TRSM",
            KernelKind::Syrk => "SYRK",
            KernelKind::Gemm => "GEMM",
        }
    }
}

/// Cholesky factor of a diagonal tile: lower-triangular `L` with `L Lᵀ = A`.
pub fn potrf_tile(akk: &TileBuffer) -> Result<TileBuffer> {
    let mut out = akk.clone();
    potrf_in_place(&mut out)?;
    Ok(out)
}

/// Solves `X Lᵀ = A` for `X`, where `lkk` is lower triangular.
pub fn trsm_tile(amk: &TileBuffer, lkk: &TileBuffer) -> Result<TileBuffer> {
    let mut out = amk.clone();
    trsm_in_place(&mut out, lkk)?;
    Ok(out)
}

/// `Akk - Akn Aknᵀ`, symmetric.
pub fn syrk_update(akk: &TileBuffer, akn: &TileBuffer) -> TileBuffer {
    let mut out = akk.clone();
    syrk_in_place(&mut out, akn);
    out
}

/// `Amk - Amn Aknᵀ`.
pub fn gemm_update(amk: &TileBuffer, amn: &TileBuffer, akn: &TileBuffer) -> TileBuffer {
    let mut out = amk.clone();
    gemm_in_place(&mut out, amn, akn);
    out
}

/// Unblocked right-looking (kij) Cholesky; strict upper triangle is zeroed.
pub fn potrf_in_place(a: &mut TileBuffer) -> Result<()> {
    let nb = a.nb();
    let data = a.as_mut_slice();
    for k in 0..nb {
        let pivot = data[k + k * nb];
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot_index: k, tile: None });
        }
        let lkk = pivot.sqrt();
        data[k + k * nb] = lkk;
        for v in &mut data[k * nb + k + 1..(k + 1) * nb] {
            *v /= lkk;
        }
        let (head, tail) = data.split_at_mut((k + 1) * nb);
        let col_k = &head[k * nb..];
        for j in k + 1..nb {
            let ljk = col_k[j];
            let col_j = &mut tail[(j - k - 1) * nb..(j - k) * nb];
            for i in j..nb {
                col_j[i] -= col_k[i] * ljk;
            }
        }
    }
    for j in 1..nb {
        data[j * nb..j * nb + j].fill(0.0);
    }
    a.quantize();
    Ok(())
}

/// Forward column-by-column solve of `X Lᵀ = A`, overwriting `a` with `X`.
pub fn trsm_in_place(a: &mut TileBuffer, l: &TileBuffer) -> Result<()> {
    let nb = a.nb();
    assert_eq!(nb, l.nb(), "tile sizes differ");
    if let Some(index) = (0..nb).find(|&i| l.get(i, i) == 0.0) {
        return Err(Error::SingularDiagonal { index });
    }
    let ld = l.as_slice();
    let x = a.as_mut_slice();
    for j in 0..nb {
        let (done, rest) = x.split_at_mut(j * nb);
        let col_j = &mut rest[..nb];
        for p in 0..j {
            let ljp = ld[j + p * nb];
            let col_p = &done[p * nb..(p + 1) * nb];
            for (xi, &xp) in col_j.iter_mut().zip(col_p) {
                *xi -= xp * ljp;
            }
        }
        let ljj = ld[j + j * nb];
        for xi in col_j.iter_mut() {
            *xi /= ljj;
        }
    }
    a.quantize();
    Ok(())
}

/// `C -= A Aᵀ` on the lower triangle, then mirrored into the upper triangle.
pub fn syrk_in_place(c: &mut TileBuffer, a: &TileBuffer) {
    let nb = c.nb();
    assert_eq!(nb, a.nb(), "tile sizes differ");
    sub_abt(c.as_mut_slice(), a.as_slice(), a.as_slice(), nb, true);
    let data = c.as_mut_slice();
    for j in 0..nb {
        for i in j + 1..nb {
            data[j + i * nb] = data[i + j * nb];
        }
    }
    c.quantize();
}

/// `C -= A Bᵀ`.
pub fn gemm_in_place(c: &mut TileBuffer, a: &TileBuffer, b: &TileBuffer) {
    let nb = c.nb();
    assert!(a.nb() == nb && b.nb() == nb, "tile sizes differ");
    sub_abt(c.as_mut_slice(), a.as_slice(), b.as_slice(), nb, false);
    c.quantize();
}

const MR: usize = 4;
const NR: usize = 4;

/// `C[i,j] -= sum_l A[i,l] * B[j,l]`, each element updated with `l` ascending.
/// With `lower_only`, blocks strictly above the diagonal are skipped.
fn sub_abt(c: &mut [f64], a: &[f64], b: &[f64], nb: usize, lower_only: bool) {
    let full_i = nb - nb % MR;
    let full_j = nb - nb % NR;
    let mut j0 = 0;
    while j0 < full_j {
        let first_i = if lower_only { j0 - j0 % MR } else { 0 };
        let mut i0 = first_i;
        while i0 < full_i {
            micro_kernel(c, a, b, nb, i0, j0);
            i0 += MR;
        }
        for j in j0..j0 + NR {
            for i in full_i.max(first_i)..nb {
                sub_dot(c, a, b, nb, i, j);
            }
        }
        j0 += NR;
    }
    for j in full_j..nb {
        let first_i = if lower_only { j } else { 0 };
        for i in first_i..nb {
            sub_dot(c, a, b, nb, i, j);
        }
    }
}

#[inline(always)]
fn sub_dot(c: &mut [f64], a: &[f64], b: &[f64], nb: usize, i: usize, j: usize) {
    let mut acc = c[i + j * nb];
    for l in 0..nb {
        acc -= a[i + l * nb] * b[j + l * nb];
    }
    c[i + j * nb] = acc;
}

#[inline(always)]
fn micro_kernel(c: &mut [f64], a: &[f64], b: &[f64], nb: usize, i0: usize, j0: usize) {
    let mut acc = [[0.0f64; MR]; NR];
    for (jj, col) in acc.iter_mut().enumerate() {
        col.copy_from_slice(&c[i0 + (j0 + jj) * nb..i0 + (j0 + jj) * nb + MR]);
    }
    for l in 0..nb {
        let av: [f64; MR] = a[i0 + l * nb..i0 + l * nb + MR].try_into().unwrap();
        let bv: [f64; NR] = b[j0 + l * nb..j0 + l * nb + NR].try_into().unwrap();
        for (col, &bj) in acc.iter_mut().zip(&bv) {
            for (x, &ai) in col.iter_mut().zip(&av) {
                *x -= ai * bj;
            }
        }
    }
    for (jj, col) in acc.iter().enumerate() {
        c[i0 + (j0 + jj) * nb..i0 + (j0 + jj) * nb + MR].copy_from_slice(col);
    }
}
