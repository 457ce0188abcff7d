//! Tile storage for symmetric matrices.
//!
//! Only the lower triangle of tiles is stored. Tiles are `nb x nb`,
//! column-major. When `n` is not a multiple of `nb` the last tile row and
//! column are zero-padded, with ones on the padded diagonal so that the
//! padded matrix stays positive definite. Padding never contributes to norms
//! or statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::{cast_scalar, Precision};

/// Position of a tile in the lower-triangular tile grid (`row >= col`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileIndex {
    pub row: usize,
    pub col: usize,
}

impl TileIndex {
    pub fn new(row: usize, col: usize) -> Self {
        assert!(row >= col, "tile ({row}, {col}) is not in the lower triangle");
        TileIndex { row, col }
    }

    pub fn is_diagonal(&self) -> bool {
        self.row == self.col
    }
}

/// Number of tiles in the lower triangle of an `nt x nt` tile grid.
pub fn lower_tile_count(nt: usize) -> usize {
    nt * (nt + 1) / 2
}

/// Position of `idx` in column-major lower-triangular tile order.
pub fn packed_index(nt: usize, idx: TileIndex) -> usize {
    debug_assert!(idx.row < nt && idx.col <= idx.row);
    let k = idx.col;
    k * nt - k * k.saturating_sub(1) / 2 + (idx.row - k)
}

/// Lower-triangular tile indices in column-major order:
/// `(0,0), (1,0), ..., (nt-1,0), (1,1), ...`.
pub fn lower_indices(nt: usize) -> impl Iterator<Item = TileIndex> {
    (0..nt).flat_map(move |k| (k..nt).map(move |m| TileIndex { row: m, col: k }))
}

/// A square, column-major tile whose values are representable in `precision`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBuffer {
    nb: usize,
    precision: Precision,
    data: Vec<f64>,
}

impl TileBuffer {
    pub fn zeros(nb: usize, precision: Precision) -> Self {
        TileBuffer { nb, precision, data: vec![0.0; nb * nb] }
    }

    pub fn identity(nb: usize) -> Self {
        let mut t = Self::zeros(nb, Precision::Fp64);
        for i in 0..nb {
            t.data[i + i * nb] = 1.0;
        }
        t
    }

    /// Builds a tile from column-major values, rounding them into `precision`.
    pub fn from_col_major(nb: usize, data: Vec<f64>, precision: Precision) -> Self {
        assert_eq!(data.len(), nb * nb, "tile data must hold nb*nb values");
        let mut t = TileBuffer { nb, precision, data };
        t.quantize();
        t
    }

    /// Builds an FP64 tile from `f(i, j)`.
    pub fn from_fn(nb: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nb * nb);
        for j in 0..nb {
            for i in 0..nb {
                data.push(f(i, j));
            }
        }
        TileBuffer { nb, precision: Precision::Fp64, data }
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn bytes(&self) -> u64 {
        (self.nb * self.nb) as u64 * self.precision.bytes_per_element()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.nb]
    }

    /// Raw write; callers must keep the value representable in the tile's
    /// precision (or call [`TileBuffer::quantize`] afterwards).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.nb] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.nb..(j + 1) * self.nb]
    }

    /// Rounds every element into the tile's precision in place.
    pub fn quantize(&mut self) {
        if self.precision != Precision::Fp64 {
            let p = self.precision;
            self.data.iter_mut().for_each(|v| *v = cast_scalar(*v, p));
        }
    }

    /// Re-labels the tile with precision `p` and rounds into it.
    pub fn quantize_to(&mut self, p: Precision) {
        self.precision = p;
        self.quantize();
    }

    /// True if every element is already representable in the tile's precision.
    pub fn is_representable(&self) -> bool {
        let p = self.precision;
        self.data.iter().all(|&v| cast_scalar(v, p).to_bits() == v.to_bits() || v.is_nan())
    }
}

/// Element-wise conversion to precision `p`.
pub fn convert_tile(t: &TileBuffer, p: Precision) -> TileBuffer {
    let mut out = t.clone();
    out.quantize_to(p);
    out
}

pub fn frobenius_norm_tile(t: &TileBuffer) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Host-resident symmetric matrix stored as its lower triangle of tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledSymmetricMatrix {
    n: usize,
    nb: usize,
    nt: usize,
    tiles: Vec<TileBuffer>,
}

impl TiledSymmetricMatrix {
    /// Builds the matrix from a symmetric entry function; only `f(i, j)` with
    /// `i >= j` is evaluated.
    pub fn from_fn(n: usize, nb: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1 && nb >= 1, "matrix order and tile size must be positive");
        let nt = n.div_ceil(nb);
        let tiles = lower_indices(nt).map(|idx| Self::build_tile(n, nb, idx, &mut f)).collect();
        TiledSymmetricMatrix { n, nb, nt, tiles }
    }

    pub(crate) fn build_tile(
        n: usize,
        nb: usize,
        idx: TileIndex,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> TileBuffer {
        TileBuffer::from_fn(nb, |i, j| {
            let (gi, gj) = (idx.row * nb + i, idx.col * nb + j);
            if gi >= n || gj >= n {
                if gi == gj {
                    1.0
                } else {
                    0.0
                }
            } else if gi >= gj {
                f(gi, gj)
            } else {
                f(gj, gi)
            }
        })
    }

    /// Assembles a matrix from tiles given in column-major lower order.
    pub fn from_tiles(n: usize, nb: usize, tiles: Vec<TileBuffer>) -> Result<Self> {
        let nt = n.div_ceil(nb);
        if tiles.len() != lower_tile_count(nt) {
            return Err(Error::DimensionMismatch { expected: lower_tile_count(nt), actual: tiles.len() });
        }
        if let Some(t) = tiles.iter().find(|t| t.nb() != nb) {
            return Err(Error::DimensionMismatch { expected: nb, actual: t.nb() });
        }
        Ok(TiledSymmetricMatrix { n, nb, nt, tiles })
    }

    pub fn identity(n: usize, nb: usize) -> Self {
        Self::from_fn(n, nb, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds from a dense column-major `n x n` array (lower triangle read).
    pub fn from_dense(n: usize, nb: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        Self::from_fn(n, nb, |i, j| dense[i + j * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn tile(&self, idx: TileIndex) -> &TileBuffer {
        &self.tiles[packed_index(self.nt, idx)]
    }

    pub fn tile_mut(&mut self, idx: TileIndex) -> &mut TileBuffer {
        let p = packed_index(self.nt, idx);
        &mut self.tiles[p]
    }

    pub fn tiles(&self) -> impl Iterator<Item = (TileIndex, &TileBuffer)> {
        lower_indices(self.nt).zip(self.tiles.iter())
    }

    pub fn into_tiles(self) -> Vec<TileBuffer> {
        self.tiles
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let idx = TileIndex::new(i / self.nb, j / self.nb);
        self.tile(idx).get(i % self.nb, j % self.nb)
    }

    /// Logical extent (rows, cols) of a tile, excluding padding.
    pub fn logical_extent(&self, idx: TileIndex) -> (usize, usize) {
        let ext = |t: usize| (self.n - t * self.nb).min(self.nb);
        (ext(idx.row), ext(idx.col))
    }

    /// Squared Frobenius norm of a tile's logical (unpadded) region.
    pub fn logical_norm_sq(&self, idx: TileIndex) -> f64 {
        let (rows, cols) = self.logical_extent(idx);
        let t = self.tile(idx);
        let mut s = 0.0;
        for j in 0..cols {
            for &v in &t.column(j)[..rows] {
                s += v * v;
            }
        }
        s
    }

    /// Dense column-major `n x n` copy with the upper triangle mirrored.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                let v = self.get(i, j);
                out[i + j * n] = v;
                out[j + i * n] = v;
            }
        }
        out
    }

    /// Dense lower-triangular copy (upper triangle zero), for factors.
    pub fn to_dense_lower(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                out[i + j * n] = self.get(i, j);
            }
        }
        out
    }

    /// Bytes occupied by the stored lower triangle at the tiles' precisions.
    pub fn stored_bytes(&self) -> u64 {
        self.tiles.iter().map(TileBuffer::bytes).sum()
    }

    /// Writes the binary tile dump: little-endian `u64` n, nb, Nt, one precision
    /// code byte per tile, then every tile as nb² little-endian `f64` values,
    /// tiles in column-major lower order.
    pub fn write_dump(&self, mut w: impl Write) -> Result<()> {
        for v in [self.n, self.nb, self.nt] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let codes: Vec<u8> = self.tiles.iter().map(|t| t.precision().code()).collect();
        w.write_all(&codes)?;
        for t in &self.tiles {
            for v in t.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dump(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [n, nb, nt] = header;
        if n == 0 || nb == 0 || nt != n.div_ceil(nb) {
            return Err(Error::Malformed(format!("inconsistent dump header n={n} nb={nb} Nt={nt}")));
        }
        let count = lower_tile_count(nt);
        let mut codes = vec![0u8; count];
        r.read_exact(&mut codes)?;
        let mut tiles = Vec::with_capacity(count);
        for code in codes {
            let p = Precision::from_code(code).ok_or_else(|| Error::Malformed(format!("bad precision code {code}")))?;
            let mut data = vec![0.0; nb * nb];
            for v in data.iter_mut() {
                r.read_exact(&mut word)?;
                *v = f64::from_le_bytes(word);
            }
            let t = TileBuffer { nb, precision: p, data };
            if !t.is_representable() {
                return Err(Error::Malformed(format!("tile values not representable in {p}")));
            }
            tiles.push(t);
        }
        Self::from_tiles(n, nb, tiles)
    }
}

/// Frobenius norm of the full symmetric matrix; off-diagonal tiles count twice.
pub fn frobenius_norm_matrix(a: &TiledSymmetricMatrix) -> f64 {
    let mut s = 0.0;
    for idx in lower_indices(a.nt()) {
        let t = a.logical_norm_sq(idx);
        s += if idx.is_diagonal() { t } else { 2.0 * t };
    }
    s.sqrt()
}
