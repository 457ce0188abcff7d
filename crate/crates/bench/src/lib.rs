//! Shared fixtures for the benchmarks.

use oocchol::{build_covariance, gen_locations, MaternParams, TileBuffer, TiledSymmetricMatrix};

/// Weakly correlated exponential covariance on `n` random locations.
pub fn covariance_fixture(n: usize, nb: usize) -> TiledSymmetricMatrix {
    let locs = gen_locations(n, 7);
    build_covariance(&locs, &MaternParams::new(1.0, 0.02627, 0.5), nb).expect("valid parameters")
}

/// Deterministic dense tile with entries in `[-1, 1)`.
pub fn tile_fixture(nb: usize, salt: u64) -> TileBuffer {
    TileBuffer::from_fn(nb, |i, j| {
        let h = (i as u64 * 2_654_435_761 + j as u64 * 40_503 + salt * 97).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// Symmetric positive definite tile: a diagonally dominant fixture.
pub fn spd_tile_fixture(nb: usize) -> TileBuffer {
    let r = tile_fixture(nb, 1);
    TileBuffer::from_fn(nb, |i, j| {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        r.get(i, j) + if i == j { 2.0 * nb as f64 } else { 0.0 }
    })
}
