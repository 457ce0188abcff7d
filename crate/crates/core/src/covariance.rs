//! Synthetic geospatial problems: random locations and Matérn covariance
//! matrices built directly in tiled form.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tile::{lower_indices, TiledSymmetricMatrix};

/// Points in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLocations {
    pub coords: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SpatialLocations {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Reorders points along a Z-order (Morton) curve so that nearby indices
    /// are nearby in space; ties break on the coordinates themselves.
    pub fn sort_morton(&mut self) {
        self.coords
            .sort_by(|a, b| morton_key(*a).cmp(&morton_key(*b)).then(a.0.total_cmp(&b.0)).then(a.1.total_cmp(&b.1)));
    }

    /// Writes `x,y` CSV with a header row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,y")?;
        for (x, y) in &self.coords {
            writeln!(w, "{x:?},{y:?}")?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("x,y") {
            return Err(Error::Malformed("locations CSV must start with header x,y".into()));
        }
        let mut coords = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Malformed(format!("bad locations row {}: {line:?}", lineno + 2)))
            };
            let mut parts = line.split(',');
            let x = parse(parts.next())?;
            let y = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Malformed(format!("extra columns in row {}", lineno + 2)));
            }
            coords.push((x, y));
        }
        if coords.is_empty() {
            return Err(Error::Malformed("locations CSV holds no points".into()));
        }
        Ok(SpatialLocations { coords, seed: 0 })
    }
}

fn morton_key((x, y): (f64, f64)) -> u32 {
    let q = |v: f64| ((v.clamp(0.0, 1.0) * 65535.0) as u32).min(65535);
    spread_bits(q(x)) | (spread_bits(q(y)) << 1)
}

fn spread_bits(v: u32) -> u32 {
    let mut v = v & 0xffff;
    v = (v | (v << 8)) & 0x00ff_00ff;
    v = (v | (v << 4)) & 0x0f0f_0f0f;
    v = (v | (v << 2)) & 0x3333_3333;
    (v | (v << 1)) & 0x5555_5555
}

/// Draws `n` distinct points uniformly in `[0,1)²` with ChaCha8 seeded from
/// `seed`, then orders them along a Morton curve.
pub fn gen_locations(n: usize, seed: u64) -> SpatialLocations {
    assert!(n >= 1, "need at least one location");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    while coords.len() < n {
        let p: (f64, f64) = (rng.gen(), rng.gen());
        if seen.insert((p.0.to_bits(), p.1.to_bits())) {
            coords.push(p);
        }
    }
    let mut locs = SpatialLocations { coords, seed };
    locs.sort_morton();
    locs
}

/// Matérn parameters `(σ², a, ν)` plus an optional nugget `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternParams {
    pub sigma_sq: f64,
    pub range: f64,
    pub smoothness: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl MaternParams {
    pub fn new(sigma_sq: f64, range: f64, smoothness: f64) -> Self {
        MaternParams { sigma_sq, range, smoothness, nugget: 0.0 }
    }

    pub fn with_nugget(mut self, nugget: f64) -> Self {
        self.nugget = nugget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_sq must be > 0, got {}", self.sigma_sq)));
        }
        if !(self.range > 0.0) {
            return Err(Error::InvalidParameter(format!("range must be > 0, got {}", self.range)));
        }
        if !(self.nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!("nugget must be >= 0, got {}", self.nugget)));
        }
        if !SUPPORTED_SMOOTHNESS.contains(&self.smoothness) {
            return Err(Error::UnsupportedSmoothness(self.smoothness));
        }
        Ok(())
    }
}

pub const SUPPORTED_SMOOTHNESS: [f64; 3] = [0.5, 1.5, 2.5];

/// Matérn covariance at distance `h`, in the unscaled form
/// `σ² / (2^(ν-1) Γ(ν)) (h/a)^ν K_ν(h/a)`. Half-integer orders reduce to
/// `e^-x`, `(1 + x) e^-x` and `(1 + x + x²/3) e^-x` with `x = h/a`.
/// At `h = 0` the nugget is added.
pub fn matern(h: f64, p: &MaternParams) -> Result<f64> {
    p.validate()?;
    if !(h >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance must be >= 0, got {h}")));
    }
    Ok(matern_unchecked(h, p))
}

fn matern_unchecked(h: f64, p: &MaternParams) -> f64 {
    if h == 0.0 {
        return p.sigma_sq + p.nugget;
    }
    let x = h / p.range;
    let poly = if p.smoothness == 0.5 {
        1.0
    } else if p.smoothness == 1.5 {
        1.0 + x
    } else {
        1.0 + x + x * x / 3.0
    };
    p.sigma_sq * poly * (-x).exp()
}

/// Builds the covariance matrix of `locs` under `p`, all tiles FP64.
pub fn build_covariance(locs: &SpatialLocations, p: &MaternParams, nb: usize) -> Result<TiledSymmetricMatrix> {
    if locs.is_empty() {
        return Err(Error::InvalidParameter("no locations".into()));
    }
    p.validate()?;
    let n = locs.len();
    let nt = n.div_ceil(nb);
    let entry = |i: usize, j: usize| {
        if i == j {
            p.sigma_sq + p.nugget
        } else {
            let (a, b) = (locs.coords[i], locs.coords[j]);
            let h = (a.0 - b.0).hypot(a.1 - b.1);
            matern_unchecked(h, p)
        }
    };
    let indices: Vec<_> = lower_indices(nt).collect();
    let tiles = indices.par_iter().map(|&idx| TiledSymmetricMatrix::build_tile(n, nb, idx, entry)).collect();
    TiledSymmetricMatrix::from_tiles(n, nb, tiles)
}
