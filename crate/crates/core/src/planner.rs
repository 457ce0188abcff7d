//! Per-tile storage precision from the Frobenius-norm ratio criterion.
//!
//! An off-diagonal tile gets the least precise allowed format `p` with
//! `Nt * ||A_ij||_F / ||A||_F < eps_target / u_p`. Diagonal tiles, and tiles
//! for which no format qualifies, get the most precise allowed format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::tile::{
    convert_tile, frobenius_norm_matrix, lower_indices, lower_tile_count, packed_index, TileIndex, TiledSymmetricMatrix,
};

/// Named precision menus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecisionMode {
    #[serde(rename = "fp64")]
    Fp64,
    #[serde(rename = "2p")]
    Two,
    #[serde(rename = "3p")]
    Three,
    #[serde(rename = "4p")]
    Four,
}

impl PrecisionMode {
    /// Allowed precisions, most precise first.
    pub fn allowed(self) -> Vec<Precision> {
        let count = match self {
            PrecisionMode::Fp64 => 1,
            PrecisionMode::Two => 2,
            PrecisionMode::Three => 3,
            PrecisionMode::Four => 4,
        };
        Precision::ALL[..count].to_vec()
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecisionMode::Fp64 => "fp64",
            PrecisionMode::Two => "2p",
            PrecisionMode::Three => "3p",
            PrecisionMode::Four => "4p",
        }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PrecisionMode::Fp64, PrecisionMode::Two, PrecisionMode::Three, PrecisionMode::Four]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown precision mode {s:?}")))
    }
}

/// Storage precision of every lower-triangular tile.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMap {
    nt: usize,
    eps_target: f64,
    /// Most precise first.
    allowed: Vec<Precision>,
    assignment: Vec<Precision>,
}

impl PrecisionMap {
    /// Every tile at `p`.
    pub fn uniform(nt: usize, p: Precision) -> Self {
        PrecisionMap { nt, eps_target: 0.0, allowed: vec![p], assignment: vec![p; lower_tile_count(nt)] }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn eps_target(&self) -> f64 {
        self.eps_target
    }

    pub fn allowed(&self) -> &[Precision] {
        &self.allowed
    }

    pub fn get(&self, idx: TileIndex) -> Precision {
        self.assignment[packed_index(self.nt, idx)]
    }

    pub fn set(&mut self, idx: TileIndex, p: Precision) {
        if !self.allowed.contains(&p) {
            self.allowed.push(p);
            self.allowed.sort_by(|a, b| b.cmp(a));
        }
        self.assignment[packed_index(self.nt, idx)] = p;
    }

    pub fn iter(&self) -> impl Iterator<Item = (TileIndex, Precision)> + '_ {
        lower_indices(self.nt).zip(self.assignment.iter().copied())
    }

    /// Tile count per precision, in `allowed` order.
    pub fn counts(&self) -> Vec<(Precision, usize)> {
        self.allowed.iter().map(|&p| (p, self.assignment.iter().filter(|&&q| q == p).count())).collect()
    }

    pub fn count(&self, p: Precision) -> usize {
        self.assignment.iter().filter(|&&q| q == p).count()
    }

    /// Most precise precision used by any tile.
    pub fn max_precision(&self) -> Precision {
        self.assignment.iter().copied().max().unwrap_or(Precision::Fp64)
    }

    pub fn to_export(&self) -> PrecisionMapExport {
        PrecisionMapExport {
            nt: self.nt,
            eps_target: self.eps_target,
            tiles: self.iter().map(|(idx, prec)| TilePrecision { row: idx.row, col: idx.col, prec }).collect(),
        }
    }

    pub fn from_export(e: &PrecisionMapExport) -> Result<Self> {
        let count = lower_tile_count(e.nt);
        let mut slots: Vec<Option<Precision>> = vec![None; count];
        for t in &e.tiles {
            if t.row >= e.nt || t.col > t.row {
                return Err(Error::Malformed(format!(
                    "tile ({}, {}) outside the lower triangle of Nt={}",
                    t.row, t.col, e.nt
                )));
            }
            let slot = &mut slots[packed_index(e.nt, TileIndex::new(t.row, t.col))];
            if slot.replace(t.prec).is_some() {
                return Err(Error::Malformed(format!("duplicate tile ({}, {})", t.row, t.col)));
            }
        }
        let assignment = slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Malformed("precision map does not cover every tile".into()))?;
        let mut allowed: Vec<Precision> = assignment.clone();
        allowed.sort_by(|a, b| b.cmp(a));
        allowed.dedup();
        Ok(PrecisionMap { nt: e.nt, eps_target: e.eps_target, allowed, assignment })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_export()).expect("precision map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_export(&serde_json::from_str(s)?)
    }
}

/// JSON form: `{"Nt": .., "eps_target": .., "tiles": [{"row","col","prec"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionMapExport {
    #[serde(rename = "Nt")]
    pub nt: usize,
    pub eps_target: f64,
    pub tiles: Vec<TilePrecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilePrecision {
    pub row: usize,
    pub col: usize,
    pub prec: Precision,
}

pub fn plan_precisions(a: &TiledSymmetricMatrix, eps_target: f64, allowed: &[Precision]) -> Result<PrecisionMap> {
    if !(eps_target > 0.0 && eps_target < 1.0) {
        return Err(Error::InvalidParameter(format!("eps_target must lie in (0, 1), got {eps_target}")));
    }
    let mut menu: Vec<Precision> = allowed.to_vec();
    menu.sort_by(|a, b| b.cmp(a));
    menu.dedup();
    let Some(&highest) = menu.first() else {
        return Err(Error::InvalidParameter("empty precision menu".into()));
    };
    let norm = frobenius_norm_matrix(a);
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let nt = a.nt();
    let assignment = lower_indices(nt)
        .map(|idx| {
            if idx.is_diagonal() {
                return highest;
            }
            let ratio = nt as f64 * a.logical_norm_sq(idx).sqrt() / norm;
            menu.iter().rev().copied().find(|p| ratio < eps_target / p.unit_roundoff()).unwrap_or(highest)
        })
        .collect();
    Ok(PrecisionMap { nt, eps_target, allowed: menu, assignment })
}

/// Converts every tile to its planned precision.
pub fn apply_precision_map(a: &TiledSymmetricMatrix, m: &PrecisionMap) -> Result<TiledSymmetricMatrix> {
    if m.nt() != a.nt() {
        return Err(Error::DimensionMismatch { expected: a.nt(), actual: m.nt() });
    }
    let tiles = a.tiles().map(|(idx, t)| convert_tile(t, m.get(idx))).collect();
    TiledSymmetricMatrix::from_tiles(a.n(), a.nb(), tiles)
}
