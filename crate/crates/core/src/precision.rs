//! Storage precisions and bit-exact rounding into them.
//!
//! Reduced-precision values live in `f64` containers but are constrained to
//! the value set of their nominal format. Rounding is round-to-nearest-even.
//! FP16 and FP32 overflow to infinity; FP8 (E4M3) saturates to ±448.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point storage format of a tile.
///
/// Ordering follows precision: `Fp8E4M3 < Fp16 < Fp32 < Fp64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "FP8E4M3")]
    Fp8E4M3,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP64")]
    Fp64,
}

struct Format {
    /// Significand bits including the implicit leading one.
    significand_bits: i32,
    /// Exponent of the smallest normal number.
    min_exponent: i32,
    max_finite: f64,
    saturate: bool,
}

const FP16: Format = Format { significand_bits: 11, min_exponent: -14, max_finite: 65504.0, saturate: false };

const FP8_E4M3: Format = Format { significand_bits: 4, min_exponent: -6, max_finite: 448.0, saturate: true };

impl Precision {
    /// All precisions, most precise first.
    pub const ALL: [Precision; 4] = [Precision::Fp64, Precision::Fp32, Precision::Fp16, Precision::Fp8E4M3];

    pub fn unit_roundoff(self) -> f64 {
        match self {
            Precision::Fp64 => 2f64.powi(-53),
            Precision::Fp32 => 2f64.powi(-24),
            Precision::Fp16 => 2f64.powi(-11),
            Precision::Fp8E4M3 => 2f64.powi(-4),
        }
    }

    pub fn bytes_per_element(self) -> u64 {
        match self {
            Precision::Fp64 => 8,
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
            Precision::Fp8E4M3 => 1,
        }
    }

    /// Code used by the binary tile dump.
    pub fn code(self) -> u8 {
        match self {
            Precision::Fp64 => 0,
            Precision::Fp32 => 1,
            Precision::Fp16 => 2,
            Precision::Fp8E4M3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::Fp64),
            1 => Some(Precision::Fp32),
            2 => Some(Precision::Fp16),
            3 => Some(Precision::Fp8E4M3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp64 => "FP64",
            Precision::Fp32 => "FP32",
            Precision::Fp16 => "FP16",
            Precision::Fp8E4M3 => "FP8E4M3",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Precision::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown precision {s:?}")))
    }
}

/// Rounds `x` to the nearest value of precision `p`, returned as `f64`.
pub fn cast_scalar(x: f64, p: Precision) -> f64 {
    match p {
        Precision::Fp64 => x,
        Precision::Fp32 => x as f32 as f64,
        Precision::Fp16 => round_to_format(x, &FP16),
        Precision::Fp8E4M3 => round_to_format(x, &FP8_E4M3),
    }
}

fn round_to_format(x: f64, fmt: &Format) -> f64 {
    if x.is_nan() || x == 0.0 {
        return x;
    }
    if x.is_infinite() {
        return if fmt.saturate { fmt.max_finite.copysign(x) } else { x };
    }
    let biased = ((x.to_bits() >> 52) & 0x7ff) as i32;
    // f64 subnormals sit far below every reduced format's range.
    let exponent = if biased == 0 { -1023 } else { biased - 1023 };
    let quantum_exp = exponent.max(fmt.min_exponent) - (fmt.significand_bits - 1);
    let quantum = pow2(quantum_exp);
    let rounded = (x / quantum).round_ties_even() * quantum;
    if rounded.abs() > fmt.max_finite {
        if fmt.saturate {
            fmt.max_finite.copysign(x)
        } else {
            f64::INFINITY.copysign(x)
        }
    } else {
        rounded
    }
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}
