//! Storage dtypes and their float64 embedding.
//!
//! All arithmetic in this crate runs in float64; the dtype only records how a
//! tensor is stored on disk. Every supported dtype embeds exactly into f64,
//! so load → compute → store round-trips are bit-exact when values are left
//! untouched. Narrowing conversions round to nearest, ties to even.

use half::{bf16, f16};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F16,
    BF16,
    F32,
    F64,
}

impl DType {
    /// Container dtype string ("F16", "BF16", "F32", "F64").
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F16 => "F16",
            DType::BF16 => "BF16",
            DType::F32 => "F32",
            DType::F64 => "F64",
        }
    }

    /// Size of one element in bytes.
    pub fn element_size(self) -> usize {
        match self {
            DType::F16 | DType::BF16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Smallest dtype that represents every value of both operands exactly.
    /// F16 and BF16 are incomparable; their join is F32.
    pub fn promote(self, other: Self) -> Self {
        use DType::*;
        match (self, other) {
            (a, b) if a == b => a,
            (F64, _) | (_, F64) => F64,
            (F32, _) | (_, F32) => F32,
            (F16, BF16) | (BF16, F16) => F32,
            _ => unreachable!(),
        }
    }

    /// Decode one element from little-endian bytes at `offset`.
    pub fn read_element(self, bytes: &[u8], offset: usize) -> f64 {
        match self {
            DType::F16 => f16::from_le_bytes([bytes[offset], bytes[offset + 1]]).to_f64(),
            DType::BF16 => bf16::from_le_bytes([bytes[offset], bytes[offset + 1]]).to_f64(),
            DType::F32 => {
                f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
                    as f64
            }
            DType::F64 => {
                f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8-byte slice"))
            }
        }
    }

    /// Encode one f64 value as little-endian bytes, rounding to the storage
    /// dtype with round-to-nearest-even.
    pub fn write_element(self, value: f64, out: &mut Vec<u8>) {
        match self {
            DType::F16 => out.extend_from_slice(&f16::from_f64(value).to_le_bytes()),
            DType::BF16 => out.extend_from_slice(&bf16::from_f64(value).to_le_bytes()),
            DType::F32 => out.extend_from_slice(&(value as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&value.to_le_bytes()),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F16" => Ok(DType::F16),
            "BF16" => Ok(DType::BF16),
            "F32" => Ok(DType::F32),
            "F64" => Ok(DType::F64),
            other => Err(Error::InvalidArgument {
                reason: format!("unknown dtype string '{other}'"),
            }),
        }
    }
}
