//! Byte-exact reading and writing of the tensor container format.
//!
//! Layout: bytes 0–7 hold the header length N as unsigned 64-bit
//! little-endian; bytes 8..8+N hold a UTF-8 JSON object mapping tensor name
//! to `{"dtype", "shape", "data_offsets"}` plus an optional `"__metadata__"`
//! string map; the rest of the file is the concatenated row-major
//! little-endian tensor buffers. Offsets are relative to the end of the
//! header and must be contiguous, non-overlapping, and ascending.
//!
//! The writer is canonical: header keys sorted lexicographically, no
//! whitespace, dtype strings `F16`/`BF16`/`F32`/`F64`, buffers laid out in
//! name order. Reading a canonical file and writing it back reproduces the
//! input byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, TensorMap};

pub const METADATA_KEY: &str = "__metadata__";

/// How to pick storage dtypes when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DtypePolicy {
    /// Keep each tensor's stored dtype.
    #[default]
    #[serde(rename = "preserve")]
    Preserve,
    /// Store every tensor as F32.
    #[serde(rename = "force-float32")]
    ForceFloat32,
}

impl DtypePolicy {
    fn effective(self, dtype: DType) -> DType {
        match self {
            DtypePolicy::Preserve => dtype,
            DtypePolicy::ForceFloat32 => DType::F32,
        }
    }
}

// ---------------------------------------------------------------------------
// Header parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

/// Header map that rejects duplicate tensor names during deserialization
/// (serde_json's map type would silently keep the last occurrence).
struct RawHeader {
    entries: Vec<(String, RawEntry)>,
    metadata: BTreeMap<String, String>,
}

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping tensor names to entries")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                let mut metadata: Option<BTreeMap<String, String>> = None;
                let mut seen = BTreeSet::new();
                while let Some(key) = map.next_key::<String>()? {
                    if !seen.insert(key.clone()) {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate tensor name '{key}'"
                        )));
                    }
                    if key == METADATA_KEY {
                        metadata = Some(map.next_value()?);
                    } else {
                        entries.push((key, map.next_value()?));
                    }
                }
                Ok(RawHeader {
                    entries,
                    metadata: metadata.unwrap_or_default(),
                })
            }
        }

        deserializer.deserialize_map(HeaderVisitor)
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Parse a container from raw bytes. `origin` is used in error messages only.
pub fn decode_container(bytes: &[u8], origin: &Path) -> Result<TensorMap> {
    if bytes.len() < 8 {
        return Err(Error::malformed(
            origin,
            format!(
                "file holds {} bytes, too short for a header length",
                bytes.len()
            ),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte slice"));
    let data_start = (header_len as u128 + 8) as usize;
    if header_len as u128 + 8 > bytes.len() as u128 {
        return Err(Error::malformed(
            origin,
            format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ),
        ));
    }
    let header = &bytes[8..data_start];
    let data = &bytes[data_start..];

    let raw: RawHeader = serde_json::from_slice(header)
        .map_err(|e| Error::malformed(origin, format!("header not valid JSON: {e}")))?;

    let mut map = TensorMap::new();
    for (k, v) in raw.metadata {
        map.set_metadata(k, v);
    }

    // (begin, end, name) for the contiguity check.
    let mut spans: Vec<(u64, u64, String)> = Vec::with_capacity(raw.entries.len());

    for (name, entry) in raw.entries {
        let dtype = entry.dtype.parse::<DType>().map_err(|_| {
            Error::malformed(
                origin,
                format!("tensor '{name}' has unknown dtype string '{}'", entry.dtype),
            )
        })?;
        if entry.shape.contains(&0) {
            return Err(Error::malformed(
                origin,
                format!(
                    "tensor '{name}' has zero-sized dimension in shape {:?}",
                    entry.shape
                ),
            ));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::malformed(origin, format!("tensor '{name}' shape overflows")))?;
        let nbytes = numel
            .checked_mul(dtype.element_size() as u64)
            .ok_or_else(|| {
                Error::malformed(origin, format!("tensor '{name}' byte size overflows"))
            })?;
        let [begin, end] = entry.data_offsets;
        if begin > end || end > data.len() as u64 {
            return Err(Error::malformed(
                origin,
                format!(
                    "tensor '{name}' has out-of-bounds data offsets [{begin}, {end}] (data region is {} bytes)",
                    data.len()
                ),
            ));
        }
        if end - begin != nbytes {
            return Err(Error::malformed(
                origin,
                format!(
                    "tensor '{name}' offsets [{begin}, {end}] span {} bytes but shape {:?} with dtype {} needs {nbytes}",
                    end - begin,
                    entry.shape,
                    dtype,
                ),
            ));
        }

        let shape: Vec<usize> = entry.shape.iter().map(|&d| d as usize).collect();
        let esize = dtype.element_size();
        let base = begin as usize;
        let values: Vec<f64> = (0..numel as usize)
            .map(|i| dtype.read_element(data, base + i * esize))
            .collect();
        let tensor = DenseTensor::new(shape, dtype, values)
            .map_err(|e| Error::malformed(origin, format!("tensor '{name}': {e}")))?;
        map.insert(name.clone(), tensor)
            .map_err(|e| Error::malformed(origin, e.to_string()))?;
        spans.push((begin, end, name));
    }

    spans.sort();
    let mut cursor = 0u64;
    for (begin, end, name) in &spans {
        if *begin < cursor {
            return Err(Error::malformed(
                origin,
                format!("tensor '{name}' data offsets [{begin}, {end}] overlap the previous buffer ending at {cursor}"),
            ));
        }
        if *begin > cursor {
            return Err(Error::malformed(
                origin,
                format!("gap in data region before tensor '{name}' at offset {begin} (expected {cursor})"),
            ));
        }
        cursor = *end;
    }
    if cursor != data.len() as u64 {
        return Err(Error::malformed(
            origin,
            format!(
                "data region holds {} bytes but tensors end at offset {cursor}",
                data.len()
            ),
        ));
    }

    Ok(map)
}

/// Read a container file into a [`TensorMap`]. Values are widened to f64;
/// the storage dtype is preserved on each tensor.
pub fn read_container(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

/// Serialize a container to bytes with the canonical header layout.
pub fn encode_container(map: &TensorMap, policy: DtypePolicy) -> Result<Vec<u8>> {
    if let Some((name, index, value)) = map.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.clone(),
            detail: format!("element {index} is {value}"),
        });
    }

    let mut header = BTreeMap::<String, serde_json::Value>::new();
    if !map.metadata().is_empty() {
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(map.metadata()).expect("string map to JSON"),
        );
    }

    let mut offset = 0u64;
    let mut buffers: Vec<u8> = Vec::new();
    for (name, tensor) in map.iter() {
        let dtype = policy.effective(tensor.dtype());
        let nbytes = tensor.numel() as u64 * dtype.element_size() as u64;
        header.insert(
            name.clone(),
            serde_json::json!({
                "dtype": dtype.as_str(),
                "shape": tensor.shape(),
                "data_offsets": [offset, offset + nbytes],
            }),
        );
        buffers.reserve(nbytes as usize);
        for &v in tensor.data() {
            dtype.write_element(v, &mut buffers);
        }
        offset += nbytes;
    }

    let header_json = serde_json::to_string(&header).expect("header to JSON");
    let header_bytes = header_json.as_bytes();

    let mut out = Vec::with_capacity(8 + header_bytes.len() + buffers.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(header_bytes);
    out.extend_from_slice(&buffers);
    Ok(out)
}

/// Write a container file. Refuses to write NaN/Inf values, naming the
/// offending tensor.
pub fn write_container(map: &TensorMap, path: impl AsRef<Path>, policy: DtypePolicy) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(map, policy)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
