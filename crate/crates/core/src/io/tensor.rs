// SPDX-License-Identifier: Apache-2.0

//! Binary tensor envelopes for logit volumes and weight maps.
//!
//! Layout: 8-byte magic, 4-byte big-endian header length, UTF-8 JSON
//! header, raw binary32 payload. Writers always emit little-endian; readers
//! honour the endianness the header declares.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CategoryTable;

pub const LOGIT_MAGIC: &[u8; 8] = b"VPSLGT01";
pub const WEIGHT_MAGIC: &[u8; 8] = b"VPSWGT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

fn split_envelope<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(Error::Header(format!(
            "missing magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if rest.len() < len {
        return Err(Error::Header(format!(
            "header length {len} exceeds file size"
        )));
    }
    Ok(rest.split_at(len))
}

fn join_envelope(magic: &[u8; 8], header: &[u8], payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(header);
    out
}

fn decode_f32s(payload: &[u8], endianness: Endianness) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| {
            let b: [u8; 4] = b.try_into().unwrap();
            match endianness {
                Endianness::Little => f32::from_le_bytes(b),
                Endianness::Big => f32::from_be_bytes(b),
            }
        })
        .collect()
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::Io { .. } | Error::File { .. } | Error::Json { .. }) => e,
        e => Error::file(path, e.to_string()),
    })
}

/// T×H×W×C class scores from one model source, stored (t, h, w, c)
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVolume {
    dims: [usize; 4],
    class_index: Vec<u32>,
    values: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogitHeader {
    dims: [usize; 4],
    class_index: Vec<u32>,
    endianness: Endianness,
}

impl LogitVolume {
    /// `dims` is `[frames, height, width, classes]`.
    pub fn new(dims: [usize; 4], class_index: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "logit dims must be positive, got {dims:?}"
            )));
        }
        if class_index.len() != dims[3] {
            return Err(Error::DimensionMismatch(format!(
                "{} classes declared but class_index has {} entries",
                dims[3],
                class_index.len()
            )));
        }
        let mut seen = BTreeSet::new();
        if let Some(&dup) = class_index.iter().find(|&&c| !seen.insert(c)) {
            return Err(Error::Header(format!("duplicate class id {dup}")));
        }
        let expected = dims.iter().product::<usize>();
        if values.len() != expected {
            return Err(Error::PayloadLength {
                expected: expected * 4,
                found: values.len() * 4,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit(i));
        }
        Ok(LogitVolume {
            dims,
            class_index,
            values,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn num_classes(&self) -> usize {
        self.dims[3]
    }

    pub fn class_index(&self) -> &[u32] {
        &self.class_index
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Class scores of one pixel.
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let c = self.dims[3];
        let i = ((t * self.dims[1] + y) * self.dims[2] + x) * c;
        &self.values[i..i + c]
    }

    pub fn check_classes(&self, cats: &CategoryTable) -> Result<()> {
        match self.class_index.iter().find(|&&c| !cats.contains(c)) {
            Some(&c) => Err(Error::UnknownClass(c)),
            None => Ok(()),
        }
    }

    /// Keeps only the listed classes, in the order given.
    pub fn select_classes(&self, classes: &[u32]) -> Result<LogitVolume> {
        let cols = classes
            .iter()
            .map(|c| {
                self.class_index
                    .iter()
                    .position(|x| x == c)
                    .ok_or(Error::UnknownClass(*c))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = self
            .values
            .chunks_exact(self.dims[3])
            .flat_map(|px| cols.iter().map(move |&i| px[i]))
            .collect();
        let [t, h, w, _] = self.dims;
        LogitVolume::new([t, h, w, cols.len()], classes.to_vec(), values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&LogitHeader {
            dims: self.dims,
            class_index: self.class_index.clone(),
            endianness: Endianness::Little,
        })
        .expect("header serialises");
        let mut out = join_envelope(LOGIT_MAGIC, &header, self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_envelope(bytes, LOGIT_MAGIC)?;
        let header: LogitHeader =
            serde_json::from_slice(header).map_err(|e| Error::Header(e.to_string()))?;
        let expected = header
            .dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Header("dims overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        LogitVolume::new(
            header.dims,
            header.class_index,
            decode_f32s(payload, header.endianness),
        )
    }
}

pub fn read_logits(path: &Path) -> Result<LogitVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, LogitVolume::from_bytes(&bytes))
}

/// Reads a logit file and checks every class id against `cats`.
pub fn read_logits_checked(path: &Path, cats: &CategoryTable) -> Result<LogitVolume> {
    let vol = read_logits(path)?;
    with_path(path, vol.check_classes(cats))?;
    Ok(vol)
}

pub fn write_logits(vol: &LogitVolume, path: &Path) -> Result<()> {
    fs::write(path, vol.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// An empty shape denotes a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::named("<unnamed>", shape, data)
    }

    fn named(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                name: name.to_owned(),
                expected: 0,
                found: data.len(),
                shape,
            });
        }
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                name: name.to_owned(),
                shape,
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteWeight(name.to_owned()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Named tensors, always iterated in ascending name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightMap {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightHeader {
    endianness: Endianness,
    tensors: Vec<TensorHeader>,
}

impl WeightMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateTensor(name));
        }
        let t = Tensor::named(&name, shape, data)?;
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&WeightHeader {
            endianness: Endianness::Little,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorHeader {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        })
        .expect("header serialises");
        let total: usize = self.tensors.values().map(|t| t.data.len() * 4).sum();
        let mut out = join_envelope(WEIGHT_MAGIC, &header, total);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_envelope(bytes, WEIGHT_MAGIC)?;
        let header: WeightHeader =
            serde_json::from_slice(header).map_err(|e| Error::Header(e.to_string()))?;
        let mut names = BTreeSet::new();
        for t in &header.tensors {
            if !names.insert(t.name.as_str()) {
                return Err(Error::DuplicateTensor(t.name.clone()));
            }
        }
        if header.tensors.windows(2).any(|w| w[0].name > w[1].name) {
            return Err(Error::Header("tensor names are not in ascending order".into()));
        }
        let mut expected = 0usize;
        for t in &header.tensors {
            let n = t
                .shape
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Header(format!("tensor '{}' shape overflows", t.name)))?;
            expected = expected
                .checked_add(n)
                .ok_or_else(|| Error::Header("payload size overflows".into()))?;
        }
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        let mut map = WeightMap::new();
        let mut offset = 0;
        for t in header.tensors {
            let n = t.shape.iter().product::<usize>() * 4;
            let data = decode_f32s(&payload[offset..offset + n], header.endianness);
            offset += n;
            map.insert(t.name, t.shape, data)?;
        }
        Ok(map)
    }
}

pub fn read_weights(path: &Path) -> Result<WeightMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    with_path(path, WeightMap::from_bytes(&bytes))
}

pub fn write_weights(wm: &WeightMap, path: &Path) -> Result<()> {
    fs::write(path, wm.to_bytes()).map_err(|e| Error::io(path, e))
}
