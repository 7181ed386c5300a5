// SPDX-License-Identifier: Apache-2.0

//! Query-based mask decoding: each target is a query vector and its mask
//! score at a pixel is the inner product with that pixel's feature vector.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{LogitVolume, WeightMap};
use crate::types::{CategoryTable, IdRaster, VideoPanopticSequence, VOID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    SemanticClass,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub kind: TargetKind,
    pub category_id: u32,
}

/// Tensor names used when a query matrix is stored as a weight map.
pub const QUERY_TENSOR: &str = "queries";
pub const QUERY_CATEGORY_TENSOR: &str = "query_category";
pub const QUERY_KIND_TENSOR: &str = "query_kind";

/// N×D query vectors with per-query target metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMatrix {
    dim: usize,
    values: Vec<f32>,
    meta: Vec<QueryMeta>,
}

impl QueryMatrix {
    pub fn new(dim: usize, values: Vec<f32>, meta: Vec<QueryMeta>) -> Result<Self> {
        if dim == 0 || meta.is_empty() {
            return Err(Error::DimensionMismatch(
                "query matrix needs at least one query and one dimension".into(),
            ));
        }
        if values.len() != dim * meta.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} queries of dim {dim} need {} values, got {}",
                meta.len(),
                dim * meta.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("query values must be finite".into()));
        }
        Ok(QueryMatrix { dim, values, meta })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn query(&self, n: usize) -> &[f32] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn meta(&self) -> &[QueryMeta] {
        &self.meta
    }

    /// Reads `queries` [N, D], `query_category` [N] and `query_kind` [N]
    /// (0 = semantic class, 1 = instance).
    pub fn from_weights(wm: &WeightMap) -> Result<Self> {
        let get = |name: &str| {
            wm.get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing tensor '{name}'")))
        };
        let q = get(QUERY_TENSOR)?;
        let cats = get(QUERY_CATEGORY_TENSOR)?;
        let kinds = get(QUERY_KIND_TENSOR)?;
        let &[n, d] = q.shape() else {
            return Err(Error::DimensionMismatch(format!(
                "'{QUERY_TENSOR}' must be 2-D, got shape {:?}",
                q.shape()
            )));
        };
        if cats.data().len() != n || kinds.data().len() != n {
            return Err(Error::DimensionMismatch(
                "query metadata length differs from query count".into(),
            ));
        }
        let meta = cats
            .data()
            .iter()
            .zip(kinds.data())
            .map(|(&c, &k)| {
                if c < 0.0 || c.fract() != 0.0 || c > 16_777_216.0 {
                    return Err(Error::InvalidArgument(format!("bad query category {c}")));
                }
                let kind = match k {
                    0.0 => TargetKind::SemanticClass,
                    1.0 => TargetKind::Instance,
                    _ => return Err(Error::InvalidArgument(format!("bad query kind {k}"))),
                };
                Ok(QueryMeta {
                    kind,
                    category_id: c as u32,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        QueryMatrix::new(d, q.data().to_vec(), meta)
    }

    pub fn to_weights(&self) -> WeightMap {
        let mut wm = WeightMap::new();
        let n = self.len();
        wm.insert(QUERY_TENSOR, vec![n, self.dim], self.values.clone())
            .expect("query tensor is consistent");
        wm.insert(
            QUERY_CATEGORY_TENSOR,
            vec![n],
            self.meta.iter().map(|m| m.category_id as f32).collect(),
        )
        .expect("category tensor is consistent");
        wm.insert(
            QUERY_KIND_TENSOR,
            vec![n],
            self.meta
                .iter()
                .map(|m| match m.kind {
                    TargetKind::SemanticClass => 0.0,
                    TargetKind::Instance => 1.0,
                })
                .collect(),
        )
        .expect("kind tensor is consistent");
        wm
    }
}

/// T×H×W×D per-pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    dims: [usize; 4],
    values: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(dims: [usize; 4], values: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "feature dims must be positive, got {dims:?}"
            )));
        }
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch("feature payload size".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(FeatureVolume { dims, values })
    }

    /// Reuses the logit container; its class index is ignored.
    pub fn from_logits(vol: &LogitVolume) -> Self {
        FeatureVolume {
            dims: vol.dims(),
            values: vol.values().to_vec(),
        }
    }

    pub fn to_logits(&self) -> LogitVolume {
        LogitVolume::new(
            self.dims,
            (0..self.dims[3] as u32).collect(),
            self.values.clone(),
        )
        .expect("feature volume is a valid logit volume")
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn feature(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let d = self.dims[3];
        let i = ((t * self.dims[1] + y) * self.dims[2] + x) * d;
        &self.values[i..i + d]
    }
}

/// Per-pixel winning query index, `None` for void.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentVolume {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub assignment: Vec<Option<u32>>,
}

impl AssignmentVolume {
    pub fn get(&self, t: usize, y: usize, x: usize) -> Option<u32> {
        self.assignment[(t * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Minimum winning score for a pixel to be assigned.
    pub tau: f64,
    /// L2-normalise queries and features before the inner product.
    pub normalize: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            tau: 0.0,
            normalize: false,
        }
    }
}

fn l2_normalized(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|&x| x as f64 / norm).collect()
    }
}

/// Assigns each pixel to the query with the highest inner product if that
/// score reaches `tau`; ties go to the lowest query index.
pub fn decode_masks(q: &QueryMatrix, f: &FeatureVolume, params: &DecodeParams) -> Result<AssignmentVolume> {
    let [t, h, w, d] = f.dims();
    if d != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query dim {} differs from feature dim {d}",
            q.dim()
        )));
    }
    let queries: Vec<Vec<f64>> = (0..q.len())
        .map(|n| {
            if params.normalize {
                l2_normalized(q.query(n))
            } else {
                q.query(n).iter().map(|&x| x as f64).collect()
            }
        })
        .collect();
    let frame_px = h * w;
    let mut assignment = vec![None; t * frame_px];
    assignment
        .par_chunks_mut(frame_px)
        .enumerate()
        .for_each(|(ti, out)| {
            for (i, slot) in out.iter_mut().enumerate() {
                let raw = f.feature(ti, i / w, i % w);
                let feat: Vec<f64> = if params.normalize {
                    l2_normalized(raw)
                } else {
                    raw.iter().map(|&x| x as f64).collect()
                };
                let mut best: Option<(usize, f64)> = None;
                for (n, qv) in queries.iter().enumerate() {
                    let s: f64 = qv.iter().zip(&feat).map(|(a, b)| a * b).sum();
                    if best.is_none_or(|(_, bs)| s > bs) {
                        best = Some((n, s));
                    }
                }
                *slot = best
                    .filter(|&(_, s)| s >= params.tau)
                    .map(|(n, _)| n as u32);
            }
        });
    Ok(AssignmentVolume {
        frames: t,
        height: h,
        width: w,
        assignment,
    })
}

/// Segment id of instance query `n`.
pub fn instance_segment_id(n: usize) -> u32 {
    n as u32 + 1
}

/// Segment id of the collapsed semantic-class segment of `category_id`.
pub fn semantic_segment_id(num_queries: usize, category_id: u32) -> u32 {
    num_queries as u32 + category_id
}

/// Instance query `n` becomes thing track `n + 1`; all semantic-class
/// queries of one category collapse into a single segment with id
/// `N + category_id`. Unassigned pixels are void.
pub fn assignment_to_panoptic(
    video_id: &str,
    av: &AssignmentVolume,
    q: &QueryMatrix,
    cats: &CategoryTable,
) -> Result<VideoPanopticSequence> {
    let n = q.len();
    let mut ids = Vec::with_capacity(n);
    for (i, m) in q.meta().iter().enumerate() {
        let is_thing = cats
            .is_thing(m.category_id)
            .ok_or(Error::UnknownCategory(m.category_id))?;
        ids.push(match m.kind {
            TargetKind::Instance if !is_thing => {
                return Err(Error::InvalidArgument(format!(
                    "instance query {i} refers to stuff category {}",
                    m.category_id
                )))
            }
            TargetKind::Instance => instance_segment_id(i),
            TargetKind::SemanticClass => semantic_segment_id(n, m.category_id),
        });
    }
    let mut segments = BTreeMap::new();
    let mut frames = Vec::with_capacity(av.frames);
    for chunk in av.assignment.chunks(av.height * av.width) {
        let mut raster = Vec::with_capacity(chunk.len());
        for a in chunk {
            let id = match a {
                None => VOID,
                Some(qi) => {
                    let qi = *qi as usize;
                    let meta = q.meta().get(qi).ok_or_else(|| {
                        Error::InvalidArgument(format!("assignment refers to query {qi} of {n}"))
                    })?;
                    segments.insert(ids[qi], meta.category_id);
                    ids[qi]
                }
            };
            raster.push(id);
        }
        frames.push(IdRaster::new(av.height, av.width, raster)?);
    }
    VideoPanopticSequence::new(video_id, frames, segments, cats)
}
