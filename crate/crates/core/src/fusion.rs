// SPDX-License-Identifier: Apache-2.0

//! Logit ensembling and panoptic merging.
//!
//! Stuff-class logits from several sources are averaged per pixel and
//! passed through a softmax; the resulting stuff map fills every pixel
//! that no instance mask claims.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LogitVolume;
use crate::types::{CategoryTable, IdRaster, VideoPanopticSequence, VOID};

/// Per-pixel class distributions, laid out like [`LogitVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    dims: [usize; 4],
    class_index: Vec<u32>,
    values: Vec<f64>,
}

impl ProbabilityVolume {
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn class_index(&self) -> &[u32] {
        &self.class_index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let c = self.dims[3];
        let i = ((t * self.dims[1] + y) * self.dims[2] + x) * c;
        &self.values[i..i + c]
    }

    /// Index into `class_index` of the most probable class; ties go to the
    /// lowest index.
    pub fn argmax(&self, t: usize, y: usize, x: usize) -> usize {
        argmax(self.pixel(t, y, x))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Weighted mean of the sources' logits followed by a softmax.
///
/// `weights` defaults to all ones. Per pixel and class the weighted terms
/// are summed in sorted order, so the result does not depend on the order
/// of the sources.
pub fn average_softmax(sources: &[LogitVolume], weights: Option<&[f64]>) -> Result<ProbabilityVolume> {
    let first = sources
        .first()
        .ok_or_else(|| Error::InvalidArgument("no logit sources".into()))?;
    for s in &sources[1..] {
        if s.dims() != first.dims() {
            return Err(Error::DimensionMismatch(format!(
                "logit source dims {:?} differ from {:?}",
                s.dims(),
                first.dims()
            )));
        }
        if s.class_index() != first.class_index() {
            return Err(Error::DimensionMismatch(
                "logit sources disagree on class_index".into(),
            ));
        }
    }
    let ones = vec![1.0; sources.len()];
    let weights = weights.unwrap_or(&ones);
    if weights.len() != sources.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights given for {} sources",
            weights.len(),
            sources.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let mut sorted_w = weights.to_vec();
    sorted_w.sort_by(f64::total_cmp);
    let total_w: f64 = sorted_w.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }

    let [t, h, w, c] = first.dims();
    let frame_len = h * w * c;
    let mut values = vec![0.0f64; t * frame_len];
    values
        .par_chunks_mut(frame_len)
        .enumerate()
        .for_each(|(ti, out)| {
            let mut terms = vec![0.0f64; sources.len()];
            let base = ti * frame_len;
            for (px, row) in out.chunks_exact_mut(c).enumerate() {
                let off = base + px * c;
                for (ci, slot) in row.iter_mut().enumerate() {
                    for ((term, s), &wt) in terms.iter_mut().zip(sources).zip(weights) {
                        *term = wt * s.values()[off + ci] as f64;
                    }
                    terms.sort_by(f64::total_cmp);
                    *slot = terms.iter().sum::<f64>() / total_w;
                }
                softmax_in_place(row);
            }
        });
    Ok(ProbabilityVolume {
        dims: first.dims(),
        class_index: first.class_index().to_vec(),
        values,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Binary mask of one instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub frame: usize,
    pub track_id: u32,
    pub category_id: u32,
    pub confidence: f64,
    /// Row-major, `height * width` entries.
    pub mask: Vec<bool>,
}

impl InstanceMask {
    pub fn area(&self) -> u64 {
        self.mask.iter().filter(|&&m| m).count() as u64
    }
}

/// Run lengths alternating unset/set pixels in row-major order, starting
/// with an unset run (which may be zero).
pub fn mask_to_rle(mask: &[bool]) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &m in mask {
        if m != current {
            counts.push(run);
            run = 0;
            current = m;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

pub fn mask_from_rle(counts: &[u64], len: usize) -> Result<Vec<bool>> {
    let total: u64 = counts.iter().sum();
    if total != len as u64 {
        return Err(Error::InvalidArgument(format!(
            "mask run lengths cover {total} pixels, expected {len}"
        )));
    }
    let mut out = Vec::with_capacity(len);
    for (i, &n) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub frame: usize,
    pub track_id: u32,
    pub category_id: u32,
    pub confidence: f64,
    pub counts: Vec<u64>,
}

/// JSON file of run-length encoded instance masks for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub video_id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<InstanceRecord>,
}

impl InstanceFile {
    pub fn from_masks(
        video_id: impl Into<String>,
        dims: (usize, usize, usize),
        masks: &[InstanceMask],
    ) -> Self {
        InstanceFile {
            video_id: video_id.into(),
            frames: dims.0,
            height: dims.1,
            width: dims.2,
            masks: masks
                .iter()
                .map(|m| InstanceRecord {
                    frame: m.frame,
                    track_id: m.track_id,
                    category_id: m.category_id,
                    confidence: m.confidence,
                    counts: mask_to_rle(&m.mask),
                })
                .collect(),
        }
    }

    pub fn masks(&self) -> Result<Vec<InstanceMask>> {
        self.masks
            .iter()
            .map(|r| {
                Ok(InstanceMask {
                    frame: r.frame,
                    track_id: r.track_id,
                    category_id: r.category_id,
                    confidence: r.confidence,
                    mask: mask_from_rle(&r.counts, self.height * self.width)?,
                })
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Minimum kept area, in pixels, for instances and per-frame stuff regions.
    pub min_area: u64,
    /// Minimum fraction of an instance's mask that must remain unclaimed.
    pub overlap_keep: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            min_area: 0,
            overlap_keep: 0.5,
        }
    }
}

/// Segment id used for a stuff category in merged output: the largest
/// instance track id plus the category id, so it never collides with a
/// track.
pub fn stuff_segment_id(max_track_id: u32, category_id: u32) -> u32 {
    max_track_id + category_id
}

/// Builds a panoptic sequence from a stuff probability map and instance
/// masks.
///
/// Per frame, instances are placed in descending confidence (ties by track
/// id). An instance keeps only unclaimed pixels and survives if the kept
/// fraction of its mask is at least `overlap_keep` and the kept area is at
/// least `min_area`. Remaining pixels take the argmax over the stuff
/// classes of `stuff_probs`; thing channels, if present, are ignored. Stuff
/// regions smaller than `min_area` in a frame become void.
pub fn merge_panoptic(
    video_id: &str,
    stuff_probs: &ProbabilityVolume,
    instances: &[InstanceMask],
    cats: &CategoryTable,
    params: &MergeParams,
) -> Result<VideoPanopticSequence> {
    let [t, h, w, _] = stuff_probs.dims();
    let mut stuff_channels = Vec::new();
    for (i, &c) in stuff_probs.class_index().iter().enumerate() {
        match cats.is_thing(c) {
            None => return Err(Error::UnknownClass(c)),
            Some(false) => stuff_channels.push((i, c)),
            Some(true) => {}
        }
    }
    if !(0.0..=1.0).contains(&params.overlap_keep) {
        return Err(Error::InvalidArgument("overlap_keep must lie in [0, 1]".into()));
    }

    let mut track_cats: BTreeMap<u32, u32> = BTreeMap::new();
    let mut per_frame: Vec<Vec<&InstanceMask>> = vec![Vec::new(); t];
    let mut seen = BTreeSet::new();
    for m in instances {
        if m.frame >= t {
            return Err(Error::DimensionMismatch(format!(
                "instance {} refers to frame {} of {t}",
                m.track_id, m.frame
            )));
        }
        if m.mask.len() != h * w {
            return Err(Error::DimensionMismatch(format!(
                "instance {} mask has {} pixels, canvas has {}",
                m.track_id,
                m.mask.len(),
                h * w
            )));
        }
        if m.track_id == VOID {
            return Err(Error::InvalidArgument("track id 0 is reserved for void".into()));
        }
        match cats.is_thing(m.category_id) {
            None => return Err(Error::UnknownCategory(m.category_id)),
            Some(false) => {
                return Err(Error::InvalidArgument(format!(
                    "non-thing instance category {} for track {}",
                    m.category_id, m.track_id
                )))
            }
            Some(true) => {}
        }
        if !(0.0..=1.0).contains(&m.confidence) {
            return Err(Error::InvalidArgument(format!(
                "track {} confidence {} outside [0, 1]",
                m.track_id, m.confidence
            )));
        }
        if *track_cats.entry(m.track_id).or_insert(m.category_id) != m.category_id {
            return Err(Error::InvalidArgument(format!(
                "track {} changes category",
                m.track_id
            )));
        }
        if !seen.insert((m.frame, m.track_id)) {
            return Err(Error::InvalidArgument(format!(
                "track {} has two masks in frame {}",
                m.track_id, m.frame
            )));
        }
        per_frame[m.frame].push(m);
    }
    let max_track = track_cats.keys().next_back().copied().unwrap_or(0);
    if stuff_channels
        .iter()
        .any(|&(_, c)| max_track.checked_add(c).is_none())
    {
        return Err(Error::InvalidArgument("track ids too large for stuff ids".into()));
    }

    let frames: Vec<(IdRaster, BTreeSet<u32>)> = per_frame
        .into_par_iter()
        .enumerate()
        .map(|(ti, mut masks)| {
            masks.sort_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then(a.track_id.cmp(&b.track_id))
            });
            let mut canvas = vec![VOID; h * w];
            let mut placed = BTreeSet::new();
            for m in masks {
                let area = m.area();
                if area == 0 {
                    continue;
                }
                let kept = m
                    .mask
                    .iter()
                    .zip(&canvas)
                    .filter(|(&on, &id)| on && id == VOID)
                    .count() as u64;
                if kept == 0
                    || (kept as f64) < params.overlap_keep * area as f64
                    || kept < params.min_area
                {
                    continue;
                }
                for (px, &on) in canvas.iter_mut().zip(&m.mask) {
                    if on && *px == VOID {
                        *px = m.track_id;
                    }
                }
                placed.insert(m.track_id);
            }
            if !stuff_channels.is_empty() {
                let mut stuff_area: BTreeMap<u32, u64> = BTreeMap::new();
                for (i, px) in canvas.iter_mut().enumerate() {
                    if *px != VOID {
                        continue;
                    }
                    let row = stuff_probs.pixel(ti, i / w, i % w);
                    let mut best = stuff_channels[0];
                    for &(ch, c) in &stuff_channels[1..] {
                        if row[ch] > row[best.0] {
                            best = (ch, c);
                        }
                    }
                    let id = stuff_segment_id(max_track, best.1);
                    *px = id;
                    *stuff_area.entry(id).or_insert(0) += 1;
                }
                let small: BTreeSet<u32> = stuff_area
                    .iter()
                    .filter(|(_, &n)| n < params.min_area)
                    .map(|(&id, _)| id)
                    .collect();
                if !small.is_empty() {
                    for px in canvas.iter_mut() {
                        if small.contains(px) {
                            *px = VOID;
                        }
                    }
                }
            }
            let raster = IdRaster::new(h, w, canvas).expect("canvas has frame dimensions");
            (raster, placed)
        })
        .collect();

    let mut segments = BTreeMap::new();
    for (raster, placed) in &frames {
        for &tid in placed {
            segments.insert(tid, track_cats[&tid]);
        }
        for &(_, c) in &stuff_channels {
            let id = stuff_segment_id(max_track, c);
            if raster.ids().contains(&id) {
                segments.insert(id, c);
            }
        }
    }
    let rasters = frames.into_iter().map(|(r, _)| r).collect();
    VideoPanopticSequence::new(video_id, rasters, segments, cats)
}
