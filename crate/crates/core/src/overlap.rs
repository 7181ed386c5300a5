// SPDX-License-Identifier: Apache-2.0

//! Per-frame (gt id, pred id) co-occurrence counts.
//!
//! One pass over the pixels of a frame pair is enough for both metric
//! families: tube IoUs over any clip are sums of these counts across the
//! clip's frames, and the semantic confusion and track overlaps of STQ are
//! sums over the whole video.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{IdRaster, VideoPanopticSequence};

#[inline]
fn pack(gt: u32, pred: u32) -> u64 {
    (gt as u64) << 32 | pred as u64
}

/// Pixel count of every (gt id, pred id) pair occurring in one frame,
/// sorted by (gt, pred). Void (0) participates like any other id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameOverlap {
    pairs: Vec<(u32, u32, u64)>,
}

impl FrameOverlap {
    pub fn compute(gt: &IdRaster, pred: &IdRaster) -> Result<Self> {
        if gt.dims() != pred.dims() {
            return Err(Error::DimensionMismatch(format!(
                "gt frame is {}x{}, pred frame is {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        let mut counts: HashMap<u64, u64> = HashMap::new();
        let g = gt.ids();
        let p = pred.ids();
        let mut i = 0;
        while i < g.len() {
            let (a, b) = (g[i], p[i]);
            let start = i;
            i += 1;
            while i < g.len() && g[i] == a && p[i] == b {
                i += 1;
            }
            *counts.entry(pack(a, b)).or_insert(0) += (i - start) as u64;
        }
        let mut pairs: Vec<(u32, u32, u64)> = counts
            .into_iter()
            .map(|(k, n)| ((k >> 32) as u32, k as u32, n))
            .collect();
        pairs.sort_unstable();
        Ok(FrameOverlap { pairs })
    }

    pub fn pairs(&self) -> &[(u32, u32, u64)] {
        &self.pairs
    }
}

/// Frame overlaps of one gt/pred video pair plus both segment maps.
#[derive(Debug, Clone)]
pub struct VideoOverlap {
    video_id: String,
    frames: Vec<FrameOverlap>,
    gt_segments: BTreeMap<u32, u32>,
    pred_segments: BTreeMap<u32, u32>,
}

impl VideoOverlap {
    /// Frames are processed concurrently; the result does not depend on
    /// the worker count.
    pub fn compute(gt: &VideoPanopticSequence, pred: &VideoPanopticSequence) -> Result<Self> {
        if gt.num_frames() != pred.num_frames() {
            return Err(Error::DimensionMismatch(format!(
                "video '{}': gt has {} frames, pred has {}",
                gt.video_id(),
                gt.num_frames(),
                pred.num_frames()
            )));
        }
        if gt.dims() != pred.dims() {
            return Err(Error::DimensionMismatch(format!(
                "video '{}': gt is {:?}, pred is {:?}",
                gt.video_id(),
                gt.dims(),
                pred.dims()
            )));
        }
        let frames = gt
            .frames()
            .par_iter()
            .zip(pred.frames().par_iter())
            .map(|(g, p)| FrameOverlap::compute(g, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoOverlap {
            video_id: gt.video_id().to_owned(),
            frames,
            gt_segments: gt.segments().clone(),
            pred_segments: pred.segments().clone(),
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[FrameOverlap] {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn gt_segments(&self) -> &BTreeMap<u32, u32> {
        &self.gt_segments
    }

    pub fn pred_segments(&self) -> &BTreeMap<u32, u32> {
        &self.pred_segments
    }

    /// Summed pair counts over `frames`, sorted by (gt, pred).
    pub fn sum_over(&self, frames: std::ops::Range<usize>) -> Vec<(u32, u32, u64)> {
        let mut acc: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for f in &self.frames[frames] {
            for &(g, p, n) in &f.pairs {
                *acc.entry((g, p)).or_insert(0) += n;
            }
        }
        acc.into_iter().map(|((g, p), n)| (g, p, n)).collect()
    }
}
