// SPDX-License-Identifier: Apache-2.0

//! Tube-based Video Panoptic Quality.
//!
//! For a window size `k` every stride-1 clip of `k` frames is evaluated
//! independently: each segment id forms a tube over the clip, a (pred, gt)
//! tube pair of the same category with tube IoU > 0.5 is a true positive,
//! unmatched gt tubes are false negatives and unmatched pred tubes are
//! false positives unless more than half of their pixels lie on gt void.
//! Counts and IoU sums are accumulated per class over all clips and videos
//! before dividing, then averaged over classes, then over windows.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};
use crate::overlap::VideoOverlap;
use crate::types::{CategoryTable, VideoPanopticSequence, VOID};

/// A pair matches when its tube IoU is strictly above this.
pub const MATCH_IOU: f64 = 0.5;
/// Unmatched predictions with more than this fraction on gt void are ignored.
pub const VOID_IGNORE_FRACTION: f64 = 0.5;
pub const DEFAULT_WINDOWS: [usize; 4] = [1, 2, 4, 6];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpqConfig {
    pub windows: Vec<usize>,
    /// Skip unmatched predictions lying mostly on gt void instead of
    /// counting them as false positives.
    pub ignore_void_predictions: bool,
}

impl Default for VpqConfig {
    fn default() -> Self {
        VpqConfig {
            windows: DEFAULT_WINDOWS.to_vec(),
            ignore_void_predictions: true,
        }
    }
}

impl VpqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::InvalidArgument("no window sizes given".into()));
        }
        if self.windows.contains(&0) {
            return Err(Error::InvalidArgument("window size must be at least 1".into()));
        }
        let unique: BTreeSet<_> = self.windows.iter().collect();
        if unique.len() != self.windows.len() {
            return Err(Error::InvalidArgument("duplicate window size".into()));
        }
        Ok(())
    }
}

/// Clip frame ranges for window `k` over a video of `frames` frames.
/// Videos shorter than `k` yield one clip covering the whole video.
pub fn clips(frames: usize, k: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let (count, len) = if k >= frames { (1, frames) } else { (frames - k + 1, k) };
    (0..count).map(move |s| s..s + len)
}

/// One segment's per-frame pixel sets over a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTube {
    pub segment_id: u32,
    pub category_id: u32,
    /// First frame of the clip.
    pub start: usize,
    /// Sorted row-major pixel indices, one list per clip frame.
    pub pixels: Vec<Vec<u32>>,
}

impl SegmentTube {
    /// `None` when the segment has no pixel in the clip or no category.
    pub fn from_sequence(
        seq: &VideoPanopticSequence,
        segment_id: u32,
        clip: std::ops::Range<usize>,
    ) -> Option<Self> {
        let category_id = seq.category_of(segment_id)?;
        let start = clip.start;
        let pixels: Vec<Vec<u32>> = seq.frames()[clip]
            .iter()
            .map(|f| {
                f.ids()
                    .iter()
                    .enumerate()
                    .filter(|(_, &id)| id == segment_id)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        if pixels.iter().all(Vec::is_empty) {
            return None;
        }
        Some(SegmentTube {
            segment_id,
            category_id,
            start,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn area(&self) -> u64 {
        self.pixels.iter().map(|p| p.len() as u64).sum()
    }
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Tube IoU `Σ|p_t ∩ g_t| / Σ|p_t ∪ g_t|`. When `gt_seq` is given, pred
/// pixels on gt void are dropped from both terms.
///
/// Panics if the tubes cover different clips.
pub fn tube_iou(pred: &SegmentTube, gt: &SegmentTube, gt_seq: Option<&VideoPanopticSequence>) -> f64 {
    assert!(
        pred.start == gt.start && pred.len() == gt.len(),
        "tubes must share a clip span"
    );
    let mut inter = 0u64;
    let mut union = 0u64;
    for (t, (p, g)) in pred.pixels.iter().zip(&gt.pixels).enumerate() {
        let p_kept: u64 = match gt_seq {
            Some(seq) => {
                let frame = seq.frames()[pred.start + t].ids();
                p.iter().filter(|&&i| frame[i as usize] != VOID).count() as u64
            }
            None => p.len() as u64,
        };
        let i = sorted_intersection(p, g);
        inter += i;
        union += p_kept + g.len() as u64 - i;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Final per-class counts for one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassStats {
    pub fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    /// `None` when the class never occurs in gt or pred.
    pub fn vpq(&self) -> Option<f64> {
        (self.tp + self.fp + self.fn_ > 0).then(|| self.iou_sum / self.denominator())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ClassAccum {
    iou: CompensatedSum,
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl ClassAccum {
    fn merge(&mut self, o: &ClassAccum) {
        self.iou.merge(&o.iou);
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    fn stats(&self) -> ClassStats {
        ClassStats {
            iou_sum: self.iou.value(),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

fn check_categories(ov: &VideoOverlap, cats: &CategoryTable) -> Result<()> {
    for &c in ov.gt_segments().values().chain(ov.pred_segments().values()) {
        if !cats.contains(c) {
            return Err(Error::UnknownCategory(c));
        }
    }
    Ok(())
}

fn category_slot(segments: &BTreeMap<u32, u32>, id: u32, cats: &CategoryTable) -> Result<usize> {
    let c = segments
        .get(&id)
        .ok_or_else(|| Error::InvalidArgument(format!("segment {id} has no category")))?;
    cats.index_of(*c).ok_or(Error::UnknownCategory(*c))
}

/// Accumulates one clip, given its summed (gt, pred, count) pairs.
fn accumulate_clip(
    pairs: &[(u32, u32, u64)],
    ov: &VideoOverlap,
    cats: &CategoryTable,
    ignore_void: bool,
    acc: &mut [ClassAccum],
) -> Result<()> {
    let mut gt_area: BTreeMap<u32, u64> = BTreeMap::new();
    // (pixels on gt non-void, pixels on gt void)
    let mut pred_area: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for &(g, p, n) in pairs {
        if g != VOID {
            *gt_area.entry(g).or_insert(0) += n;
        }
        if p != VOID {
            let e = pred_area.entry(p).or_insert((0, 0));
            if g != VOID {
                e.0 += n;
            } else {
                e.1 += n;
            }
        }
    }

    let mut matched_gt = BTreeSet::new();
    let mut matched_pred = BTreeSet::new();
    for &(g, p, inter) in pairs {
        if g == VOID || p == VOID {
            continue;
        }
        let gc = category_slot(ov.gt_segments(), g, cats)?;
        let pc = category_slot(ov.pred_segments(), p, cats)?;
        if gc != pc {
            continue;
        }
        let union = gt_area[&g] + pred_area[&p].0 - inter;
        let iou = inter as f64 / union as f64;
        if iou > MATCH_IOU {
            assert!(
                matched_gt.insert(g) && matched_pred.insert(p),
                "IoU > 0.5 matching must be one-to-one"
            );
            acc[gc].tp += 1;
            acc[gc].iou.add(iou);
        }
    }
    for &g in gt_area.keys() {
        if !matched_gt.contains(&g) {
            acc[category_slot(ov.gt_segments(), g, cats)?].fn_ += 1;
        }
    }
    for (&p, &(on_gt, on_void)) in &pred_area {
        if matched_pred.contains(&p) {
            continue;
        }
        let total = on_gt + on_void;
        if ignore_void && on_void as f64 > VOID_IGNORE_FRACTION * total as f64 {
            continue;
        }
        acc[category_slot(ov.pred_segments(), p, cats)?].fp += 1;
    }
    Ok(())
}

fn window_accum(
    ov: &VideoOverlap,
    k: usize,
    cats: &CategoryTable,
    ignore_void: bool,
) -> Result<Vec<ClassAccum>> {
    if k == 0 {
        return Err(Error::InvalidArgument("window size must be at least 1".into()));
    }
    check_categories(ov, cats)?;
    let mut acc = vec![ClassAccum::default(); cats.len()];
    for clip in clips(ov.num_frames(), k) {
        let pairs = ov.sum_over(clip);
        accumulate_clip(&pairs, ov, cats, ignore_void, &mut acc)?;
    }
    Ok(acc)
}

fn to_map(acc: &[ClassAccum], cats: &CategoryTable) -> BTreeMap<u32, ClassStats> {
    cats.ids().zip(acc).map(|(c, a)| (c, a.stats())).collect()
}

/// Per-class stats of one video pair for window size `k`.
pub fn vpq_window(
    gt: &VideoPanopticSequence,
    pred: &VideoPanopticSequence,
    k: usize,
    cats: &CategoryTable,
    config: &VpqConfig,
) -> Result<BTreeMap<u32, ClassStats>> {
    let ov = VideoOverlap::compute(gt, pred)?;
    let acc = window_accum(&ov, k, cats, config.ignore_void_predictions)?;
    Ok(to_map(&acc, cats))
}

/// Per-window class accumulators of one video, ready to be reduced.
#[derive(Debug, Clone)]
pub struct VideoVpqStats {
    video_id: String,
    windows: Vec<Vec<ClassAccum>>,
}

impl VideoVpqStats {
    pub fn compute(ov: &VideoOverlap, cats: &CategoryTable, config: &VpqConfig) -> Result<Self> {
        config.validate()?;
        let windows = config
            .windows
            .iter()
            .map(|&k| window_accum(ov, k, cats, config.ignore_void_predictions))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoVpqStats {
            video_id: ov.video_id().to_owned(),
            windows,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    /// Class stats for the `i`-th configured window.
    pub fn window(&self, i: usize, cats: &CategoryTable) -> BTreeMap<u32, ClassStats> {
        to_map(&self.windows[i], cats)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub category_id: u32,
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Absent when the class never occurs.
    pub vpq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub k: usize,
    pub vpq: f64,
    pub classes: Vec<ClassReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpqReport {
    pub windows: Vec<WindowReport>,
    pub overall_vpq: f64,
}

impl VpqReport {
    pub fn window(&self, k: usize) -> Option<&WindowReport> {
        self.windows.iter().find(|w| w.k == k)
    }
}

/// Collects per-video stats and reduces them in sorted video-id order, so
/// the result is independent of insertion order and worker count.
pub struct VpqAccumulator<'a> {
    cats: &'a CategoryTable,
    config: VpqConfig,
    videos: BTreeMap<String, VideoVpqStats>,
}

impl<'a> VpqAccumulator<'a> {
    pub fn new(cats: &'a CategoryTable, config: VpqConfig) -> Result<Self> {
        config.validate()?;
        Ok(VpqAccumulator {
            cats,
            config,
            videos: BTreeMap::new(),
        })
    }

    pub fn push(&mut self, stats: VideoVpqStats) -> Result<()> {
        if stats.windows.len() != self.config.windows.len() {
            return Err(Error::InvalidArgument(
                "video stats computed with a different window list".into(),
            ));
        }
        if self.videos.contains_key(&stats.video_id) {
            return Err(Error::InvalidArgument(format!(
                "video '{}' added twice",
                stats.video_id
            )));
        }
        self.videos.insert(stats.video_id.clone(), stats);
        Ok(())
    }

    pub fn add(&mut self, ov: &VideoOverlap) -> Result<()> {
        let stats = VideoVpqStats::compute(ov, self.cats, &self.config)?;
        self.push(stats)
    }

    pub fn finish(self) -> Result<VpqReport> {
        if self.videos.is_empty() {
            return Err(Error::NoVideos);
        }
        let mut windows = Vec::with_capacity(self.config.windows.len());
        for (wi, &k) in self.config.windows.iter().enumerate() {
            let mut total = vec![ClassAccum::default(); self.cats.len()];
            for v in self.videos.values() {
                for (t, a) in total.iter_mut().zip(&v.windows[wi]) {
                    t.merge(a);
                }
            }
            let classes: Vec<ClassReport> = self
                .cats
                .ids()
                .zip(&total)
                .map(|(category_id, a)| {
                    let s = a.stats();
                    ClassReport {
                        category_id,
                        iou_sum: s.iou_sum,
                        tp: s.tp,
                        fp: s.fp,
                        fn_: s.fn_,
                        vpq: s.vpq(),
                    }
                })
                .collect();
            let included: Vec<f64> = classes.iter().filter_map(|c| c.vpq).collect();
            if included.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "window {k}: no class occurs in gt or pred"
                )));
            }
            let vpq = included.iter().sum::<f64>() / included.len() as f64;
            windows.push(WindowReport { k, vpq, classes });
        }
        let overall_vpq = aggregate_vpq(&windows.iter().map(|w| w.vpq).collect::<Vec<_>>())?;
        Ok(VpqReport {
            windows,
            overall_vpq,
        })
    }
}

/// Pairs gt and pred videos by id. Both sets must contain the same ids.
pub fn pair_videos<'g, 'p>(
    gt: &'g [VideoPanopticSequence],
    pred: &'p [VideoPanopticSequence],
) -> Result<Vec<(&'g VideoPanopticSequence, &'p VideoPanopticSequence)>> {
    let mut by_id: BTreeMap<&str, &VideoPanopticSequence> = BTreeMap::new();
    for p in pred {
        if by_id.insert(p.video_id(), p).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate video id '{}' in pred set",
                p.video_id()
            )));
        }
    }
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(gt.len());
    for g in gt {
        if !seen.insert(g.video_id()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate video id '{}' in gt set",
                g.video_id()
            )));
        }
        let p = by_id
            .get(g.video_id())
            .ok_or_else(|| Error::MissingVideo(g.video_id().to_owned(), "pred"))?;
        pairs.push((g, *p));
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(Error::MissingVideo((*extra).to_owned(), "gt"));
    }
    if pairs.is_empty() {
        return Err(Error::NoVideos);
    }
    pairs.sort_by(|a, b| a.0.video_id().cmp(b.0.video_id()));
    Ok(pairs)
}

/// VPQ over a dataset. Videos are evaluated concurrently.
pub fn vpq(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    cats: &CategoryTable,
    config: &VpqConfig,
) -> Result<VpqReport> {
    config.validate()?;
    let pairs = pair_videos(gt, pred)?;
    let stats = pairs
        .par_iter()
        .map(|(g, p)| {
            let ov = VideoOverlap::compute(g, p)?;
            VideoVpqStats::compute(&ov, cats, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = VpqAccumulator::new(cats, config.clone())?;
    for s in stats {
        acc.push(s)?;
    }
    acc.finish()
}

/// Overall VPQ: the arithmetic mean of the per-window scores.
pub fn aggregate_vpq(window_scores: &[f64]) -> Result<f64> {
    if window_scores.is_empty() {
        return Err(Error::InvalidArgument("no window scores to aggregate".into()));
    }
    Ok(window_scores.iter().sum::<f64>() / window_scores.len() as f64)
}
