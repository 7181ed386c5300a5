// SPDX-License-Identifier: Apache-2.0

//! Segmentation and Tracking Quality, `STQ = sqrt(AQ * SQ)`.
//!
//! SQ is the class-mean IoU of the semantic collapse of both sequences,
//! accumulated over every pixel of the dataset. AQ scores whole-video thing
//! tracks with class-agnostic association: for a gt track `g`,
//! `AQ(g) = 1/|g| * Σ_p |p∩g| * IoU(p, g)` over pred thing tracks `p`
//! overlapping it. Pixels on gt void are excluded throughout.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::error::{Error, Result};
use crate::overlap::VideoOverlap;
use crate::types::{CategoryTable, VideoPanopticSequence, VOID};
use crate::vpq::pair_videos;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub category_id: u32,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Absent when the class occurs in neither gt nor pred.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAq {
    pub video_id: String,
    pub track_id: u32,
    pub category_id: u32,
    pub pixels: u64,
    pub aq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StqReport {
    /// `None` when the gt holds no thing track.
    pub aq: Option<f64>,
    pub sq: f64,
    pub stq: Option<f64>,
    pub classes: Vec<ClassIou>,
    pub tracks: Vec<TrackAq>,
}

impl StqReport {
    pub fn stq_value(&self) -> Result<f64> {
        self.stq.ok_or(Error::UndefinedAssociation)
    }
}

/// Semantic confusion and per-track association of one video.
#[derive(Debug, Clone)]
pub struct VideoStqStats {
    video_id: String,
    /// (gt category, pred category or 0) → pixels, gt void excluded.
    confusion: BTreeMap<(u32, u32), u64>,
    tracks: Vec<TrackAq>,
}

fn category(segments: &BTreeMap<u32, u32>, id: u32, cats: &CategoryTable) -> Result<u32> {
    if id == VOID {
        return Ok(VOID);
    }
    let c = *segments
        .get(&id)
        .ok_or_else(|| Error::InvalidArgument(format!("segment {id} has no category")))?;
    if cats.contains(c) {
        Ok(c)
    } else {
        Err(Error::UnknownCategory(c))
    }
}

impl VideoStqStats {
    pub fn compute(ov: &VideoOverlap, cats: &CategoryTable) -> Result<Self> {
        let pairs = ov.sum_over(0..ov.num_frames());
        let is_thing = |c: u32| c != VOID && cats.is_thing(c) == Some(true);

        let mut confusion = BTreeMap::new();
        let mut gt_size: BTreeMap<u32, u64> = BTreeMap::new();
        let mut pred_size: BTreeMap<u32, u64> = BTreeMap::new();
        for &(g, p, n) in &pairs {
            let gc = category(ov.gt_segments(), g, cats)?;
            let pc = category(ov.pred_segments(), p, cats)?;
            if gc == VOID {
                continue;
            }
            *confusion.entry((gc, pc)).or_insert(0) += n;
            if is_thing(gc) {
                *gt_size.entry(g).or_insert(0) += n;
            }
            if is_thing(pc) {
                *pred_size.entry(p).or_insert(0) += n;
            }
        }

        let mut tracks = Vec::with_capacity(gt_size.len());
        for (&g, &size) in &gt_size {
            let mut sum = CompensatedSum::default();
            for &(gg, p, inter) in pairs.iter().filter(|x| x.0 == g) {
                debug_assert_eq!(gg, g);
                if let Some(&ps) = pred_size.get(&p) {
                    let union = size + ps - inter;
                    sum.add(inter as f64 * (inter as f64 / union as f64));
                }
            }
            tracks.push(TrackAq {
                video_id: ov.video_id().to_owned(),
                track_id: g,
                category_id: ov.gt_segments()[&g],
                pixels: size,
                aq: sum.value() / size as f64,
            });
        }
        Ok(VideoStqStats {
            video_id: ov.video_id().to_owned(),
            confusion,
            tracks,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }
}

/// Reduces per-video stats in sorted video-id order.
pub struct StqAccumulator<'a> {
    cats: &'a CategoryTable,
    videos: BTreeMap<String, VideoStqStats>,
}

impl<'a> StqAccumulator<'a> {
    pub fn new(cats: &'a CategoryTable) -> Self {
        StqAccumulator {
            cats,
            videos: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, stats: VideoStqStats) -> Result<()> {
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
        let s = VideoStqStats::compute(ov, self.cats)?;
        self.push(s)
    }

    fn segmentation(&self) -> Result<(f64, Vec<ClassIou>)> {
        let mut confusion: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for v in self.videos.values() {
            for (&k, &n) in &v.confusion {
                *confusion.entry(k).or_insert(0) += n;
            }
        }
        let classes: Vec<ClassIou> = self
            .cats
            .ids()
            .map(|c| {
                let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                for (&(g, p), &n) in &confusion {
                    match (g == c, p == c) {
                        (true, true) => tp += n,
                        (false, true) => fp += n,
                        (true, false) => fn_ += n,
                        _ => {}
                    }
                }
                let denom = tp + fp + fn_;
                ClassIou {
                    category_id: c,
                    tp,
                    fp,
                    fn_,
                    iou: (denom > 0).then(|| tp as f64 / denom as f64),
                }
            })
            .collect();
        let ious: Vec<f64> = classes.iter().filter_map(|c| c.iou).collect();
        if ious.is_empty() {
            return Err(Error::InvalidArgument(
                "no class occurs in gt or pred; SQ is undefined".into(),
            ));
        }
        let mut sum = CompensatedSum::default();
        ious.iter().for_each(|&x| sum.add(x));
        Ok((sum.value() / ious.len() as f64, classes))
    }

    fn association(&self) -> (Option<f64>, Vec<TrackAq>) {
        let tracks: Vec<TrackAq> = self
            .videos
            .values()
            .flat_map(|v| v.tracks.iter().cloned())
            .collect();
        if tracks.is_empty() {
            return (None, tracks);
        }
        let mut sum = CompensatedSum::default();
        tracks.iter().for_each(|t| sum.add(t.aq));
        (Some(sum.value() / tracks.len() as f64), tracks)
    }

    pub fn finish(self) -> Result<StqReport> {
        if self.videos.is_empty() {
            return Err(Error::NoVideos);
        }
        let (sq, classes) = self.segmentation()?;
        let (aq, tracks) = self.association();
        Ok(StqReport {
            aq,
            sq,
            stq: aq.map(|a| (a * sq).sqrt()),
            classes,
            tracks,
        })
    }
}

fn accumulate<'a>(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    cats: &'a CategoryTable,
) -> Result<StqAccumulator<'a>> {
    let pairs = pair_videos(gt, pred)?;
    let stats = pairs
        .par_iter()
        .map(|(g, p)| VideoStqStats::compute(&VideoOverlap::compute(g, p)?, cats))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = StqAccumulator::new(cats);
    for s in stats {
        acc.push(s)?;
    }
    Ok(acc)
}

/// Segmentation quality and per-class IoU.
pub fn sq(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    cats: &CategoryTable,
) -> Result<(f64, Vec<ClassIou>)> {
    accumulate(gt, pred, cats)?.segmentation()
}

/// Association quality and per-track scores; `None` without gt thing tracks.
pub fn aq(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    cats: &CategoryTable,
) -> Result<(Option<f64>, Vec<TrackAq>)> {
    Ok(accumulate(gt, pred, cats)?.association())
}

pub fn stq(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    cats: &CategoryTable,
) -> Result<StqReport> {
    accumulate(gt, pred, cats)?.finish()
}
