// SPDX-License-Identifier: Apache-2.0

//! Shared domain types: category tables, id rasters and the three
//! annotation flavours (panoptic, semantic, instance).
//!
//! Every type here is validated on construction and immutable afterwards.
//! Segment id 0 and category id 0 are the void sentinel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Void sentinel for both segment ids and category ids.
pub const VOID: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub category_id: u32,
    pub name: String,
    pub is_thing: bool,
}

impl Category {
    pub fn thing(category_id: u32, name: impl Into<String>) -> Self {
        Category {
            category_id,
            name: name.into(),
            is_thing: true,
        }
    }

    pub fn stuff(category_id: u32, name: impl Into<String>) -> Self {
        Category {
            category_id,
            name: name.into(),
            is_thing: false,
        }
    }
}

/// Category ids, names and thing/stuff flags. Entries are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct CategoryTable {
    entries: Vec<Category>,
}

impl CategoryTable {
    pub fn new(mut entries: Vec<Category>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidCategories("table is empty".into()));
        }
        entries.sort_by_key(|c| c.category_id);
        for pair in entries.windows(2) {
            if pair[0].category_id == pair[1].category_id {
                return Err(Error::InvalidCategories(format!(
                    "duplicate category id {}",
                    pair[0].category_id
                )));
            }
        }
        for c in &entries {
            if c.category_id == VOID {
                return Err(Error::InvalidCategories(
                    "category id 0 is reserved for void".into(),
                ));
            }
            if c.name.is_empty() {
                return Err(Error::InvalidCategories(format!(
                    "category {} has an empty name",
                    c.category_id
                )));
            }
        }
        Ok(CategoryTable { entries })
    }

    pub fn get(&self, category_id: u32) -> Option<&Category> {
        self.entries
            .binary_search_by_key(&category_id, |c| c.category_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn contains(&self, category_id: u32) -> bool {
        self.get(category_id).is_some()
    }

    /// `None` when the category is unknown.
    pub fn is_thing(&self, category_id: u32) -> Option<bool> {
        self.get(category_id).map(|c| c.is_thing)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of a category in id order; used for dense per-class arrays.
    pub fn index_of(&self, category_id: u32) -> Option<usize> {
        self.entries
            .binary_search_by_key(&category_id, |c| c.category_id)
            .ok()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|c| c.category_id)
    }

    pub fn stuff_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .filter(|c| !c.is_thing)
            .map(|c| c.category_id)
    }

    pub fn thing_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .filter(|c| c.is_thing)
            .map(|c| c.category_id)
    }
}

impl TryFrom<Vec<Category>> for CategoryTable {
    type Error = Error;

    fn try_from(v: Vec<Category>) -> Result<Self> {
        CategoryTable::new(v)
    }
}

impl From<CategoryTable> for Vec<Category> {
    fn from(t: CategoryTable) -> Self {
        t.entries
    }
}

/// Row-major raster of 32-bit ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdRaster {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl IdRaster {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = height.checked_mul(width).ok_or_else(|| {
            Error::InvalidRaster(format!("dimensions {height}x{width} overflow"))
        })?;
        if ids.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "{height}x{width} raster needs {expected} ids, got {}",
                ids.len()
            )));
        }
        Ok(IdRaster { height, width, ids })
    }

    pub fn filled(height: usize, width: usize, id: u32) -> Result<Self> {
        IdRaster::new(height, width, vec![id; height.saturating_mul(width)])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(height.saturating_mul(width));
        for y in 0..height {
            for x in 0..width {
                ids.push(f(y, x));
            }
        }
        IdRaster::new(height, width, ids)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }

    /// Applies `f` to every pixel, keeping the geometry.
    pub fn map(&self, f: impl FnMut(u32) -> u32) -> IdRaster {
        IdRaster {
            height: self.height,
            width: self.width,
            ids: self.ids.iter().copied().map(f).collect(),
        }
    }
}

/// A single invariant violation found by [`validate_sequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoFrames,
    FrameDimensions {
        frame: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    ReservedSegmentId,
    UnmappedId {
        id: u32,
        frame: usize,
        row: usize,
        col: usize,
    },
    UnknownCategory {
        segment: u32,
        category: u32,
    },
    DuplicateStuffTrack {
        category: u32,
        segments: Vec<u32>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "video has no frames"),
            Violation::FrameDimensions {
                frame,
                expected,
                found,
            } => write!(
                f,
                "inconsistent frame dimensions at frame {frame}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::ReservedSegmentId => write!(f, "segment id 0 is reserved for void"),
            Violation::UnmappedId {
                id,
                frame,
                row,
                col,
            } => write!(f, "unmapped id {id} at frame {frame} (row {row}, col {col})"),
            Violation::UnknownCategory { segment, category } => {
                write!(f, "segment {segment} has unknown category {category}")
            }
            Violation::DuplicateStuffTrack { category, segments } => write!(
                f,
                "duplicate stuff track: category {category} has segments {segments:?}"
            ),
        }
    }
}

/// Unvalidated parts of a panoptic sequence, e.g. as decoded from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSequence {
    pub video_id: String,
    pub frames: Vec<IdRaster>,
    pub segments: BTreeMap<u32, u32>,
}

/// `Ok(())` or every violation found.
pub type Validation = std::result::Result<(), Vec<Violation>>;

/// Checks every panoptic-sequence invariant and reports all violations.
///
/// Unmapped ids are reported once each, at the first pixel (in frame then
/// row-major order) where they occur.
pub fn validate_sequence(seq: &RawSequence, cats: &CategoryTable) -> Validation {
    let mut out = Vec::new();
    if seq.frames.is_empty() {
        out.push(Violation::NoFrames);
    }
    if let Some(first) = seq.frames.first() {
        let expected = first.dims();
        for (frame, r) in seq.frames.iter().enumerate() {
            if r.dims() != expected {
                out.push(Violation::FrameDimensions {
                    frame,
                    expected,
                    found: r.dims(),
                });
            }
        }
    }
    if seq.segments.contains_key(&VOID) {
        out.push(Violation::ReservedSegmentId);
    }

    let mut reported = BTreeSet::new();
    for (frame, r) in seq.frames.iter().enumerate() {
        let mut last_ok = VOID;
        for (i, &id) in r.ids().iter().enumerate() {
            if id == VOID || id == last_ok {
                continue;
            }
            if seq.segments.contains_key(&id) {
                last_ok = id;
            } else if reported.insert(id) {
                out.push(Violation::UnmappedId {
                    id,
                    frame,
                    row: i / r.width(),
                    col: i % r.width(),
                });
            }
        }
    }

    let mut stuff_tracks: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&segment, &category) in &seq.segments {
        match cats.is_thing(category) {
            None => out.push(Violation::UnknownCategory { segment, category }),
            Some(false) => stuff_tracks.entry(category).or_default().push(segment),
            Some(true) => {}
        }
    }
    for (category, segments) in stuff_tracks {
        if segments.len() > 1 {
            out.push(Violation::DuplicateStuffTrack { category, segments });
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Per-frame segment-id rasters plus the segment → category map.
///
/// Thing segment ids are track ids: the same id across frames denotes the
/// same instance. Each stuff category owns at most one segment per video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoPanopticSequence {
    video_id: String,
    frames: Vec<IdRaster>,
    segments: BTreeMap<u32, u32>,
}

impl VideoPanopticSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<IdRaster>,
        segments: BTreeMap<u32, u32>,
        cats: &CategoryTable,
    ) -> Result<Self> {
        Self::from_raw(
            RawSequence {
                video_id: video_id.into(),
                frames,
                segments,
            },
            cats,
        )
    }

    pub fn from_raw(raw: RawSequence, cats: &CategoryTable) -> Result<Self> {
        validate_sequence(&raw, cats).map_err(Error::InvalidSequence)?;
        Ok(VideoPanopticSequence {
            video_id: raw.video_id,
            frames: raw.frames,
            segments: raw.segments,
        })
    }

    /// Caller guarantees `raw` already satisfies every invariant.
    pub(crate) fn from_raw_unchecked(raw: RawSequence) -> Self {
        debug_assert!(!raw.frames.is_empty());
        VideoPanopticSequence {
            video_id: raw.video_id,
            frames: raw.frames,
            segments: raw.segments,
        }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[IdRaster] {
        &self.frames
    }

    pub fn segments(&self) -> &BTreeMap<u32, u32> {
        &self.segments
    }

    pub fn category_of(&self, segment: u32) -> Option<u32> {
        self.segments.get(&segment).copied()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// (height, width) shared by all frames.
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Re-checks this sequence against a (possibly different) table.
    pub fn validate_against(&self, cats: &CategoryTable) -> Validation {
        validate_sequence(&self.clone().into_raw(), cats)
    }

    pub fn into_raw(self) -> RawSequence {
        RawSequence {
            video_id: self.video_id,
            frames: self.frames,
            segments: self.segments,
        }
    }

    /// Same sequence under another video id.
    pub fn with_video_id(mut self, video_id: impl Into<String>) -> Self {
        self.video_id = video_id.into();
        self
    }
}

fn check_frames(frames: &[IdRaster]) -> Result<()> {
    let first = frames
        .first()
        .ok_or(Error::InvalidSequence(vec![Violation::NoFrames]))?;
    for (frame, r) in frames.iter().enumerate() {
        if r.dims() != first.dims() {
            return Err(Error::InvalidSequence(vec![Violation::FrameDimensions {
                frame,
                expected: first.dims(),
                found: r.dims(),
            }]));
        }
    }
    Ok(())
}

/// Per-frame category-id rasters (0 = void).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticSequence {
    video_id: String,
    frames: Vec<IdRaster>,
}

impl SemanticSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<IdRaster>,
        cats: &CategoryTable,
    ) -> Result<Self> {
        check_frames(&frames)?;
        for r in &frames {
            if let Some(&bad) = r.ids().iter().find(|&&c| c != VOID && !cats.contains(c)) {
                return Err(Error::UnknownCategory(bad));
            }
        }
        Ok(SemanticSequence {
            video_id: video_id.into(),
            frames,
        })
    }

    pub(crate) fn from_parts_unchecked(video_id: String, frames: Vec<IdRaster>) -> Self {
        SemanticSequence { video_id, frames }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[IdRaster] {
        &self.frames
    }
}

/// Per-frame thing-track rasters (0 = void) plus track → category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSequence {
    video_id: String,
    frames: Vec<IdRaster>,
    instances: BTreeMap<u32, u32>,
}

impl InstanceSequence {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<IdRaster>,
        instances: BTreeMap<u32, u32>,
        cats: &CategoryTable,
    ) -> Result<Self> {
        check_frames(&frames)?;
        if instances.contains_key(&VOID) {
            return Err(Error::InvalidSequence(vec![Violation::ReservedSegmentId]));
        }
        for (&segment, &category) in &instances {
            match cats.is_thing(category) {
                Some(true) => {}
                Some(false) => {
                    return Err(Error::InvalidArgument(format!(
                        "instance {segment} has stuff category {category}"
                    )))
                }
                None => {
                    return Err(Error::InvalidSequence(vec![Violation::UnknownCategory {
                        segment,
                        category,
                    }]))
                }
            }
        }
        for (frame, r) in frames.iter().enumerate() {
            if let Some(i) = r
                .ids()
                .iter()
                .position(|&id| id != VOID && !instances.contains_key(&id))
            {
                return Err(Error::InvalidSequence(vec![Violation::UnmappedId {
                    id: r.ids()[i],
                    frame,
                    row: i / r.width(),
                    col: i % r.width(),
                }]));
            }
        }
        Ok(InstanceSequence {
            video_id: video_id.into(),
            frames,
            instances,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[IdRaster] {
        &self.frames
    }

    pub fn instances(&self) -> &BTreeMap<u32, u32> {
        &self.instances
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> CategoryTable {
        CategoryTable::new(vec![
            Category::stuff(1, "sky"),
            Category::stuff(2, "road"),
            Category::thing(3, "car"),
        ])
        .unwrap()
    }

    fn raster(rows: &[&[u32]]) -> IdRaster {
        let h = rows.len();
        let w = rows[0].len();
        IdRaster::new(h, w, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn raw(frames: Vec<IdRaster>, segs: &[(u32, u32)]) -> RawSequence {
        RawSequence {
            video_id: "v".into(),
            frames,
            segments: segs.iter().copied().collect(),
        }
    }

    #[test]
    fn category_table_rejects_bad_entries() {
        assert!(CategoryTable::new(vec![]).is_err());
        assert!(CategoryTable::new(vec![Category::stuff(0, "void")]).is_err());
        assert!(CategoryTable::new(vec![Category::stuff(1, "")]).is_err());
        assert!(
            CategoryTable::new(vec![Category::stuff(1, "a"), Category::thing(1, "b")]).is_err()
        );
        let t = cats();
        assert_eq!(t.is_thing(3), Some(true));
        assert_eq!(t.is_thing(9), None);
        assert_eq!(t.stuff_ids().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn category_table_json_is_validated() {
        let bad = r#"[{"category_id":0,"name":"x","is_thing":false}]"#;
        assert!(serde_json::from_str::<CategoryTable>(bad).is_err());
        let good = serde_json::to_string(&cats()).unwrap();
        assert_eq!(serde_json::from_str::<CategoryTable>(&good).unwrap(), cats());
    }

    #[test]
    fn raster_requires_matching_length() {
        assert!(IdRaster::new(0, 3, vec![]).is_err());
        assert!(IdRaster::new(2, 2, vec![0; 3]).is_err());
        let r = IdRaster::from_fn(2, 3, |y, x| (y * 3 + x) as u32).unwrap();
        assert_eq!(r.get(1, 2), 5);
    }

    #[test]
    fn well_formed_two_frame_scene_is_ok() {
        let f0 = raster(&[&[1, 1, 7], &[2, 2, 7]]);
        let f1 = raster(&[&[1, 7, 7], &[2, 2, 0]]);
        let seq = raw(vec![f0, f1], &[(1, 1), (2, 2), (7, 3)]);
        assert_eq!(validate_sequence(&seq, &cats()), Ok(()));
        assert!(VideoPanopticSequence::from_raw(seq, &cats()).is_ok());
    }

    #[test]
    fn unmapped_id_reports_frame_and_first_pixel() {
        let f0 = raster(&[&[1, 1], &[1, 1]]);
        let f1 = raster(&[&[1, 1], &[9, 9]]);
        let seq = raw(vec![f0, f1], &[(1, 1)]);
        let v = validate_sequence(&seq, &cats()).unwrap_err();
        assert_eq!(
            v,
            vec![Violation::UnmappedId {
                id: 9,
                frame: 1,
                row: 1,
                col: 0
            }]
        );
        assert!(v[0].to_string().starts_with("unmapped id 9 at frame 1"));
    }

    #[test]
    fn duplicate_stuff_track_is_reported() {
        let f0 = raster(&[&[4, 5]]);
        let seq = raw(vec![f0], &[(4, 1), (5, 1)]);
        let v = validate_sequence(&seq, &cats()).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("duplicate stuff track"));
    }

    #[test]
    fn all_violations_are_collected() {
        let f0 = raster(&[&[4, 8]]);
        let f1 = raster(&[&[4], &[4]]);
        let seq = raw(vec![f0, f1], &[(0, 1), (4, 42)]);
        let v = validate_sequence(&seq, &cats()).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::FrameDimensions { frame: 1, .. })));
        assert!(v.contains(&Violation::ReservedSegmentId));
        assert!(v.iter().any(|x| matches!(x, Violation::UnmappedId { id: 8, .. })));
        assert!(v.contains(&Violation::UnknownCategory {
            segment: 4,
            category: 42
        }));
        assert_eq!(
            validate_sequence(&raw(vec![], &[]), &cats()),
            Err(vec![Violation::NoFrames])
        );
    }

    #[test]
    fn instance_sequence_rejects_stuff_categories() {
        let f = raster(&[&[7, 0]]);
        let ok = InstanceSequence::new("v", vec![f.clone()], [(7, 3)].into(), &cats());
        assert!(ok.is_ok());
        assert!(InstanceSequence::new("v", vec![f.clone()], [(7, 1)].into(), &cats()).is_err());
        assert!(InstanceSequence::new("v", vec![f], BTreeMap::new(), &cats()).is_err());
    }

    #[test]
    fn semantic_sequence_rejects_unknown_values() {
        let f = raster(&[&[1, 0, 3]]);
        assert!(SemanticSequence::new("v", vec![f], &cats()).is_ok());
        let f = raster(&[&[1, 5]]);
        assert!(SemanticSequence::new("v", vec![f], &cats()).is_err());
    }
}
