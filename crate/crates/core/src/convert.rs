// SPDX-License-Identifier: Apache-2.0

//! Panoptic annotations split into a semantic view (every segment becomes
//! its category) and an instance view (thing tracks only), the two extra
//! supervision targets used for joint training.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{
    CategoryTable, IdRaster, InstanceSequence, SemanticSequence, VideoPanopticSequence, VOID,
};

/// Segment id → category lookup with a one-entry cache for runs of equal ids.
fn map_frame(frame: &IdRaster, mut f: impl FnMut(u32) -> u32) -> IdRaster {
    let mut last = (VOID, VOID);
    frame.map(|id| {
        if id == VOID {
            return VOID;
        }
        if id != last.0 {
            last = (id, f(id));
        }
        last.1
    })
}

fn check(seq: &VideoPanopticSequence, cats: &CategoryTable) -> Result<()> {
    seq.validate_against(cats).map_err(Error::InvalidSequence)
}

/// Every pixel takes its segment's category; void stays void.
pub fn to_semantic(seq: &VideoPanopticSequence, cats: &CategoryTable) -> Result<SemanticSequence> {
    check(seq, cats)?;
    let segments = seq.segments();
    let frames = seq
        .frames()
        .iter()
        .map(|f| map_frame(f, |id| segments[&id]))
        .collect();
    SemanticSequence::new(seq.video_id(), frames, cats)
}

/// Keeps thing segments with their ids; stuff pixels become void.
pub fn to_instance(seq: &VideoPanopticSequence, cats: &CategoryTable) -> Result<InstanceSequence> {
    check(seq, cats)?;
    let instances: BTreeMap<u32, u32> = seq
        .segments()
        .iter()
        .filter(|(_, &c)| cats.is_thing(c) == Some(true))
        .map(|(&id, &c)| (id, c))
        .collect();
    let frames = seq
        .frames()
        .iter()
        .map(|f| map_frame(f, |id| if instances.contains_key(&id) { id } else { VOID }))
        .collect();
    InstanceSequence::new(seq.video_id(), frames, instances, cats)
}
