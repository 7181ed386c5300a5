// SPDX-License-Identifier: Apache-2.0

//! Exponential moving average over a sequence of weight snapshots.

use crate::error::{Error, Result};
use crate::io::WeightMap;

pub const DEFAULT_DECAY: f64 = 0.999;

fn check_compatible(first: &WeightMap, other: &WeightMap, index: usize) -> Result<()> {
    for (name, t) in first.iter() {
        match other.get(name) {
            None => {
                return Err(Error::SnapshotMismatch(format!(
                    "snapshot {index} lacks tensor '{name}'"
                )))
            }
            Some(o) if o.shape() != t.shape() => {
                return Err(Error::SnapshotMismatch(format!(
                    "tensor '{name}' has shape {:?} in snapshot {index}, expected {:?}",
                    o.shape(),
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = other.names().find(|n| first.get(n).is_none()) {
        return Err(Error::SnapshotMismatch(format!(
            "snapshot {index} has unexpected tensor '{extra}'"
        )));
    }
    Ok(())
}

/// Folds `w <- decay * w + (1 - decay) * s` over the snapshots in order,
/// starting from the first one. Accumulates in f64 and rounds to f32 once
/// at the end.
pub fn ema(snapshots: &[WeightMap], decay: f64) -> Result<WeightMap> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!(
            "decay must lie in [0, 1], got {decay}"
        )));
    }
    let (first, rest) = snapshots
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no snapshots given".into()))?;
    for (i, s) in rest.iter().enumerate() {
        check_compatible(first, s, i + 1)?;
    }
    let mut acc: Vec<Vec<f64>> = first
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let keep = 1.0 - decay;
    for s in rest {
        for (buf, (_, t)) in acc.iter_mut().zip(s.iter()) {
            for (w, &v) in buf.iter_mut().zip(t.data()) {
                *w = decay * *w + keep * v as f64;
            }
        }
    }
    let mut out = WeightMap::new();
    for (buf, (name, t)) in acc.into_iter().zip(first.iter()) {
        out.insert(
            name,
            t.shape().to_vec(),
            buf.into_iter().map(|v| v as f32).collect(),
        )?;
    }
    Ok(out)
}
