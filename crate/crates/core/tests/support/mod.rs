// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference implementations and the seeded scene corpus shared
//! by the integration tests. The oracles work straight from pixel sets and
//! share no code with the library's metric engines.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use vipseval::synth::{generate, random_categories, RandomLimits, ScenarioSpec, SplitMix64};
use vipseval::{CategoryTable, VideoPanopticSequence};

pub struct Case {
    pub seed: u64,
    pub cats: CategoryTable,
    pub specs: Vec<ScenarioSpec>,
    pub gt: Vec<VideoPanopticSequence>,
    pub pred: Vec<VideoPanopticSequence>,
}

/// One dataset of one or two small random videos sharing a category table.
pub fn case(seed: u64) -> Case {
    let limits = RandomLimits::default();
    let mut rng = SplitMix64::new(seed ^ 0x5EED_CA5E);
    let cats = random_categories(&mut rng, limits.max_classes);
    let videos = rng.range(1, 2);
    let mut specs = Vec::new();
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    for v in 0..videos {
        let spec = ScenarioSpec::random_with_categories(seed * 4 + v, &limits, &cats);
        let pair = generate(&spec).expect("random specs are valid");
        gt.push(pair.gt);
        pred.push(pair.pred);
        specs.push(spec);
    }
    Case {
        seed,
        cats,
        specs,
        gt,
        pred,
    }
}

fn clip_ranges(t: usize, k: usize) -> Vec<(usize, usize)> {
    if k >= t {
        vec![(0, t)]
    } else {
        (0..=t - k).map(|s| (s, s + k)).collect()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleClass {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Per-class tallies for window `k`, enumerating every (gt tube, pred tube)
/// pair of every clip pixel by pixel.
pub fn vpq_classes(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    k: usize,
    ignore_void: bool,
) -> BTreeMap<u32, OracleClass> {
    let mut classes: BTreeMap<u32, OracleClass> = BTreeMap::new();
    for (g, p) in gt.iter().zip(pred) {
        assert_eq!(g.video_id(), p.video_id());
        for (s, e) in clip_ranges(g.num_frames(), k) {
            let mut pixels: Vec<(u32, u32)> = Vec::new();
            for t in s..e {
                pixels.extend(g.frames()[t].ids().iter().copied().zip(p.frames()[t].ids().iter().copied()));
            }
            let gt_ids: BTreeSet<u32> = pixels.iter().map(|x| x.0).filter(|&i| i != 0).collect();
            let pred_ids: BTreeSet<u32> = pixels.iter().map(|x| x.1).filter(|&i| i != 0).collect();
            let mut matched_gt = BTreeSet::new();
            let mut matched_pred = BTreeSet::new();
            for &gi in &gt_ids {
                let gc = g.category_of(gi).unwrap();
                let mut hits = 0;
                for &pi in &pred_ids {
                    if p.category_of(pi).unwrap() != gc {
                        continue;
                    }
                    let inter = pixels.iter().filter(|&&(a, b)| a == gi && b == pi).count();
                    let union = pixels
                        .iter()
                        .filter(|&&(a, b)| a == gi || (b == pi && a != 0))
                        .count();
                    let iou = inter as f64 / union as f64;
                    if iou > 0.5 {
                        hits += 1;
                        let c = classes.entry(gc).or_default();
                        c.tp += 1;
                        c.iou_sum += iou;
                        matched_gt.insert(gi);
                        assert!(matched_pred.insert(pi), "pred tube matched twice");
                    }
                }
                assert!(hits <= 1, "gt tube matched twice");
            }
            for &gi in gt_ids.difference(&matched_gt) {
                classes.entry(g.category_of(gi).unwrap()).or_default().fn_ += 1;
            }
            for &pi in pred_ids.difference(&matched_pred) {
                let area = pixels.iter().filter(|&&(_, b)| b == pi).count();
                let on_void = pixels.iter().filter(|&&(a, b)| b == pi && a == 0).count();
                if ignore_void && on_void as f64 > 0.5 * area as f64 {
                    continue;
                }
                classes.entry(p.category_of(pi).unwrap()).or_default().fp += 1;
            }
        }
    }
    classes
}

pub fn vpq_class_score(c: &OracleClass) -> Option<f64> {
    let d = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
    (d > 0.0).then(|| c.iou_sum / d)
}

/// Unweighted mean over classes that occur; `None` if none does.
pub fn vpq_window(
    gt: &[VideoPanopticSequence],
    pred: &[VideoPanopticSequence],
    k: usize,
    ignore_void: bool,
) -> Option<f64> {
    let scores: Vec<f64> = vpq_classes(gt, pred, k, ignore_void)
        .values()
        .filter_map(vpq_class_score)
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

type Px = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleStq {
    pub sq: Option<f64>,
    pub aq: Option<f64>,
    pub stq: Option<f64>,
}

/// SQ, AQ and STQ from explicit pixel sets keyed by (video, frame, pixel).
pub fn stq(gt: &[VideoPanopticSequence], pred: &[VideoPanopticSequence], cats: &CategoryTable) -> OracleStq {
    let mut gt_class: BTreeMap<u32, HashSet<Px>> = BTreeMap::new();
    let mut pred_class: BTreeMap<u32, HashSet<Px>> = BTreeMap::new();
    let mut gt_tracks: BTreeMap<(usize, u32), HashSet<Px>> = BTreeMap::new();
    let mut pred_tracks: BTreeMap<(usize, u32), HashSet<Px>> = BTreeMap::new();
    for (v, (g, p)) in gt.iter().zip(pred).enumerate() {
        for (t, (gf, pf)) in g.frames().iter().zip(p.frames()).enumerate() {
            for (i, (&a, &b)) in gf.ids().iter().zip(pf.ids()).enumerate() {
                if a == 0 {
                    continue;
                }
                let px = (v, t, i);
                let gc = g.category_of(a).unwrap();
                gt_class.entry(gc).or_default().insert(px);
                if cats.is_thing(gc).unwrap() {
                    gt_tracks.entry((v, a)).or_default().insert(px);
                }
                if b != 0 {
                    let pc = p.category_of(b).unwrap();
                    pred_class.entry(pc).or_default().insert(px);
                    if cats.is_thing(pc).unwrap() {
                        pred_tracks.entry((v, b)).or_default().insert(px);
                    }
                }
            }
        }
    }
    let empty = HashSet::new();
    let mut ious = Vec::new();
    for c in cats.ids() {
        let gs = gt_class.get(&c).unwrap_or(&empty);
        let ps = pred_class.get(&c).unwrap_or(&empty);
        let union = gs.union(ps).count();
        if union > 0 {
            ious.push(gs.intersection(ps).count() as f64 / union as f64);
        }
    }
    let sq = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
    let mut per_track = Vec::new();
    for (&(v, _), gs) in &gt_tracks {
        let mut s = 0.0;
        for (&(pv, _), ps) in &pred_tracks {
            if pv != v {
                continue;
            }
            let inter = gs.intersection(ps).count();
            if inter > 0 {
                let union = gs.union(ps).count();
                s += inter as f64 * inter as f64 / union as f64;
            }
        }
        per_track.push(s / gs.len() as f64);
    }
    let aq = (!per_track.is_empty()).then(|| per_track.iter().sum::<f64>() / per_track.len() as f64);
    let stq = match (aq, sq) {
        (Some(a), Some(s)) => Some((a * s).sqrt()),
        _ => None,
    };
    OracleStq { sq, aq, stq }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
