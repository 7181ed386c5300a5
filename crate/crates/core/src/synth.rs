// SPDX-License-Identifier: Apache-2.0

//! Synthetic video panoptic scenes built from stuff bands and moving
//! rectangles, with an ordered list of perturbations applied to the
//! prediction.
//!
//! Stuff segments use the category id as segment id. Thing segments use
//! the track id. Ids introduced by perturbations are drawn from a
//! [`SplitMix64`] stream seeded with the scenario seed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MAX_RGB_ID;
use crate::types::{Category, CategoryTable, IdRaster, VideoPanopticSequence, VOID};

/// SplitMix64 (Steele, Lea and Flood): `state += 0x9E3779B97F4A7C15`
/// followed by the variant-13 finaliser.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n` via the high half of a 64×64-bit product.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub category_id: u32,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    fn eroded(&self, r: usize) -> Option<Rect> {
        (self.height > 2 * r && self.width > 2 * r).then(|| Rect {
            y: self.y + r,
            x: self.x + r,
            height: self.height - 2 * r,
            width: self.width - 2 * r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thing {
    pub track_id: u32,
    pub category_id: u32,
    pub height: usize,
    pub width: usize,
    /// Top-left corner `[y, x]` per frame; `null` when absent.
    pub positions: Vec<Option<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErodeTarget {
    All,
    Track(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// From `frame` on, the track is predicted under a fresh id.
    IdSwitch { frame: usize, track: u32 },
    /// Shrinks the rectangle by `radius` pixels per side; a rectangle that
    /// erodes to nothing disappears.
    Erode { radius: usize, target: ErodeTarget },
    ClassFlip { track: u32, new_category: u32 },
    Drop { track: u32 },
    /// Paints `rect` with `category_id` on the listed frames, on top of
    /// everything else. Thing categories get a fresh id; stuff categories
    /// reuse that category's segment.
    Spurious {
        rect: Rect,
        category_id: u32,
        frames: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_video_id")]
    pub video_id: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    pub categories: CategoryTable,
    /// Horizontal bands from the top; rows below the last band are void.
    #[serde(default)]
    pub bands: Vec<Band>,
    /// Painted in order, later things on top.
    #[serde(default)]
    pub things: Vec<Thing>,
    #[serde(default)]
    pub perturbations: Vec<Perturbation>,
}

fn default_video_id() -> String {
    "synth".into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedPair {
    pub gt: VideoPanopticSequence,
    pub pred: VideoPanopticSequence,
}

/// Bounds for [`ScenarioSpec::random`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomLimits {
    pub max_height: usize,
    pub max_width: usize,
    pub max_frames: usize,
    pub max_classes: usize,
    pub max_instances: usize,
    pub max_perturbations: usize,
}

impl Default for RandomLimits {
    fn default() -> Self {
        RandomLimits {
            max_height: 8,
            max_width: 8,
            max_frames: 6,
            max_classes: 3,
            max_instances: 4,
            max_perturbations: 3,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

impl ScenarioSpec {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(invalid("canvas and frame count must be positive"));
        }
        let band_rows: usize = self.bands.iter().map(|b| b.height).sum();
        if band_rows > self.height {
            return Err(invalid(format!(
                "bands cover {band_rows} rows of a {}-row canvas",
                self.height
            )));
        }
        for b in &self.bands {
            if self.categories.is_thing(b.category_id) != Some(false) {
                return Err(invalid(format!(
                    "band category {} is not a stuff category",
                    b.category_id
                )));
            }
        }
        let stuff: BTreeSet<u32> = self.categories.stuff_ids().collect();
        let mut tracks = BTreeSet::new();
        for t in &self.things {
            if t.track_id == VOID || t.track_id > MAX_RGB_ID {
                return Err(invalid(format!("track id {} out of range", t.track_id)));
            }
            if stuff.contains(&t.track_id) {
                return Err(invalid(format!(
                    "track id {} collides with a stuff segment id",
                    t.track_id
                )));
            }
            if !tracks.insert(t.track_id) {
                return Err(invalid(format!("duplicate track id {}", t.track_id)));
            }
            self.check_thing_category(t.category_id)?;
            if t.height == 0 || t.width == 0 {
                return Err(invalid(format!("track {} has an empty rectangle", t.track_id)));
            }
            if t.positions.len() != self.frames {
                return Err(invalid(format!(
                    "track {} has {} positions for {} frames",
                    t.track_id,
                    t.positions.len(),
                    self.frames
                )));
            }
            for (f, p) in t.positions.iter().enumerate() {
                if let Some([y, x]) = *p {
                    if y + t.height > self.height || x + t.width > self.width {
                        return Err(invalid(format!(
                            "track {} leaves the canvas at frame {f}",
                            t.track_id
                        )));
                    }
                }
            }
        }
        let need_track = |id: u32| {
            if tracks.contains(&id) {
                Ok(())
            } else {
                Err(invalid(format!("perturbation targets unknown track {id}")))
            }
        };
        for p in &self.perturbations {
            match p {
                Perturbation::IdSwitch { frame, track } => {
                    need_track(*track)?;
                    if *frame >= self.frames {
                        return Err(invalid(format!("id switch at frame {frame} is past the end")));
                    }
                }
                Perturbation::Erode { target, .. } => {
                    if let ErodeTarget::Track(id) = target {
                        need_track(*id)?;
                    }
                }
                Perturbation::ClassFlip {
                    track,
                    new_category,
                } => {
                    need_track(*track)?;
                    self.check_thing_category(*new_category)?;
                }
                Perturbation::Drop { track } => need_track(*track)?,
                Perturbation::Spurious {
                    rect,
                    category_id,
                    frames,
                } => {
                    if !self.categories.contains(*category_id) {
                        return Err(invalid(format!("unknown category {category_id}")));
                    }
                    if rect.height == 0
                        || rect.width == 0
                        || rect.y + rect.height > self.height
                        || rect.x + rect.width > self.width
                    {
                        return Err(invalid("spurious rectangle is empty or leaves the canvas"));
                    }
                    if let Some(f) = frames.iter().find(|&&f| f >= self.frames) {
                        return Err(invalid(format!("spurious frame {f} is past the end")));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_thing_category(&self, id: u32) -> Result<()> {
        match self.categories.is_thing(id) {
            Some(true) => Ok(()),
            Some(false) => Err(invalid(format!("category {id} is not a thing category"))),
            None => Err(invalid(format!("unknown category {id}"))),
        }
    }

    /// A random valid scene within `limits`, including random
    /// perturbations. Pure function of `seed`.
    pub fn random(seed: u64, limits: &RandomLimits) -> ScenarioSpec {
        let mut rng = SplitMix64::new(seed);
        let categories = random_categories(&mut rng, limits.max_classes);
        Self::random_scene(&mut rng, seed, limits, categories)
    }

    /// Like [`ScenarioSpec::random`] but over a fixed category table, so
    /// several scenes can form one dataset.
    pub fn random_with_categories(
        seed: u64,
        limits: &RandomLimits,
        categories: &CategoryTable,
    ) -> ScenarioSpec {
        let mut rng = SplitMix64::new(seed);
        Self::random_scene(&mut rng, seed, limits, categories.clone())
    }

    fn random_scene(
        rng: &mut SplitMix64,
        seed: u64,
        limits: &RandomLimits,
        categories: CategoryTable,
    ) -> ScenarioSpec {
        let height = rng.range(1, limits.max_height as u64) as usize;
        let width = rng.range(1, limits.max_width as u64) as usize;
        let frames = rng.range(1, limits.max_frames as u64) as usize;
        let all: Vec<u32> = categories.ids().collect();
        let stuff: Vec<u32> = categories.stuff_ids().collect();
        let thing_cats: Vec<u32> = categories.thing_ids().collect();

        let mut bands = Vec::new();
        let mut rows = 0;
        while rows < height && !stuff.is_empty() {
            let h = rng.range(1, (height - rows) as u64) as usize;
            if rng.chance(0.1) {
                break;
            }
            let category_id = stuff[rng.below(stuff.len() as u64) as usize];
            bands.push(Band { category_id, height: h });
            rows += h;
        }

        let mut things = Vec::new();
        if !thing_cats.is_empty() {
            let n = rng.range(0, limits.max_instances as u64) as u32;
            for i in 0..n {
                let h = rng.range(1, height as u64) as usize;
                let w = rng.range(1, width as u64) as usize;
                let mut y = rng.range(0, (height - h) as u64) as i64;
                let mut x = rng.range(0, (width - w) as u64) as i64;
                let positions = (0..frames)
                    .map(|_| {
                        y = (y + rng.range(0, 2) as i64 - 1).clamp(0, (height - h) as i64);
                        x = (x + rng.range(0, 2) as i64 - 1).clamp(0, (width - w) as i64);
                        (!rng.chance(0.15)).then_some([y as usize, x as usize])
                    })
                    .collect();
                things.push(Thing {
                    track_id: 100 + i,
                    category_id: thing_cats[rng.below(thing_cats.len() as u64) as usize],
                    height: h,
                    width: w,
                    positions,
                });
            }
        }

        let mut perturbations = Vec::new();
        let n_pert = rng.range(0, limits.max_perturbations as u64);
        for _ in 0..n_pert {
            let track = |rng: &mut SplitMix64| things[rng.below(things.len() as u64) as usize].track_id;
            let kind = if things.is_empty() { 4 } else { rng.below(5) };
            let p = match kind {
                0 => Perturbation::IdSwitch {
                    frame: rng.below(frames as u64) as usize,
                    track: track(rng),
                },
                1 => Perturbation::Erode {
                    radius: rng.range(1, 2) as usize,
                    target: if rng.chance(0.5) {
                        ErodeTarget::All
                    } else {
                        ErodeTarget::Track(track(rng))
                    },
                },
                2 => Perturbation::ClassFlip {
                    track: track(rng),
                    new_category: thing_cats[rng.below(thing_cats.len() as u64) as usize],
                },
                3 => Perturbation::Drop {
                    track: track(rng),
                },
                _ => {
                    let rh = rng.range(1, height as u64) as usize;
                    let rw = rng.range(1, width as u64) as usize;
                    Perturbation::Spurious {
                        rect: Rect {
                            y: rng.range(0, (height - rh) as u64) as usize,
                            x: rng.range(0, (width - rw) as u64) as usize,
                            height: rh,
                            width: rw,
                        },
                        category_id: all[rng.below(all.len() as u64) as usize],
                        frames: (0..frames).filter(|_| rng.chance(0.5)).collect(),
                    }
                }
            };
            perturbations.push(p);
        }

        ScenarioSpec {
            video_id: format!("synth{seed:016x}"),
            height,
            width,
            frames,
            seed,
            categories,
            bands,
            things,
            perturbations,
        }
    }
}

/// Between one and `max_classes` categories with ids `1..`, each a thing or
/// stuff class with equal odds.
pub fn random_categories(rng: &mut SplitMix64, max_classes: usize) -> CategoryTable {
    let n = rng.range(1, max_classes as u64) as u32;
    let cats: Vec<Category> = (1..=n)
        .map(|id| {
            if rng.chance(0.5) {
                Category::thing(id, format!("thing{id}"))
            } else {
                Category::stuff(id, format!("stuff{id}"))
            }
        })
        .collect();
    CategoryTable::new(cats).expect("generated ids are unique")
}

/// Per-track prediction state after applying perturbations.
#[derive(Debug, Clone)]
struct TrackPlan {
    category_id: u32,
    /// Segment id per frame.
    ids: Vec<u32>,
    erosion: usize,
    dropped: bool,
}

struct SpuriousPaint {
    rect: Rect,
    segment: u32,
    category_id: u32,
    frames: BTreeSet<usize>,
}

struct IdSource {
    rng: SplitMix64,
    used: BTreeSet<u32>,
}

impl IdSource {
    fn fresh(&mut self) -> u32 {
        loop {
            let id = self.rng.range(1, MAX_RGB_ID as u64) as u32;
            if self.used.insert(id) {
                return id;
            }
        }
    }
}

fn band_layer(spec: &ScenarioSpec) -> Vec<u32> {
    let mut rows = Vec::with_capacity(spec.height);
    for b in &spec.bands {
        rows.extend(std::iter::repeat_n(b.category_id, b.height));
    }
    rows.resize(spec.height, VOID);
    rows
}

fn render(
    spec: &ScenarioSpec,
    plans: &[TrackPlan],
    spurious: &[SpuriousPaint],
) -> Result<VideoPanopticSequence> {
    let rows = band_layer(spec);
    let mut segments = BTreeMap::new();
    let mut frames = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let mut ids: Vec<u32> = rows
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, spec.width))
            .collect();
        for (thing, plan) in spec.things.iter().zip(plans) {
            if plan.dropped {
                continue;
            }
            let Some([y, x]) = thing.positions[f] else {
                continue;
            };
            let full = Rect {
                y,
                x,
                height: thing.height,
                width: thing.width,
            };
            let Some(rect) = full.eroded(plan.erosion) else {
                continue;
            };
            paint(&mut ids, spec.width, &rect, plan.ids[f]);
            segments.insert(plan.ids[f], plan.category_id);
        }
        for s in spurious.iter().filter(|s| s.frames.contains(&f)) {
            paint(&mut ids, spec.width, &s.rect, s.segment);
            segments.insert(s.segment, s.category_id);
        }
        frames.push(IdRaster::new(spec.height, spec.width, ids)?);
    }
    for f in &frames {
        for &id in f.ids() {
            if id != VOID && !segments.contains_key(&id) {
                segments.insert(id, id);
            }
        }
    }
    VideoPanopticSequence::new(spec.video_id.clone(), frames, segments, &spec.categories)
}

fn paint(ids: &mut [u32], width: usize, rect: &Rect, id: u32) {
    for y in rect.y..rect.y + rect.height {
        ids[y * width + rect.x..y * width + rect.x + rect.width].fill(id);
    }
}

/// Renders the unperturbed scene as ground truth and the perturbed scene
/// as prediction.
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedPair> {
    spec.validate()?;
    let plans: Vec<TrackPlan> = spec
        .things
        .iter()
        .map(|t| TrackPlan {
            category_id: t.category_id,
            ids: vec![t.track_id; spec.frames],
            erosion: 0,
            dropped: false,
        })
        .collect();
    let gt = render(spec, &plans, &[])?;

    let mut used: BTreeSet<u32> = spec.categories.ids().collect();
    used.extend(spec.things.iter().map(|t| t.track_id));
    let mut ids = IdSource {
        rng: SplitMix64::new(spec.seed),
        used,
    };
    let index: BTreeMap<u32, usize> = spec
        .things
        .iter()
        .enumerate()
        .map(|(i, t)| (t.track_id, i))
        .collect();
    let mut plans = plans;
    let mut spurious = Vec::new();
    for p in &spec.perturbations {
        match p {
            Perturbation::IdSwitch { frame, track } => {
                let fresh = ids.fresh();
                plans[index[track]].ids[*frame..].fill(fresh);
            }
            Perturbation::Erode { radius, target } => match target {
                ErodeTarget::All => plans.iter_mut().for_each(|pl| pl.erosion += radius),
                ErodeTarget::Track(t) => plans[index[t]].erosion += radius,
            },
            Perturbation::ClassFlip {
                track,
                new_category,
            } => plans[index[track]].category_id = *new_category,
            Perturbation::Drop { track } => plans[index[track]].dropped = true,
            Perturbation::Spurious {
                rect,
                category_id,
                frames,
            } => {
                let segment = if spec.categories.is_thing(*category_id) == Some(true) {
                    ids.fresh()
                } else {
                    *category_id
                };
                spurious.push(SpuriousPaint {
                    rect: *rect,
                    segment,
                    category_id: *category_id,
                    frames: frames.iter().copied().collect(),
                });
            }
        }
    }
    let pred = render(spec, &plans, &spurious)?;
    Ok(GeneratedPair { gt, pred })
}
