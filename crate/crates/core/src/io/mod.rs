// SPDX-License-Identifier: Apache-2.0

//! On-disk formats: panoptic PNG datasets, logit volumes and weight maps.
//!
//! Panoptic frames are 8-bit RGB PNGs whose pixel segment id is
//! `R + 256 * G + 65536 * B`; each video has a JSON sidecar listing its
//! segments. A dataset manifest ties videos, frames and the category file
//! together. Relative paths inside a manifest resolve against the
//! manifest's directory.

mod resize;
mod tensor;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    validate_sequence, CategoryTable, IdRaster, InstanceSequence, RawSequence, SemanticSequence,
    VideoPanopticSequence, Violation, VOID,
};

pub use resize::{resize_dims, ResizeShortSide};
pub use tensor::{
    read_logits, read_logits_checked, read_weights, write_logits, write_weights, Endianness,
    LogitVolume, Tensor, WeightMap, LOGIT_MAGIC, WEIGHT_MAGIC,
};

/// Largest id representable in a 24-bit RGB pixel.
pub const MAX_RGB_ID: u32 = (1 << 24) - 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CATEGORY_FILE: &str = "categories.json";
pub const SIDECAR_FILE: &str = "segments.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frame_raster_paths: Vec<PathBuf>,
    pub segments_sidecar_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub category_file: PathBuf,
    pub videos: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for v in &self.videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate video id '{}' in manifest",
                    v.video_id
                )));
            }
            if v.frame_raster_paths.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "video '{}' lists no frames",
                    v.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: DatasetManifest = read_json(path)?;
        m.validate().map_err(|e| Error::file(path, e.to_string()))?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarSegment {
    pub id: u32,
    pub category_id: u32,
}

/// Per-video JSON sidecar: `{"segments": [{"id": .., "category_id": ..}, ..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub segments: Vec<SidecarSegment>,
}

impl Sidecar {
    fn from_map(map: &BTreeMap<u32, u32>) -> Self {
        Sidecar {
            segments: map
                .iter()
                .map(|(&id, &category_id)| SidecarSegment { id, category_id })
                .collect(),
        }
    }

    fn into_map(self, path: &Path) -> Result<BTreeMap<u32, u32>> {
        let mut map = BTreeMap::new();
        for s in self.segments {
            if map.insert(s.id, s.category_id).is_some() {
                return Err(Error::file(path, format!("duplicate segment id {}", s.id)));
            }
        }
        Ok(map)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_categories(path: &Path) -> Result<CategoryTable> {
    read_json(path)
}

pub fn write_categories(path: &Path, cats: &CategoryTable) -> Result<()> {
    write_json(path, cats)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

/// Decodes one 8-bit RGB PNG into segment ids.
pub fn read_id_png(path: &Path) -> Result<IdRaster> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(f));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let malformed = |e: png::DecodingError| Error::file(path, format!("malformed PNG: {e}"));
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(Error::file(
            path,
            format!("expected 8-bit RGB PNG, found {color:?} at {depth:?}"),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::file(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(malformed)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut ids = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        ids.extend(
            row[..w * 3]
                .chunks_exact(3)
                .map(|px| px[0] as u32 | (px[1] as u32) << 8 | (px[2] as u32) << 16),
        );
    }
    IdRaster::new(h, w, ids).map_err(|e| Error::file(path, e.to_string()))
}

/// Encodes segment ids as an 8-bit RGB PNG.
pub fn write_id_png(path: &Path, raster: &IdRaster) -> Result<()> {
    if let Some(&bad) = raster.ids().iter().find(|&&id| id > MAX_RGB_ID) {
        return Err(Error::IdOutOfRange(bad));
    }
    let mut data = Vec::with_capacity(raster.len() * 3);
    for &id in raster.ids() {
        data.extend_from_slice(&[id as u8, (id >> 8) as u8, (id >> 16) as u8]);
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(f),
        raster.width() as u32,
        raster.height() as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::file(path, format!("PNG encode: {e}"));
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(&data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Loads one video of a manifest; `base` is the manifest's directory.
pub fn load_sequence(
    entry: &ManifestEntry,
    base: &Path,
    cats: &CategoryTable,
) -> Result<VideoPanopticSequence> {
    if entry.frame_raster_paths.is_empty() {
        return Err(Error::InvalidSequence(vec![Violation::NoFrames]));
    }
    let sidecar_path = resolve(base, &entry.segments_sidecar_path);
    let sidecar: Sidecar = read_json(&sidecar_path)?;
    let segments = sidecar.into_map(&sidecar_path)?;
    let paths: Vec<PathBuf> = entry
        .frame_raster_paths
        .iter()
        .map(|p| resolve(base, p))
        .collect();
    let frames = paths
        .iter()
        .map(|p| read_id_png(p))
        .collect::<Result<Vec<_>>>()?;
    let raw = RawSequence {
        video_id: entry.video_id.clone(),
        frames,
        segments,
    };
    if let Err(violations) = validate_sequence(&raw, cats) {
        let first = &violations[0];
        let path = match first {
            Violation::UnmappedId { frame, .. } | Violation::FrameDimensions { frame, .. } => {
                paths[*frame].clone()
            }
            _ => sidecar_path,
        };
        let mut message = first.to_string();
        if violations.len() > 1 {
            message.push_str(&format!(" (and {} more)", violations.len() - 1));
        }
        return Err(Error::File { path, message });
    }
    VideoPanopticSequence::from_raw(raw, cats)
}

fn check_video_dir_name(video_id: &str) -> Result<()> {
    let mut comps = Path::new(video_id).components();
    match (comps.next(), comps.next()) {
        (Some(Component::Normal(_)), None) => Ok(()),
        _ => Err(Error::InvalidArgument(format!(
            "video id '{video_id}' is not usable as a directory name"
        ))),
    }
}

fn save_frames(
    video_id: &str,
    frames: &[IdRaster],
    segments: &BTreeMap<u32, u32>,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    check_video_dir_name(video_id)?;
    for &id in segments.keys() {
        if id > MAX_RGB_ID {
            return Err(Error::IdOutOfRange(id));
        }
    }
    for r in frames {
        if let Some(&bad) = r.ids().iter().find(|&&id| id > MAX_RGB_ID) {
            return Err(Error::IdOutOfRange(bad));
        }
    }
    let dir = out_dir.join(video_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = PathBuf::from(video_id);
    let mut frame_raster_paths = Vec::with_capacity(frames.len());
    for (t, r) in frames.iter().enumerate() {
        let name = format!("{t:05}.png");
        write_id_png(&dir.join(&name), r)?;
        frame_raster_paths.push(rel.join(name));
    }
    write_json(&dir.join(SIDECAR_FILE), &Sidecar::from_map(segments))?;
    Ok(ManifestEntry {
        video_id: video_id.to_owned(),
        frame_raster_paths,
        segments_sidecar_path: rel.join(SIDECAR_FILE),
    })
}

/// Writes frames and sidecar under `out_dir/<video_id>/`. Paths in the
/// returned entry are relative to `out_dir`.
pub fn save_sequence(seq: &VideoPanopticSequence, out_dir: &Path) -> Result<ManifestEntry> {
    save_frames(seq.video_id(), seq.frames(), seq.segments(), out_dir)
}

/// Semantic frames are stored as a panoptic sequence with one segment per
/// category (segment id = category id), so they load back with
/// [`load_sequence`].
pub fn save_semantic(seq: &SemanticSequence, out_dir: &Path) -> Result<ManifestEntry> {
    let mut present = BTreeMap::new();
    for r in seq.frames() {
        for &c in r.ids() {
            if c != VOID {
                present.insert(c, c);
            }
        }
    }
    save_frames(seq.video_id(), seq.frames(), &present, out_dir)
}

pub fn save_instance(seq: &InstanceSequence, out_dir: &Path) -> Result<ManifestEntry> {
    save_frames(seq.video_id(), seq.frames(), seq.instances(), out_dir)
}

/// A manifest together with its category table and loaded videos, in
/// manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub categories: CategoryTable,
    pub sequences: Vec<VideoPanopticSequence>,
}

/// Loads every video of a manifest; videos are decoded concurrently.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let categories = read_categories(&resolve(base, &manifest.category_file))?;
    let sequences = manifest
        .videos
        .par_iter()
        .map(|entry| load_sequence(entry, base, &categories))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest,
        categories,
        sequences,
    })
}

/// A video id with the result of loading that video.
pub type VideoOutcome = (String, Result<VideoPanopticSequence>);

/// Loads every video independently and returns each outcome, so that a
/// single bad video does not hide problems in the others.
pub fn check_dataset(
    manifest_path: &Path,
) -> Result<(CategoryTable, Vec<VideoOutcome>)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let categories = read_categories(&resolve(base, &manifest.category_file))?;
    let outcomes = manifest
        .videos
        .par_iter()
        .map(|entry| {
            (
                entry.video_id.clone(),
                load_sequence(entry, base, &categories),
            )
        })
        .collect();
    Ok((categories, outcomes))
}

fn finish_dataset(
    name: &str,
    cats: &CategoryTable,
    videos: Vec<ManifestEntry>,
    out_dir: &Path,
) -> Result<PathBuf> {
    write_categories(&out_dir.join(CATEGORY_FILE), cats)?;
    let manifest = DatasetManifest {
        dataset_name: name.to_owned(),
        category_file: PathBuf::from(CATEGORY_FILE),
        videos,
    };
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}

/// Writes a complete dataset (frames, sidecars, categories, manifest) and
/// returns the manifest path.
pub fn save_dataset(
    name: &str,
    cats: &CategoryTable,
    sequences: &[VideoPanopticSequence],
    out_dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos = sequences
        .iter()
        .map(|s| save_sequence(s, out_dir))
        .collect::<Result<Vec<_>>>()?;
    finish_dataset(name, cats, videos, out_dir)
}

pub fn save_semantic_dataset(
    name: &str,
    cats: &CategoryTable,
    sequences: &[SemanticSequence],
    out_dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos = sequences
        .iter()
        .map(|s| save_semantic(s, out_dir))
        .collect::<Result<Vec<_>>>()?;
    finish_dataset(name, cats, videos, out_dir)
}

pub fn save_instance_dataset(
    name: &str,
    cats: &CategoryTable,
    sequences: &[InstanceSequence],
    out_dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos = sequences
        .iter()
        .map(|s| save_instance(s, out_dir))
        .collect::<Result<Vec<_>>>()?;
    finish_dataset(name, cats, videos, out_dir)
}
