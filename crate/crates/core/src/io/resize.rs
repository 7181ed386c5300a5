// SPDX-License-Identifier: Apache-2.0

use crate::types::{IdRaster, SemanticSequence, VideoPanopticSequence};

/// Output (height, width) when the short side is scaled to `target`.
///
/// The long side is `round(long * target / short)` (halves round up),
/// clamped to at least 1.
pub fn resize_dims(height: usize, width: usize, target: usize) -> (usize, usize) {
    assert!(target >= 1, "resize target must be at least 1");
    let scale = |long: usize, short: usize| -> usize {
        let num = 2 * long as u128 * target as u128 + short as u128;
        ((num / (2 * short as u128)) as usize).max(1)
    };
    if height <= width {
        (target, scale(width, height))
    } else {
        (scale(height, width), target)
    }
}

/// Nearest-neighbour source index for pixel-centre sampling.
fn source_index(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let s = ((2 * dst as u128 + 1) * src_len as u128) / (2 * dst_len as u128);
    (s as usize).min(src_len - 1)
}

/// Short-side resizing with nearest-neighbour sampling; never invents ids.
pub trait ResizeShortSide: Sized {
    fn resize_short_side(&self, target: usize) -> Self;
}

impl ResizeShortSide for IdRaster {
    fn resize_short_side(&self, target: usize) -> Self {
        let (h, w) = resize_dims(self.height(), self.width(), target);
        if (h, w) == self.dims() {
            return self.clone();
        }
        let cols: Vec<usize> = (0..w).map(|x| source_index(x, w, self.width())).collect();
        let mut ids = Vec::with_capacity(h * w);
        for y in 0..h {
            let sy = source_index(y, h, self.height());
            let row = &self.ids()[sy * self.width()..(sy + 1) * self.width()];
            ids.extend(cols.iter().map(|&sx| row[sx]));
        }
        IdRaster::new(h, w, ids).expect("resized dimensions are positive")
    }
}

impl ResizeShortSide for VideoPanopticSequence {
    fn resize_short_side(&self, target: usize) -> Self {
        let frames: Vec<IdRaster> = self
            .frames()
            .iter()
            .map(|f| f.resize_short_side(target))
            .collect();
        // Resampling only drops ids, so every invariant still holds.
        let raw = crate::types::RawSequence {
            video_id: self.video_id().to_owned(),
            frames,
            segments: self.segments().clone(),
        };
        VideoPanopticSequence::from_raw_unchecked(raw)
    }
}

impl ResizeShortSide for SemanticSequence {
    fn resize_short_side(&self, target: usize) -> Self {
        let frames = self
            .frames()
            .iter()
            .map(|f| f.resize_short_side(target))
            .collect();
        SemanticSequence::from_parts_unchecked(self.video_id().to_owned(), frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hd_to_720p() {
        assert_eq!(resize_dims(1080, 1920, 720), (720, 1280));
        assert_eq!(resize_dims(1920, 1080, 720), (1280, 720));
    }

    #[test]
    fn identity_when_already_at_target() {
        let r = IdRaster::from_fn(720, 1280, |y, x| ((y * 7 + x) % 13) as u32).unwrap();
        assert_eq!(r.resize_short_side(720), r);
    }

    #[test]
    fn constant_field_stays_constant() {
        let r = IdRaster::filled(4, 6, 7).unwrap();
        let out = r.resize_short_side(2);
        assert_eq!(out.dims(), (2, 3));
        assert!(out.ids().iter().all(|&v| v == 7));
    }

    #[test]
    fn long_side_is_clamped_to_one() {
        assert_eq!(resize_dims(1000, 1, 1), (1000, 1));
        assert_eq!(resize_dims(1, 1000, 1), (1, 1000));
        assert_eq!(resize_dims(100, 1, 1), (100, 1));
        assert_eq!(resize_dims(3, 1000, 1), (1, 333));
    }

    #[test]
    fn downsample_by_two_picks_pixel_centres() {
        let r = IdRaster::from_fn(4, 4, |y, x| (y * 4 + x) as u32).unwrap();
        let out = r.resize_short_side(2);
        assert_eq!(out.ids(), &[5, 7, 13, 15]);
    }

    proptest! {
        #[test]
        fn resize_never_introduces_ids(
            h in 1usize..12, w in 1usize..12, target in 1usize..20,
            seed in proptest::collection::vec(0u32..5, 144),
        ) {
            let r = IdRaster::from_fn(h, w, |y, x| seed[y * 12 + x]).unwrap();
            let out = r.resize_short_side(target);
            if h <= w {
                prop_assert_eq!(out.height(), target);
            } else {
                prop_assert_eq!(out.width(), target);
            }
            let src: std::collections::BTreeSet<u32> = r.ids().iter().copied().collect();
            prop_assert!(out.ids().iter().all(|v| src.contains(v)));
            let (eh, ew) = resize_dims(h, w, target);
            prop_assert_eq!(out.dims(), (eh, ew));
        }
    }
}
