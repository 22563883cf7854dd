//! Healing masks: zero out 256x256 regions at patch centers, each center
//! drawn independently with the configured probability.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::raster::Image;
use crate::data::PATCH_SIDE;

#[derive(Debug, Clone)]
pub struct MaskSpec {
    /// Per-center masking probability (the protocol uses 0.0, 0.1 or 0.3).
    pub probability: f64,
    pub seed: u64,
    /// Indices of centers that were masked, filled in by `apply_masks`.
    pub applied: Vec<usize>,
}

impl MaskSpec {
    pub fn new(probability: f64, seed: u64) -> Self {
        MaskSpec {
            probability,
            seed,
            applied: Vec::new(),
        }
    }
}

/// Zero a PATCH_SIDE x PATCH_SIDE region centered at each selected center.
/// Masking happens on the canvas, before any patch cropping of the
/// corrupted input. Returns the corrupted canvas and records which centers
/// fired in `spec.applied`.
pub fn apply_masks(canvas: &Image, centers: &[(i64, i64)], spec: &mut MaskSpec) -> Image {
    let mut out = canvas.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.applied.clear();
    let side = canvas.shape()[0] as i64;
    let half = PATCH_SIDE as i64 / 2;
    for (idx, &(cx, cy)) in centers.iter().enumerate() {
        let u: f64 = rng.random();
        if u >= spec.probability {
            continue;
        }
        spec.applied.push(idx);
        for y in (cy - half)..(cy - half + PATCH_SIDE as i64) {
            if y < 0 || y >= side {
                continue;
            }
            for x in (cx - half)..(cx - half + PATCH_SIDE as i64) {
                if x < 0 || x >= side {
                    continue;
                }
                out.data_mut()[(y as usize) * side as usize + x as usize] = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raster::blank_canvas;
    use crate::data::CANVAS_SIDE;

    fn inked_canvas() -> Image {
        let mut c = blank_canvas();
        for v in c.data_mut().iter_mut() {
            *v = 0.5;
        }
        c
    }

    #[test]
    fn probability_zero_changes_nothing() {
        let canvas = inked_canvas();
        let mut spec = MaskSpec::new(0.0, 42);
        let out = apply_masks(&canvas, &[(100, 100), (300, 300)], &mut spec);
        assert_eq!(out, canvas);
        assert!(spec.applied.is_empty());
    }

    #[test]
    fn probability_one_zeroes_all_regions() {
        let canvas = inked_canvas();
        let mut spec = MaskSpec::new(1.0, 42);
        let centers = [(320i64, 320i64)];
        let out = apply_masks(&canvas, &centers, &mut spec);
        assert_eq!(spec.applied, vec![0]);
        assert_eq!(out.at2(320, 320), 0.0);
        assert_eq!(out.at2(320 - 128, 320 - 128), 0.0);
        // Just outside the region: untouched.
        assert_eq!(out.at2(320, 320 + 129), 0.5);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let canvas = inked_canvas();
        let centers: Vec<(i64, i64)> = (0..10).map(|i| (50 + i * 60, 320)).collect();
        let mut s1 = MaskSpec::new(0.3, 7);
        let mut s2 = MaskSpec::new(0.3, 7);
        let a = apply_masks(&canvas, &centers, &mut s1);
        let b = apply_masks(&canvas, &centers, &mut s2);
        assert_eq!(a, b);
        assert_eq!(s1.applied, s2.applied);
    }

    #[test]
    fn masked_canvas_differs_only_inside_mask_regions() {
        let canvas = inked_canvas();
        let centers: Vec<(i64, i64)> = vec![(128, 128), (512, 512)];
        let mut spec = MaskSpec::new(1.0, 3);
        let out = apply_masks(&canvas, &centers, &mut spec);
        let half = PATCH_SIDE as i64 / 2;
        for y in 0..CANVAS_SIDE {
            for x in 0..CANVAS_SIDE {
                let inside = centers.iter().any(|&(cx, cy)| {
                    (x as i64) >= cx - half
                        && (x as i64) < cx - half + PATCH_SIDE as i64
                        && (y as i64) >= cy - half
                        && (y as i64) < cy - half + PATCH_SIDE as i64
                });
                if inside {
                    assert_eq!(out.at2(y, x), 0.0);
                } else {
                    assert_eq!(out.at2(y, x), canvas.at2(y, x));
                }
            }
        }
    }
}
